#include <vector>

#include "dqf/kernels.hpp"
#include "kernels_common.hpp"

namespace dqf::kernels::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    detail::gemm_nn_block(a.data(), b.data(), c.data(), k, n, 0, m, 0, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (m < detail::kDotRows) {
        detail::gemm_nt_dot_block(a.data(), b.data(), c.data(), k, n, 0, m, 0, n);
        return;
    }
    std::vector<double> bt(k * n);
    detail::transpose(b.data(), bt.data(), n, k);
    detail::gemm_nn_block(a.data(), bt.data(), c.data(), k, n, 0, m, 0, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    detail::gemm_tn_block(a.data(), b.data(), c.data(), m, k, n, 0, k);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<const double> dropout_scale, std::span<double> out,
                       std::span<double> probs) {
    const double* ds = dropout_scale.empty() ? nullptr : dropout_scale.data();
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
            detail::attention_forward_task(s, q.data(), k.data(), v.data(), ds, out.data(),
                                           probs.data(), b, h);
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dropout_scale,
                        std::span<const double> gout, std::span<double> gq, std::span<double> gk,
                        std::span<double> gv) {
    const double* ds = dropout_scale.empty() ? nullptr : dropout_scale.data();
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
            detail::attention_backward_task(s, q.data(), k.data(), v.data(), probs.data(), ds,
                                            gout.data(), gq.data(), gk.data(), gv.data(), b, h);
}

}  // namespace dqf::kernels::serial
