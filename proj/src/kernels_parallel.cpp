#include <algorithm>
#include <vector>

#ifdef DQF_HAVE_OPENMP
#include <omp.h>
#endif

#include "dqf/kernels.hpp"
#include "kernels_common.hpp"

namespace dqf::kernels {

int thread_count() {
#ifdef DQF_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace parallel {
namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kMinParallelWork = 1 << 15;

constexpr std::size_t kColumnBlock = 64;

bool worth_it(std::size_t work) { return work >= kMinParallelWork && thread_count() > 1; }

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t work = m * k * n;
    if (!worth_it(work)) {
        detail::gemm_nn_block(a.data(), b.data(), c.data(), k, n, 0, m, 0, n);
        return;
    }
    const auto threads = static_cast<std::size_t>(thread_count());
    if (m >= 2 * threads) {
        const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i)
            detail::gemm_nn_block(a.data(), b.data(), c.data(), k, n, static_cast<std::size_t>(i),
                                  static_cast<std::size_t>(i) + 1, 0, n);
    } else {
        // Few rows (e.g. a single hypernetwork row): split the columns instead.
        const auto blocks = static_cast<std::ptrdiff_t>((n + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
            const std::size_t c0 = static_cast<std::size_t>(blk) * kColumnBlock;
            detail::gemm_nn_block(a.data(), b.data(), c.data(), k, n, 0, m, c0,
                                  std::min(n, c0 + kColumnBlock));
        }
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (m < detail::kDotRows) {
        if (!worth_it(m * k * n)) {
            detail::gemm_nt_dot_block(a.data(), b.data(), c.data(), k, n, 0, m, 0, n);
            return;
        }
        const auto blocks = static_cast<std::ptrdiff_t>((n + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
            const std::size_t c0 = static_cast<std::size_t>(blk) * kColumnBlock;
            detail::gemm_nt_dot_block(a.data(), b.data(), c.data(), k, n, 0, m, c0, std::min(n, c0 + kColumnBlock));
        }
        return;
    }
    std::vector<double> bt(k * n);
    detail::transpose(b.data(), bt.data(), n, k);
    gemm_nn(a, bt, c, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (!worth_it(m * k * n)) {
        detail::gemm_tn_block(a.data(), b.data(), c.data(), m, k, n, 0, k);
        return;
    }
    const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t kk = 0; kk < rows; ++kk)
        detail::gemm_tn_block(a.data(), b.data(), c.data(), m, k, n, static_cast<std::size_t>(kk),
                              static_cast<std::size_t>(kk) + 1);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<const double> dropout_scale, std::span<double> out,
                       std::span<double> probs) {
    const double* ds = dropout_scale.empty() ? nullptr : dropout_scale.data();
    const auto tasks = static_cast<std::ptrdiff_t>(s.batch * s.heads);
    const bool par = worth_it(s.batch * s.heads * s.seq * s.seq * s.head_dim);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t task = 0; task < tasks; ++task) {
        const auto b = static_cast<std::size_t>(task) / s.heads;
        const auto h = static_cast<std::size_t>(task) % s.heads;
        detail::attention_forward_task(s, q.data(), k.data(), v.data(), ds, out.data(),
                                       probs.data(), b, h);
    }
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dropout_scale,
                        std::span<const double> gout, std::span<double> gq, std::span<double> gk,
                        std::span<double> gv) {
    const double* ds = dropout_scale.empty() ? nullptr : dropout_scale.data();
    const auto tasks = static_cast<std::ptrdiff_t>(s.batch * s.heads);
    const bool par = worth_it(s.batch * s.heads * s.seq * s.seq * s.head_dim);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t task = 0; task < tasks; ++task) {
        const auto b = static_cast<std::size_t>(task) / s.heads;
        const auto h = static_cast<std::size_t>(task) % s.heads;
        detail::attention_backward_task(s, q.data(), k.data(), v.data(), probs.data(), ds,
                                        gout.data(), gq.data(), gk.data(), gv.data(), b, h);
    }
}

}  // namespace parallel
}  // namespace dqf::kernels
