#pragma once

// Dense inner loops used by the autodiff ops. Every kernel exists twice: a
// plain serial reference and an OpenMP version. The parallel versions split
// work over independent output elements only and keep each element's
// reduction order identical to the serial loop, so both produce bitwise
// identical results for any thread count.

#include <cstddef>
#include <span>

namespace dqf::kernels {

// Geometry of a fused multi-head attention call. q, k, v and the output are
// laid out as [batch * seq, heads * head_dim]; attention probabilities as
// [batch, heads, seq, seq] with masked entries stored as exact zeros.
struct AttentionShape {
    std::size_t batch = 1;
    std::size_t seq = 1;
    std::size_t heads = 1;
    std::size_t head_dim = 1;
    bool causal = true;
    double scale = 1.0;

    std::size_t width() const { return heads * head_dim; }
    std::size_t rows() const { return batch * seq; }
    std::size_t prob_count() const { return batch * heads * seq * seq; }
};

#define DQF_KERNEL_DECLS                                                                       \
    /* c[m,n] = a[m,k] * b[k,n] */                                                             \
    void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,     \
                 std::size_t m, std::size_t k, std::size_t n);                                  \
    /* c[m,n] = a[m,k] * b[n,k]^T */                                                           \
    void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,     \
                 std::size_t m, std::size_t k, std::size_t n);                                  \
    /* c[k,n] = a[m,k]^T * b[m,n] */                                                           \
    void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,     \
                 std::size_t m, std::size_t k, std::size_t n);                                  \
    /* dropout_scale is empty or holds one multiplier per probability */                       \
    void attention_forward(const AttentionShape& s, std::span<const double> q,                 \
                           std::span<const double> k, std::span<const double> v,               \
                           std::span<const double> dropout_scale, std::span<double> out,       \
                           std::span<double> probs);                                           \
    /* gq, gk, gv are overwritten */                                                           \
    void attention_backward(const AttentionShape& s, std::span<const double> q,                \
                            std::span<const double> k, std::span<const double> v,              \
                            std::span<const double> probs, std::span<const double> dropout_scale, \
                            std::span<const double> gout, std::span<double> gq,                \
                            std::span<double> gk, std::span<double> gv);

namespace serial {
DQF_KERNEL_DECLS
}  // namespace serial

namespace parallel {
DQF_KERNEL_DECLS
}  // namespace parallel

#undef DQF_KERNEL_DECLS

// Number of threads the parallel kernels will use (1 without OpenMP).
int thread_count();

// The dispatching entry points used by the library.
using parallel::attention_backward;
using parallel::attention_forward;
using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;

}  // namespace dqf::kernels
