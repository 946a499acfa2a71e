#pragma once

// Per-task bodies shared by the serial and OpenMP kernels. Keeping a single
// body is what guarantees the two variants agree bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dqf/kernels.hpp"

namespace dqf::kernels::detail {

// Rows [r0, r1) and columns [c0, c1) of c = a * b.
inline void gemm_nn_block(const double* a, const double* b, double* c, std::size_t k,
                          std::size_t n, std::size_t r0, std::size_t r1, std::size_t c0,
                          std::size_t c1) {
    for (std::size_t i = r0; i < r1; ++i) {
        double* crow = c + i * n;
        std::fill(crow + c0, crow + c1, 0.0);
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = c0; j < c1; ++j) crow[j] += av * brow[j];
        }
    }
}

// Output rows [k0, k1) of c = a^T * b, with a [m,k] and b [m,n].
inline void gemm_tn_block(const double* a, const double* b, double* c, std::size_t m,
                          std::size_t k, std::size_t n, std::size_t k0, std::size_t k1) {
    std::fill(c + k0 * n, c + k1 * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
            const double av = arow[kk];
            double* crow = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Rows [r0, r1) and columns [c0, c1) of c = a * b^T with b [n,k], one dot
// product per entry. Same summation order as gemm_nn_block.
inline void gemm_nt_dot_block(const double* a, const double* b, double* c, std::size_t k,
                              std::size_t n, std::size_t r0, std::size_t r1, std::size_t c0,
                              std::size_t c1) {
    for (std::size_t i = r0; i < r1; ++i) {
        const double* arow = a + i * k;
        std::size_t j = c0;
        for (; j + 4 <= c1; j += 4) {
            const double *b0 = b + j * k, *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            c[i * n + j] = s0;
            c[i * n + j + 1] = s1;
            c[i * n + j + 2] = s2;
            c[i * n + j + 3] = s3;
        }
        for (; j < c1; ++j) {
            double s0 = 0.0;
            const double* bj = b + j * k;
            for (std::size_t p = 0; p < k; ++p) s0 += arow[p] * bj[p];
            c[i * n + j] = s0;
        }
    }
}

// Below this many rows gemm_nt skips the transpose and uses dot products.
inline constexpr std::size_t kDotRows = 16;

inline void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t e = 0; e < n; ++e) s += x[e] * y[e];
    return s;
}

inline void attention_forward_task(const AttentionShape& s, const double* q, const double* k,
                                   const double* v, const double* ds, double* out, double* probs,
                                   std::size_t b, std::size_t h) {
    const std::size_t n = s.seq, dh = s.head_dim, w = s.width();
    const std::size_t off = h * dh;
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t jmax = s.causal ? i + 1 : n;
        const double* qi = q + (b * n + i) * w + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < jmax; ++j) {
            row[j] = s.scale * dot(qi, k + (b * n + j) * w + off, dh);
            mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        double* prow = probs + ((b * s.heads + h) * n + i) * n;
        const double* dsrow = ds ? ds + ((b * s.heads + h) * n + i) * n : nullptr;
        for (std::size_t j = 0; j < jmax; ++j) prow[j] = row[j] / sum;
        for (std::size_t j = jmax; j < n; ++j) prow[j] = 0.0;
        double* oi = out + (b * n + i) * w + off;
        std::fill(oi, oi + dh, 0.0);
        for (std::size_t j = 0; j < jmax; ++j) {
            const double pj = dsrow ? prow[j] * dsrow[j] : prow[j];
            const double* vj = v + (b * n + j) * w + off;
            for (std::size_t e = 0; e < dh; ++e) oi[e] += pj * vj[e];
        }
    }
}

inline void attention_backward_task(const AttentionShape& s, const double* q, const double* k,
                                    const double* v, const double* probs, const double* ds,
                                    const double* gout, double* gq, double* gk, double* gv,
                                    std::size_t b, std::size_t h) {
    const std::size_t n = s.seq, dh = s.head_dim, w = s.width();
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(gq + (b * n + i) * w + off, gq + (b * n + i) * w + off + dh, 0.0);
        std::fill(gk + (b * n + i) * w + off, gk + (b * n + i) * w + off + dh, 0.0);
        std::fill(gv + (b * n + i) * w + off, gv + (b * n + i) * w + off + dh, 0.0);
    }
    std::vector<double> gp(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t jmax = s.causal ? i + 1 : n;
        const double* prow = probs + ((b * s.heads + h) * n + i) * n;
        const double* dsrow = ds ? ds + ((b * s.heads + h) * n + i) * n : nullptr;
        const double* go = gout + (b * n + i) * w + off;
        for (std::size_t j = 0; j < jmax; ++j) {
            const double* vj = v + (b * n + j) * w + off;
            const double scale_j = dsrow ? dsrow[j] : 1.0;
            gp[j] = dot(go, vj, dh) * scale_j;
            const double pj = prow[j] * scale_j;
            double* gvj = gv + (b * n + j) * w + off;
            for (std::size_t e = 0; e < dh; ++e) gvj[e] += pj * go[e];
        }
        double pg = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) pg += prow[j] * gp[j];
        const double* qi = q + (b * n + i) * w + off;
        double* gqi = gq + (b * n + i) * w + off;
        for (std::size_t j = 0; j < jmax; ++j) {
            const double gs = s.scale * prow[j] * (gp[j] - pg);
            const double* kj = k + (b * n + j) * w + off;
            double* gkj = gk + (b * n + j) * w + off;
            for (std::size_t e = 0; e < dh; ++e) {
                gqi[e] += gs * kj[e];
                gkj[e] += gs * qi[e];
            }
        }
    }
}

}  // namespace dqf::kernels::detail
