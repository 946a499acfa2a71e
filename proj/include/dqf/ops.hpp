#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dqf/kernels.hpp"
#include "dqf/tensor.hpp"

namespace dqf::ad {

// Elementwise arithmetic on equally-shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a + s * b
Tensor axpy(const Tensor& a, double s, const Tensor& b);
// Adds a vector of length cols() to every row.
Tensor add_rowvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [m,k] * w[n,k]^T (+ bias[n]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);
Tensor reshape(const Tensor& a, Shape shape);
// Rows [r0, r1) of a tensor viewed as [rows(), cols()].
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);

// GeLU with the exact Gaussian CDF, x * Phi(x).
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
double gelu_value(double x);
double gelu_derivative(double x);

// Standardizes each row over the last axis, then applies gain and bias.
Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps);

// Boolean keep-mask whose shape is a suffix of the masked tensor's shape.
struct Mask {
    Shape shape;
    std::vector<std::uint8_t> keep;
};
Mask causal_mask(std::size_t n);

// Softmax over the last axis; masked entries are exactly zero.
Tensor softmax_lastdim(const Tensor& a, const Mask* mask = nullptr);

// Fused multi-head attention. q, k, v: [batch*seq, heads*head_dim].
// `dropout_scale` (optional) holds one multiplier per probability.
struct AttentionResult {
    Tensor out;
    std::vector<double> probs;  // [batch, heads, seq, seq]
};
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const kernels::AttentionShape& shape,
                          std::span<const double> dropout_scale = {});

// Rows of `table` selected by ids.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_squares(const Tensor& a);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);
std::vector<double> dropout_scales(std::size_t n, double rate, std::mt19937_64& rng);

}  // namespace dqf::ad
