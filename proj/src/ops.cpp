#include "dqf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dqf/error.hpp"

namespace dqf::ad {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

// Adds src into dst's gradient if dst takes part in differentiation.
void accumulate(const std::shared_ptr<Node>& dst, std::span<const double> src) {
    if (!dst->requires_grad) return;
    auto& g = dst->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](Node* o) {
        return [an, bn, o] {
            accumulate(an, o->grad);
            accumulate(bn, o->grad);
        };
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](Node* o) {
        return [an, bn, o] {
            accumulate(an, o->grad);
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
            }
        };
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](Node* o) {
        return [an, bn, o] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * an->value[i];
            }
        };
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return make_result(a.shape(), std::move(out), {&a}, [an = a.node(), s](Node* o) {
        return [an, s, o] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * s;
        };
    });
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s * b[i];
    return make_result(a.shape(), std::move(out), {&a, &b},
                       [an = a.node(), bn = b.node(), s](Node* o) {
                           return [an, bn, s, o] {
                               accumulate(an, o->grad);
                               if (bn->requires_grad) {
                                   auto& g = bn->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o->grad[i];
                               }
                           };
                       });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    const std::size_t c = a.cols(), r = a.rows();
    if (v.size() != c)
        throw DimensionError("add_rowvec: vector of " + std::to_string(v.size()) + " for rows of " +
                             std::to_string(c));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] + v[j];
    return make_result(a.shape(), std::move(out), {&a, &v}, [an = a.node(), vn = v.node(), r, c](Node* o) {
        return [an, vn, r, c, o] {
            accumulate(an, o->grad);
            if (vn->requires_grad) {
                auto& g = vn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += o->grad[i * c + j];
            }
        };
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
    if (b.shape()[0] != k)
        throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " * " +
                             shape_string(b.shape()));
    std::vector<double> out(m * p);
    kernels::gemm_nn(a.data(), b.data(), out, m, k, p);
    return make_result({m, p}, std::move(out), {&a, &b}, [an = a.node(), bn = b.node(), m, k, p](Node* o) {
        return [an, bn, m, k, p, o] {
            if (an->requires_grad) {
                std::vector<double> ga(m * k);
                kernels::gemm_nt(o->grad, bn->value, ga, m, p, k);
                accumulate(an, ga);
            }
            if (bn->requires_grad) {
                std::vector<double> gb(k * p);
                kernels::gemm_tn(an->value, o->grad, gb, m, k, p);
                accumulate(bn, gb);
            }
        };
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return make_result({c, r}, std::move(out), {&a}, [an = a.node(), r, c](Node* o) {
        return [an, r, c, o] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o->grad[j * r + i];
        };
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    require_rank2(w, "linear");
    const std::size_t m = x.rows(), k = x.cols(), n = w.shape()[0];
    if (w.shape()[1] != k)
        throw DimensionError("linear: input width " + std::to_string(k) + " vs weight " +
                             shape_string(w.shape()));
    if (bias && bias->size() != n)
        throw DimensionError("linear: bias of " + std::to_string(bias->size()) + " for " +
                             std::to_string(n) + " outputs");
    std::vector<double> out(m * n);
    kernels::gemm_nt(x.data(), w.data(), out, m, k, n);
    if (bias)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += (*bias)[j];
    Shape shape = x.shape();
    shape.back() = n;
    std::shared_ptr<Node> bn = bias ? bias->node() : nullptr;
    const Tensor none;
    return make_result(std::move(shape), std::move(out), {&x, &w, bias ? bias : &none},
                       [xn = x.node(), wn = w.node(), bn, m, k, n](Node* o) {
                           return [xn, wn, bn, m, k, n, o] {
                               if (xn->requires_grad) {
                                   std::vector<double> gx(m * k);
                                   kernels::gemm_nn(o->grad, wn->value, gx, m, n, k);
                                   accumulate(xn, gx);
                               }
                               if (wn->requires_grad) {
                                   std::vector<double> gw(n * k);
                                   kernels::gemm_tn(o->grad, xn->value, gw, m, n, k);
                                   accumulate(wn, gw);
                               }
                               if (bn && bn->requires_grad) {
                                   auto& g = bn->ensure_grad();
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < n; ++j) g[j] += o->grad[i * n + j];
                               }
                           };
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (element_count(shape) != a.size())
        throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {&a}, [an = a.node()](Node* o) {
        return [an, o] { accumulate(an, o->grad); };
    });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    const std::size_t c = a.cols();
    if (r0 >= r1 || r1 > a.rows())
        throw DimensionError("slice_rows [" + std::to_string(r0) + ", " + std::to_string(r1) + ") of " +
                             shape_string(a.shape()));
    std::vector<double> out(a.data().begin() + r0 * c, a.data().begin() + r1 * c);
    return make_result({r1 - r0, c}, std::move(out), {&a}, [an = a.node(), r0, c](Node* o) {
        return [an, o, r0, c] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) g[r0 * c + i] += o->grad[i];
        };
    });
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a[i]);
    return make_result(a.shape(), std::move(out), {&a}, [an = a.node()](Node* o) {
        return [an, o] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * gelu_derivative(an->value[i]);
        };
    });
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sigmoid(a[i]);
    return make_result(a.shape(), std::move(out), {&a}, [an = a.node()](Node* o) {
        return [an, o] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = an->value[i], s = sigmoid(x);
                g[i] += o->grad[i] * s * (1.0 + x * (1.0 - s));
            }
        };
    });
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
    const std::size_t d = a.cols(), r = a.rows();
    if (gain.size() != d || bias.size() != d)
        throw DimensionError("layernorm: gain/bias must have " + std::to_string(d) + " entries");
    std::vector<double> xhat(a.size()), inv(r), out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.data().data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        inv[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (x[j] - mu) * inv[i];
            out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
        }
    }
    return make_result(a.shape(), std::move(out), {&a, &gain, &bias},
                       [an = a.node(), gn = gain.node(), bn = bias.node(), xhat = std::move(xhat),
                        inv = std::move(inv), r, d](Node* o) {
                           return [an, gn, bn, xhat, inv, r, d, o] {
                               const auto& go = o->grad;
                               if (gn->requires_grad) {
                                   auto& g = gn->ensure_grad();
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j] * xhat[i * d + j];
                               }
                               if (bn->requires_grad) {
                                   auto& g = bn->ensure_grad();
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j];
                               }
                               if (an->requires_grad) {
                                   auto& g = an->ensure_grad();
                                   const double dd = static_cast<double>(d);
                                   for (std::size_t i = 0; i < r; ++i) {
                                       double m1 = 0.0, m2 = 0.0;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           const double gx = go[i * d + j] * gn->value[j];
                                           m1 += gx;
                                           m2 += gx * xhat[i * d + j];
                                       }
                                       m1 /= dd;
                                       m2 /= dd;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           const double gx = go[i * d + j] * gn->value[j];
                                           g[i * d + j] += inv[i] * (gx - m1 - xhat[i * d + j] * m2);
                                       }
                                   }
                               }
                           };
                       });
}

Mask causal_mask(std::size_t n) {
    Mask m{{n, n}, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
    return m;
}

Tensor softmax_lastdim(const Tensor& a, const Mask* mask) {
    const std::size_t c = a.cols(), r = a.rows();
    std::size_t msize = 0;
    if (mask) {
        const auto& ms = mask->shape;
        const auto& as = a.shape();
        if (ms.size() > as.size() || !std::equal(ms.rbegin(), ms.rend(), as.rbegin()) ||
            mask->keep.size() != element_count(ms))
            throw DimensionError("softmax mask " + shape_string(ms) + " does not broadcast over " +
                                 shape_string(as));
        msize = mask->keep.size();
    }
    std::vector<double> out(a.size(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t base = i * c;
        auto kept = [&](std::size_t j) { return !mask || mask->keep[(base + j) % msize] != 0; };
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j)
            if (kept(j)) mx = std::max(mx, a[base + j]);
        if (mx == -INFINITY) throw DegenerateRowError("softmax row " + std::to_string(i) + " is fully masked");
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (kept(j)) {
                out[base + j] = std::exp(a[base + j] - mx);
                s += out[base + j];
            }
        for (std::size_t j = 0; j < c; ++j) out[base + j] /= s;
    }
    return make_result(a.shape(), std::move(out), {&a}, [an = a.node(), r, c](Node* o) {
        return [an, r, c, o] {
            auto& g = an->ensure_grad();
            const auto& y = o->value;
            const auto& go = o->grad;
            for (std::size_t i = 0; i < r; ++i) {
                double dotv = 0.0;
                for (std::size_t j = 0; j < c; ++j) dotv += y[i * c + j] * go[i * c + j];
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (go[i * c + j] - dotv);
            }
        };
    });
}

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const kernels::AttentionShape& shape,
                          std::span<const double> dropout_scale) {
    const std::size_t rows = shape.rows(), width = shape.width();
    for (const Tensor* t : {&q, &k, &v})
        if (t->rows() != rows || t->cols() != width)
            throw DimensionError("attention: expected [" + std::to_string(rows) + "x" +
                                 std::to_string(width) + "], got " + shape_string(t->shape()));
    if (!dropout_scale.empty() && dropout_scale.size() != shape.prob_count())
        throw DimensionError("attention: dropout scale count mismatch");
    AttentionResult res;
    res.probs.assign(shape.prob_count(), 0.0);
    std::vector<double> out(rows * width);
    kernels::attention_forward(shape, q.data(), k.data(), v.data(), dropout_scale, out, res.probs);
    std::vector<double> ds(dropout_scale.begin(), dropout_scale.end());
    res.out = make_result(
        {rows, width}, std::move(out), {&q, &k, &v},
        [qn = q.node(), kn = k.node(), vn = v.node(), shape, probs = res.probs, ds = std::move(ds)](Node* o) {
            return [qn, kn, vn, shape, probs, ds, o] {
                const std::size_t n = qn->value.size();
                std::vector<double> gq(n), gk(n), gv(n);
                kernels::attention_backward(shape, qn->value, kn->value, vn->value, probs, ds, o->grad,
                                            gq, gk, gv);
                accumulate(qn, gq);
                accumulate(kn, gk);
                accumulate(vn, gv);
            };
        });
    return res;
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
    require_rank2(table, "embedding");
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    if (ids.empty()) throw DimensionError("embedding: no ids");
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab)
            throw VocabError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                             std::to_string(vocab));
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {&table}, [tn = table.node(), idv = std::move(idv), d](Node* o) {
        return [tn, idv, d, o] {
            auto& g = tn->ensure_grad();
            for (std::size_t i = 0; i < idv.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) g[idv[i] * d + j] += o->grad[i * d + j];
        };
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    const std::size_t m = logits.rows(), vocab = logits.cols();
    if (targets.size() != m)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
    std::vector<double> probs(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (targets[i] >= vocab) throw VocabError("target id " + std::to_string(targets[i]) + " outside vocabulary");
        const double* row = logits.data().data() + i * vocab;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            probs[i * vocab + j] = std::exp(row[j] - mx);
            s += probs[i * vocab + j];
        }
        for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= s;
        total += std::log(s) + mx - row[targets[i]];
    }
    std::vector<std::size_t> tv(targets.begin(), targets.end());
    return make_result({1}, {total / static_cast<double>(m)}, {&logits},
                       [ln = logits.node(), probs = std::move(probs), tv = std::move(tv), m, vocab](Node* o) {
                           return [ln, probs, tv, m, vocab, o] {
                               auto& g = ln->ensure_grad();
                               const double s = o->grad[0] / static_cast<double>(m);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < vocab; ++j)
                                       g[i * vocab + j] += s * (probs[i * vocab + j] - (j == tv[i] ? 1.0 : 0.0));
                           };
                       });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result({1}, {s}, {&a}, [an = a.node()](Node* o) {
        return [an, o] {
            auto& g = an->ensure_grad();
            for (auto& x : g) x += o->grad[0];
        };
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_squares(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return make_result({1}, {s}, {&a}, [an = a.node()](Node* o) {
        return [an, o] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * an->value[i] * o->grad[0];
        };
    });
}

std::vector<double> dropout_scales(std::size_t n, double rate, std::mt19937_64& rng) {
    std::vector<double> s(n);
    const double keep = 1.0 / (1.0 - rate);
    for (auto& x : s) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        x = u < rate ? 0.0 : keep;
    }
    return s;
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw ContractError("dropout rate must be below 1");
    return mul(a, Tensor::from(a.shape(), dropout_scales(a.size(), rate, rng)));
}

}  // namespace dqf::ad
