#include "dqf/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"
#include "dqf/svg.hpp"

namespace dqf {

using linalg::Matrix;

namespace {

Matrix rows_of(const ad::Tensor& m, std::size_t first, std::size_t count) {
    const std::size_t c = m.shape()[1];
    Matrix out(count, c);
    for (std::size_t r = 0; r < count; ++r)
        for (std::size_t j = 0; j < c; ++j) out(r, j) = m.at(first + r, j);
    return out;
}

Matrix cols_of(const ad::Tensor& m, std::size_t first, std::size_t count) {
    const std::size_t r = m.shape()[0];
    Matrix out(r, count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = m.at(i, first + j);
    return out;
}

std::vector<double> layer_norm_row(std::span<const double> x, const ad::Tensor& gain, const ad::Tensor& bias,
                                   double eps) {
    const std::size_t d = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = (x[j] - mu) * inv * gain[j] + bias[j];
    return out;
}

void add_scaled(Matrix& dst, const Matrix& src, double s) {
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += s * src.a[i];
}

WeightSet detached(const WeightSet& w) {
    WeightSet out;
    out.t = w.t;
    for (const auto& [name, t] : w.to_map()) out.get(name) = t.detach(false);
    return out;
}

}  // namespace

FieldLinearization::FieldLinearization(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                                       std::size_t out, bool layer_norm)
    : out_(out), causal_(s.causal), layer_norm_(layer_norm), eps_(g.ln_eps), w_(w) {
    if (s.batch != 1) throw ContractError("Jacobians are computed for a single sequence");
    d_ = s.x.cols();
    seq_ = s.seq;
    if (out >= seq_) throw DimensionError("position " + std::to_string(out) + " outside the sequence");
    scale_ = 1.0 / std::sqrt(static_cast<double>(g.head_dim));
    x_.resize(seq_);
    for (std::size_t i = 0; i < seq_; ++i) x_[i].assign(s.x.data().begin() + i * d_, s.x.data().begin() + (i + 1) * d_);

    const std::size_t last = causal_ ? out : seq_ - 1;
    std::vector<std::vector<double>> xa(last + 1);
    for (std::size_t j = 0; j <= last; ++j)
        xa[j] = layer_norm_ ? layer_norm_row(x_[j], w.attn_ln_gain, w.attn_ln_bias, eps_) : x_[j];
    const std::size_t dh = g.head_dim;
    heads_.resize(g.heads);
    for (std::size_t h = 0; h < g.heads; ++h) {
        Head& hd = heads_[h];
        hd.qh = rows_of(w.q, h * dh, dh);
        hd.kh = rows_of(w.k, h * dh, dh);
        hd.vh = rows_of(w.v, h * dh, dh);
        hd.oh = cols_of(w.o, h * dh, dh);
        hd.k.resize(last + 1);
        hd.v.resize(last + 1);
        for (std::size_t j = 0; j <= last; ++j) {
            hd.k[j] = linalg::matvec(hd.kh, xa[j]);
            hd.v[j] = linalg::matvec(hd.vh, xa[j]);
        }
        hd.q_out = linalg::matvec(hd.qh, xa[out]);
        hd.p.assign(last + 1, 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= last; ++j) {
            double a = 0.0;
            for (std::size_t c = 0; c < dh; ++c) a += hd.q_out[c] * hd.k[j][c];
            hd.p[j] = a * scale_;
            mx = std::max(mx, hd.p[j]);
        }
        double z = 0.0;
        for (auto& pj : hd.p) z += (pj = std::exp(pj - mx));
        for (auto& pj : hd.p) pj /= z;
        hd.head_out.assign(dh, 0.0);
        for (std::size_t j = 0; j <= last; ++j)
            for (std::size_t c = 0; c < dh; ++c) hd.head_out[c] += hd.p[j] * hd.v[j][c];
        hd.r = Matrix(1, d_);
        for (std::size_t c = 0; c < dh; ++c)
            for (std::size_t e = 0; e < d_; ++e) hd.r(0, e) += hd.q_out[c] * hd.kh(c, e);
        Matrix cm(dh, dh);
        for (std::size_t j = 0; j <= last; ++j)
            for (std::size_t a = 0; a < dh; ++a) {
                const double dv = hd.p[j] * (hd.v[j][a] - hd.head_out[a]);
                for (std::size_t b = 0; b < dh; ++b) cm(a, b) += dv * hd.k[j][b];
            }
        hd.c = linalg::matmul(cm, hd.qh);
    }

    // feed-forward at `out`
    const std::vector<double> xf =
        layer_norm_ ? layer_norm_row(x_[out], w.ff_ln_gain, w.ff_ln_bias, eps_) : x_[out];
    const Matrix w1 = Matrix::from_tensor(w.w1), w2 = Matrix::from_tensor(w.w2);
    auto pre = linalg::matvec(w1, xf);
    Matrix dw1 = w1;
    for (std::size_t r = 0; r < w1.rows; ++r) {
        const double gp = ad::gelu_derivative(pre[r] + w.b1[r]);
        for (std::size_t c = 0; c < d_; ++c) dw1(r, c) *= gp;
    }
    ff_ = linalg::matmul(w2, dw1);
    if (layer_norm_) ff_ = linalg::matmul(ff_, ln_jacobian(out, w.ff_ln_gain));
}

Matrix FieldLinearization::ln_jacobian(std::size_t i, const ad::Tensor& gain) const {
    const auto& x = x_[i];
    const double dd = static_cast<double>(d_);
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= dd;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= dd;
    const double inv = 1.0 / std::sqrt(var + eps_);
    std::vector<double> u(d_);
    for (std::size_t j = 0; j < d_; ++j) u[j] = (x[j] - mu) * inv;
    Matrix l(d_, d_);
    for (std::size_t a = 0; a < d_; ++a)
        for (std::size_t b = 0; b < d_; ++b)
            l(a, b) = gain[a] * inv * ((a == b ? 1.0 : 0.0) - 1.0 / dd - u[a] * u[b] / dd);
    return l;
}

Matrix FieldLinearization::attention(std::size_t in, std::optional<std::size_t> head) const {
    if (in >= seq_) throw DimensionError("position " + std::to_string(in) + " outside the sequence");
    if (causal_ && in > out_)
        throw MaskedPairError("position " + std::to_string(in) + " is masked for target " + std::to_string(out_));
    if (head && *head >= heads_.size()) throw DimensionError("head " + std::to_string(*head) + " out of range");
    Matrix j(d_, d_);
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        if (head && *head != h) continue;
        const Head& hd = heads_[h];
        const std::size_t dh = hd.qh.rows;
        const double pin = hd.p[in];
        // value path plus key path
        Matrix m(dh, d_);
        for (std::size_t a = 0; a < dh; ++a) {
            const double kv = scale_ * pin * (hd.v[in][a] - hd.head_out[a]);
            for (std::size_t e = 0; e < d_; ++e) m(a, e) = pin * hd.vh(a, e) + kv * hd.r(0, e);
        }
        // query path, present only for the particle's own row
        if (in == out_) add_scaled(m, hd.c, scale_);
        add_scaled(j, linalg::matmul(hd.oh, m), 1.0);
    }
    if (layer_norm_) j = linalg::matmul(j, ln_jacobian(in, w_.attn_ln_gain));
    return j;
}

Matrix FieldLinearization::feed_forward(std::size_t in) const {
    if (in >= seq_) throw DimensionError("position " + std::to_string(in) + " outside the sequence");
    return in == out_ ? ff_ : Matrix(d_, d_);
}

Matrix FieldLinearization::total(std::size_t in, std::optional<std::size_t> head) const {
    Matrix j = attention(in, head);
    if (in == out_) add_scaled(j, ff_, 1.0);
    return j;
}

Matrix jacobian_attention(const SequenceState& s, const WeightSet& w, const FieldGeometry& g, std::size_t in,
                          std::size_t out) {
    return FieldLinearization(s, w, g, out).attention(in);
}

Matrix jacobian_ff(const SequenceState& s, const WeightSet& w, const FieldGeometry& g, std::size_t in,
                   std::size_t out) {
    return FieldLinearization(s, w, g, out).feed_forward(in);
}

std::vector<Matrix> autodiff_jacobians(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                                       std::size_t out, FieldPart part) {
    if (s.batch != 1) throw ContractError("Jacobians are computed for a single sequence");
    const std::size_t d = s.x.cols(), n = s.seq;
    if (out >= n) throw DimensionError("position " + std::to_string(out) + " outside the sequence");
    ad::Tape tape;
    SequenceState st = s;
    st.x = s.x.detach(true);
    const WeightSet wd = detached(w);
    FieldOptions fo;
    fo.causal = s.causal;
    ad::Tensor y;
    switch (part) {
        case FieldPart::attention: y = attention_field(st, wd, g, fo); break;
        case FieldPart::feed_forward: y = ff_field(st, wd, g, fo); break;
        case FieldPart::both: y = vector_field(st, wd, g, fo); break;
    }
    std::vector<Matrix> jac(n, Matrix(d, d));
    for (std::size_t c = 0; c < d; ++c) {
        auto sel = ad::Tensor::zeros(y.shape());
        sel.mutable_data()[out * d + c] = 1.0;
        const auto loss = ad::sum(ad::mul(y, sel));
        st.x.zero_grad();
        tape.backward(loss);
        const auto gx = st.x.grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t e = 0; e < d; ++e) jac[i](c, e) = gx[i * d + e];
    }
    return jac;
}

std::vector<WeightSet> trajectory_weights(const LanguageModel& m) {
    ad::NoGrad ng;
    std::vector<WeightSet> ws;
    for (std::size_t l = 0; l < m.depth_steps(); ++l) ws.push_back(detached(m.layer_weights(l)));
    return ws;
}

TangentState tangent_solve(const std::vector<Matrix>& jacobians, double dt, std::size_t in, std::size_t out,
                           double renormalize_above) {
    if (jacobians.empty()) throw ContractError("tangent_solve: no Jacobians");
    const std::size_t d = jacobians[0].rows;
    TangentState ts;
    ts.in = in;
    ts.out = out;
    ts.y = Matrix::identity(d);
    for (const auto& j : jacobians) {
        if (j.rows != d || j.cols != d) throw DimensionError("tangent_solve: Jacobian shape mismatch");
        const Matrix jy = linalg::matmul(j, ts.y);
        add_scaled(ts.y, jy, dt);
        double nrm = linalg::frobenius_norm(ts.y);
        if (!std::isfinite(nrm)) throw NumericalError("tangent map overflowed");
        if (nrm > renormalize_above) {
            for (auto& v : ts.y.a) v /= nrm;
            ts.log_scale += std::log(nrm);
        }
        ts.t += dt;
    }
    return ts;
}

TangentState tangent_solve(const Trajectory& traj, const std::vector<WeightSet>& weights, const FieldGeometry& g,
                           std::size_t in, std::size_t out, const TangentOptions& opts) {
    const std::size_t n = traj.steps();
    if (n == 0 || weights.size() != n || traj.states.size() != n + 1)
        throw ContractError("tangent_solve needs the full trajectory and one weight set per step");
    std::vector<Matrix> js;
    js.reserve(n);
    for (std::size_t l = 0; l < n; ++l) {
        if (opts.source == JacobianSource::closed_form) {
            js.push_back(FieldLinearization(traj.states[l], weights[l], g, out).total(in, opts.head));
        } else {
            if (opts.head) throw ContractError("per-head tangents use the closed-form Jacobian");
            if (traj.states[l].causal && in > out)
                throw MaskedPairError("position " + std::to_string(in) + " is masked for target " + std::to_string(out));
            js.push_back(autodiff_jacobians(traj.states[l], weights[l], g, out)[in]);
        }
    }
    auto ts = tangent_solve(js, traj.horizon() / static_cast<double>(n), in, out, opts.renormalize_above);
    ts.t = traj.horizon();
    return ts;
}

double sensitivity_score(const Matrix& y, double horizon) {
    if (!(horizon > 0.0)) throw ContractError("sensitivity_score: horizon must be positive");
    const Matrix gram = linalg::matmul(y, linalg::transpose(y));
    double lmax = 0.0;
    for (const auto& l : linalg::eigenvalues(gram)) lmax = std::max(lmax, l.real());
    return 0.5 * std::log(lmax) / horizon;
}

double sensitivity_score(const TangentState& t, double horizon) {
    return sensitivity_score(t.y, horizon) + t.log_scale / horizon;
}

SensitivityMap sensitivity_map(const LanguageModel& m, const CharTokenizer& tok, std::span<const std::size_t> tokens,
                               std::size_t target, const SensitivityOptions& opts) {
    const auto& cfg = m.config();
    if (tokens.empty()) throw ContractError("sensitivity map needs at least one token");
    if (target >= tokens.size())
        throw DimensionError("target " + std::to_string(target) + " outside a sequence of " +
                             std::to_string(tokens.size()));
    if (m.depth_steps() == 0) throw ContractError("sensitivity needs a model with at least one step");
    const std::size_t n = tokens.size(), heads = cfg.n_heads, steps = m.depth_steps();

    SensitivityMap map;
    map.target = target;
    map.jacobian = opts.source == JacobianSource::closed_form ? "closed_form" : "autodiff";
    for (auto id : tokens) map.tokens.push_back(tok.token_text(id));

    ForwardResult fr;
    std::vector<double> att(heads * n * n, 0.0);
    {
        ad::NoGrad ng;
        ForwardOptions fo;
        fo.keep_trajectory = true;
        fo.on_attention = [&](std::size_t, const std::vector<double>& p) {
            for (std::size_t i = 0; i < att.size(); ++i) att[i] += p[i] / static_cast<double>(steps);
        };
        fr = m.forward(tokens, 1, fo);
    }
    const auto weights = trajectory_weights(m);
    const auto g = FieldGeometry::of(cfg);
    const double dt = m.depth_horizon() / static_cast<double>(steps);
    const std::size_t sources = target + 1;

    std::vector<std::vector<Matrix>> j_all(sources, std::vector<Matrix>(steps));
    std::vector<std::vector<std::vector<Matrix>>> j_head;
    if (opts.per_head) j_head.assign(heads, std::vector<std::vector<Matrix>>(sources, std::vector<Matrix>(steps)));
    for (std::size_t l = 0; l < steps; ++l) {
        const auto& st = fr.trajectory.states[l];
        if (opts.source == JacobianSource::autodiff) {
            auto js = autodiff_jacobians(st, weights[l], g, target);
            for (std::size_t i = 0; i < sources; ++i) j_all[i][l] = std::move(js[i]);
        }
        if (opts.source == JacobianSource::closed_form || opts.per_head) {
            const FieldLinearization lin(st, weights[l], g, target);
#pragma omp parallel for schedule(dynamic)
            for (std::size_t i = 0; i < sources; ++i) {
                if (opts.source == JacobianSource::closed_form) j_all[i][l] = lin.total(i);
                for (std::size_t h = 0; h < j_head.size(); ++h) j_head[h][i][l] = lin.total(i, h);
            }
        }
    }
    map.scores.assign(sources, 0.0);
    if (opts.per_head) map.per_head.assign(heads, std::vector<double>(sources, 0.0));
    const double horizon = m.depth_horizon();
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < sources; ++i) {
        map.scores[i] = sensitivity_score(tangent_solve(j_all[i], dt, i, target), horizon);
        for (std::size_t h = 0; h < j_head.size(); ++h)
            map.per_head[h][i] = sensitivity_score(tangent_solve(j_head[h][i], dt, i, target), horizon);
    }

    if (opts.attention_baseline) {
        map.attention_per_head.assign(heads, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
        map.attention_mean.assign(n, std::vector<double>(n, 0.0));
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = att[(h * n + i) * n + j];
                    map.attention_per_head[h][i][j] = p;
                    map.attention_mean[i][j] += p / static_cast<double>(heads);
                }
    }
    return map;
}

std::string sensitivity_json(const SensitivityMap& map) {
    nlohmann::json j;
    j["tokens"] = map.tokens;
    j["target"] = map.target;
    j["scores"] = map.scores;
    j["per_head"] = map.per_head;
    j["aggregation"] = map.aggregation;
    j["jacobian"] = map.jacobian;
    if (!map.attention_mean.empty()) {
        j["attention_mean"] = map.attention_mean;
        j["attention_per_head"] = map.attention_per_head;
    }
    return j.dump(2);
}

namespace {

std::string shaded_tokens(const std::vector<std::string>& tokens, const std::vector<double>& scores,
                          std::size_t target) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double s : scores)
        if (std::isfinite(s)) lo = std::min(lo, s), hi = std::max(hi, s);
    std::ostringstream os;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        double alpha = 0.0;
        if (i < scores.size() && std::isfinite(scores[i]) && hi > lo) alpha = (scores[i] - lo) / (hi - lo);
        std::string text = tokens[i] == "\n" ? "↵\n" : tokens[i];
        os << "<span title=\"" << (i < scores.size() ? std::to_string(scores[i]) : std::string("masked"))
           << "\" style=\"background: rgba(220,0,0," << alpha << ")";
        if (i == target) os << "; outline: 2px solid #222";
        os << "\">" << svg::escape_xml(text) << "</span>";
    }
    return os.str();
}

}  // namespace

std::string sensitivity_html(const SensitivityMap& map) {
    std::ostringstream os;
    os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Token sensitivity</title>\n"
       << "<style>body{font-family:sans-serif;margin:2em} .seq{font-family:monospace;white-space:pre-wrap;"
       << "font-size:15px;line-height:1.8} h2{font-size:16px}</style></head><body>\n";
    os << "<h1>Finite-time Lyapunov sensitivity</h1>\n<p>Target position " << map.target << " ("
       << svg::escape_xml(map.tokens[map.target]) << "); aggregation " << map.aggregation << ", " << map.jacobian
       << " Jacobian. Darker red means higher sensitivity.</p>\n";
    os << "<h2>All heads</h2><div class=\"seq\">" << shaded_tokens(map.tokens, map.scores, map.target) << "</div>\n";
    for (std::size_t h = 0; h < map.per_head.size(); ++h)
        os << "<h2>Head " << h << "</h2><div class=\"seq\">" << shaded_tokens(map.tokens, map.per_head[h], map.target)
           << "</div>\n";
    if (!map.attention_mean.empty()) {
        os << "<h2>Attention of the target, averaged over steps and heads</h2><div class=\"seq\">"
           << shaded_tokens(map.tokens, map.attention_mean[map.target], map.target) << "</div>\n";
        for (std::size_t h = 0; h < map.attention_per_head.size(); ++h)
            os << "<h2>Attention, head " << h << "</h2><div class=\"seq\">"
               << shaded_tokens(map.tokens, map.attention_per_head[h][map.target], map.target) << "</div>\n";
    }
    os << "</body></html>\n";
    return os.str();
}

}  // namespace dqf
