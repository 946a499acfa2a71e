#include "dqf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"
#include "dqf/svg.hpp"

namespace dqf {

using linalg::Matrix;
using cplx = std::complex<double>;

std::string to_string(Circuit c) { return c == Circuit::qk ? "qk" : "ov"; }

Circuit circuit_from_string(std::string_view s) {
    if (s == "qk") return Circuit::qk;
    if (s == "ov") return Circuit::ov;
    throw ConfigError("unknown circuit '" + std::string(s) + "' (expected qk or ov)");
}

namespace {

void check_head(const WeightSet& w, std::size_t head, std::size_t d_head) {
    if (!w.q.defined() || w.q.rank() != 2) throw ContractError("weight set has no attention weights");
    if ((head + 1) * d_head > w.q.shape()[0])
        throw DimensionError("head " + std::to_string(head) + " out of range");
}

// Rows [h*dh, (h+1)*dh) of a stacked [heads*dh, d] matrix.
Matrix head_rows(const ad::Tensor& m, std::size_t head, std::size_t d_head) {
    const std::size_t d = m.shape()[1];
    Matrix out(d_head, d);
    for (std::size_t r = 0; r < d_head; ++r)
        for (std::size_t c = 0; c < d; ++c) out(r, c) = m.at(head * d_head + r, c);
    return out;
}

// Columns [h*dh, (h+1)*dh) of O [d, heads*dh].
Matrix head_cols(const ad::Tensor& m, std::size_t head, std::size_t d_head) {
    const std::size_t d = m.shape()[0];
    Matrix out(d, d_head);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d_head; ++c) out(r, c) = m.at(r, head * d_head + c);
    return out;
}

}  // namespace

Matrix qk_matrix(const WeightSet& w, std::size_t head, std::size_t d_head) {
    check_head(w, head, d_head);
    return linalg::matmul(linalg::transpose(head_rows(w.q, head, d_head)), head_rows(w.k, head, d_head));
}

Matrix ov_matrix(const WeightSet& w, std::size_t head, std::size_t d_head) {
    check_head(w, head, d_head);
    return linalg::matmul(head_cols(w.o, head, d_head), head_rows(w.v, head, d_head));
}

Matrix circuit_matrix(const WeightSet& w, Circuit c, std::size_t head, std::size_t d_head) {
    return c == Circuit::qk ? qk_matrix(w, head, d_head) : ov_matrix(w, head, d_head);
}

namespace {
void check_time(const OdeModel& m, double t) {
    if (!(t >= 0.0 && t <= m.config().horizon))
        throw ContractError("time " + std::to_string(t) + " outside [0, T]");
}
}  // namespace

Matrix qk_matrix(const OdeModel& m, std::size_t head, double t) {
    check_time(m, t);
    ad::NoGrad ng;
    return qk_matrix(m.weights_at(t), head, m.config().d_head);
}

Matrix ov_matrix(const OdeModel& m, std::size_t head, double t) {
    check_time(m, t);
    ad::NoGrad ng;
    return ov_matrix(m.weights_at(t), head, m.config().d_head);
}

std::vector<cplx> match_eigenvalues(std::span<const cplx> prev, std::span<const cplx> next) {
    if (prev.size() != next.size()) throw DimensionError("eigenvalue sets differ in size");
    const std::size_t n = prev.size();
    Matrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost(i, j) = std::abs(prev[i] - next[j]);
    const auto assign = linalg::min_cost_assignment(cost);
    std::vector<cplx> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = next[assign[i]];
    return out;
}

double SpectralTrace::max_matched_jump() const {
    double best = 0.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i)
        for (std::size_t k = 0; k < values[i].size(); ++k)
            best = std::max(best, std::abs(values[i + 1][k] - values[i][k]));
    return best;
}

SpectralTrace spectral_trace(const WeightsAt& weights, std::size_t head, Circuit c, std::span<const double> times,
                             std::size_t d_head) {
    SpectralTrace tr;
    tr.head = head;
    tr.circuit = c;
    tr.times.assign(times.begin(), times.end());
    const std::size_t n = times.size();
    std::vector<std::vector<cplx>> raw(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            ad::NoGrad ng;
            raw[i] = linalg::eigenvalues(circuit_matrix(weights(times[i]), c, head, d_head));
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!errors[i].empty()) throw NumericalError("spectral trace at t=" + std::to_string(times[i]) + ": " + errors[i]);
    tr.values.resize(n);
    tr.top.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        tr.values[i] = i == 0 ? raw[0] : match_eigenvalues(tr.values[i - 1], raw[i]);
        const std::size_t d = tr.values[i].size();
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(tr.values[i][a]) > std::abs(tr.values[i][b]);
        });
        tr.top[i].assign(d, false);
        for (std::size_t r = 0; r < std::min(d_head, d); ++r) tr.top[i][order[r]] = true;
    }
    return tr;
}

SpectralTrace spectral_trace(const LanguageModel& m, std::size_t head, Circuit c, std::size_t grid_points) {
    const auto& cfg = m.config();
    if (head >= cfg.n_heads) throw DimensionError("head " + std::to_string(head) + " out of range");
    if (const auto* ode = dynamic_cast<const OdeModel*>(&m)) {
        if (grid_points < 2) throw ConfigError("spectral grid needs at least two points");
        std::vector<double> times(grid_points);
        for (std::size_t i = 0; i < grid_points; ++i) times[i] = grid_time(i, grid_points - 1, cfg.horizon);
        return spectral_trace([ode](double t) { return ode->weights_at(t); }, head, c, times, cfg.d_head);
    }
    const std::size_t layers = m.depth_steps();
    if (layers == 0) throw ConfigError("model has no layers to analyze");
    std::vector<double> times(layers);
    for (std::size_t l = 0; l < layers; ++l) times[l] = grid_time(l, layers, m.depth_horizon());
    auto at = [&m, layers, horizon = m.depth_horizon()](double t) {
        const auto l = static_cast<std::size_t>(std::llround(t / horizon * static_cast<double>(layers)));
        return m.layer_weights(std::min(l, layers - 1));
    };
    return spectral_trace(at, head, c, times, cfg.d_head);
}

void write_spectral_csv(const std::string& path, const std::vector<SpectralTrace>& traces) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out.precision(17);
    out << "circuit,head,t,re,im,rank_tag\n";
    for (const auto& tr : traces)
        for (std::size_t i = 0; i < tr.times.size(); ++i)
            for (std::size_t k = 0; k < tr.values[i].size(); ++k)
                out << to_string(tr.circuit) << ',' << tr.head << ',' << tr.times[i] << ',' << tr.values[i][k].real()
                    << ',' << tr.values[i][k].imag() << ',' << (tr.top[i][k] ? "top" : "tail") << '\n';
}

std::string spectral_svg(const SpectralTrace& tr) {
    svg::Chart chart;
    chart.title = to_string(tr.circuit) + " eigenvalues, head " + std::to_string(tr.head);
    chart.x_label = "t";
    chart.y_label = "Re(lambda) (solid), Im(lambda) (dashed)";
    chart.legend = false;
    if (tr.values.empty()) return svg::render(chart);
    const std::size_t d = tr.values[0].size();
    for (std::size_t k = 0; k < d; ++k) {
        bool any_top = false;
        for (const auto& row : tr.top) any_top = any_top || row[k];
        if (!any_top) continue;
        svg::Series re, im;
        re.x = im.x = tr.times;
        for (const auto& row : tr.values) {
            re.y.push_back(row[k].real());
            im.y.push_back(row[k].imag());
        }
        im.dashed = true;
        chart.series.push_back(std::move(re));
        bool complex_track = false;
        for (double v : im.y) complex_track = complex_track || v != 0.0;
        if (complex_track) {
            im.color = "#999999";
            chart.series.push_back(std::move(im));
        }
    }
    return svg::render(chart);
}

VarianceReport variance_identity_check(const Matrix& a, std::size_t n_samples, std::uint64_t seed) {
    if (!a.square()) throw DimensionError("variance identity needs a square matrix");
    if (n_samples < 10000) throw ContractError("variance identity needs at least 10^4 samples");
    const std::size_t d = a.rows;
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> x(d), y(d);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (auto& v : x) v = nd(rng);
        for (auto& v : y) v = nd(rng);
        const auto ay = linalg::matvec(a, y);
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) z += x[i] * ay[i];
        const double z2 = z * z;
        s1 += z2;
        s2 += z2 * z2;
    }
    VarianceReport r;
    r.samples = n_samples;
    const double n = static_cast<double>(n_samples);
    r.mc_variance = s1 / n;
    const double var_z2 = std::max(0.0, (s2 - n * r.mc_variance * r.mc_variance) / (n - 1.0));
    r.standard_error = std::sqrt(var_z2 / n);
    for (double v : a.a) r.expected += v * v;
    r.abs_diff = std::abs(r.mc_variance - r.expected);
    r.pass = r.abs_diff <= 4.0 * r.standard_error;
    const auto at = linalg::transpose(a);
    const auto commutator_a = linalg::matmul(a, at), commutator_b = linalg::matmul(at, a);
    double diff = 0.0;
    for (std::size_t i = 0; i < commutator_a.a.size(); ++i) diff = std::max(diff, std::abs(commutator_a.a[i] - commutator_b.a[i]));
    r.normal_matrix = diff <= 1e-12 * std::max(1.0, r.expected);
    for (const auto& l : linalg::eigenvalues(a)) r.eig_square_sum += (l * l).real();
    return r;
}

std::vector<cplx> eigen_step(std::span<const cplx> w_i, std::span<const cplx> w_j, const linalg::EigenSystem& es,
                             double dt) {
    const std::size_t n = es.values.size();
    if (w_i.size() != n || w_j.size() != n) throw DimensionError("eigen_step: coordinate length mismatch");
    std::vector<cplx> out(es.vectors.empty() ? 0 : es.vectors[0].size());
    for (std::size_t k = 0; k < n; ++k) {
        const cplx coeff = es.values[k] * w_j[k] * dt + w_i[k];
        for (std::size_t r = 0; r < out.size(); ++r) out[r] += coeff * es.vectors[k][r];
    }
    return out;
}

EigenStepView euler_step_eigview(const Matrix& a, std::span<const double> x_i, std::span<const double> x_j, double dt) {
    if (!a.square() || x_i.size() != a.rows || x_j.size() != a.rows)
        throw DimensionError("euler_step_eigview: shape mismatch");
    const auto es = linalg::eigensystem(a);
    const auto wi = linalg::basis_coordinates(es, x_i);
    const auto wj = linalg::basis_coordinates(es, x_j);
    const auto rec = eigen_step(wi, wj, es, dt);
    EigenStepView v;
    const auto ax = linalg::matvec(a, x_j);
    double scale = 1.0;
    for (std::size_t r = 0; r < a.rows; ++r) {
        v.direct.push_back(x_i[r] + dt * ax[r]);
        v.reconstructed.push_back(rec[r].real());
        v.max_imag = std::max(v.max_imag, std::abs(rec[r].imag()));
        v.max_abs_diff = std::max(v.max_abs_diff, std::abs(rec[r].real() - v.direct.back()));
        scale = std::max(scale, std::abs(v.direct.back()));
    }
    if (v.max_abs_diff > 1e-10 * scale || v.max_imag > 1e-10 * scale) {
        std::ostringstream os;
        os << "eigenbasis reconstruction differs from the direct update by " << v.max_abs_diff;
        throw NumericalError(os.str());
    }
    return v;
}

}  // namespace dqf
