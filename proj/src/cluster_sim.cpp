#include "dqf/cluster_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "dqf/error.hpp"
#include "dqf/model.hpp"
#include "dqf/ops.hpp"
#include "dqf/svg.hpp"

namespace dqf {

double magnitude_fn(int id, double t, double horizon) {
    const double s = t / horizon;
    switch (id) {
        case 0: return 0.5;
        case 1: return 0.5 * s;
        case 2: return 0.5 * s * s;
        case 3: return 0.5 * s * s * s;
        case 4: return 0.5 * s * s * s * s;
        case 5: return 0.5 * (1.0 - s) * (1.0 - s);
        default: throw ConfigError("unknown magnitude function f" + std::to_string(id));
    }
}

int magnitude_fn_from_string(const std::string& s) {
    std::string digits = s;
    if (!digits.empty() && (digits[0] == 'f' || digits[0] == 'F')) digits = digits.substr(1);
    if (digits.size() != 1 || digits[0] < '0' || digits[0] > '5')
        throw ConfigError("unknown magnitude function '" + s + "' (expected f0..f5)");
    return digits[0] - '0';
}

void SimConfig::validate() const {
    if (n == 0 || dim == 0) throw ConfigError("simulation needs at least one particle and dimension");
    if (!(horizon > 0.0) || !(dt > 0.0)) throw ConfigError("horizon and dt must be positive");
    if (!(init_range > 0.0)) throw ConfigError("init_range must be positive");
    if (cluster_threshold < 0.0) throw ConfigError("cluster_threshold must be non-negative");
    magnitude_fn(fn, 0.0, horizon);
    const double ratio = horizon / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) throw ConfigError("horizon must be a multiple of dt");
}

std::size_t SimConfig::steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }

double SimTrajectory::dispersion_ratio() const {
    if (metrics.empty() || metrics.front().mean_dist == 0.0) return 0.0;
    return metrics.back().mean_dist / metrics.front().mean_dist;
}

SimTrajectory simulate(const SimConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n, d = cfg.dim, steps = cfg.steps();
    Rng rng(cfg.seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(-cfg.init_range, cfg.init_range);
    std::vector<double> a0(d * d), v0(d * d);
    for (auto& v : a0) v = nd(rng);
    for (auto& v : v0) v = nd(rng);
    if (cfg.identity_weights) {
        std::fill(a0.begin(), a0.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) a0[i * d + i] = 1.0;
        v0 = a0;
    }
    if (cfg.zero_values) std::fill(v0.begin(), v0.end(), 0.0);
    std::vector<double> x0(n * d);
    for (auto& v : x0) v = ud(rng);

    ad::NoGrad ng;
    const FieldGeometry g{1, d, 1e-5};
    FieldOptions fo;
    fo.causal = false;
    fo.layer_norm = false;
    ad::Tensor identity = ad::Tensor::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) identity.mutable_data()[i * d + i] = 1.0;

    SimTrajectory tr;
    tr.n = n;
    tr.dim = d;
    SequenceState s;
    s.x = ad::Tensor::from({n, d}, x0);
    s.batch = 1;
    s.seq = n;
    s.causal = false;
    tr.times.push_back(0.0);
    tr.states.push_back(x0);
    for (std::size_t l = 0; l < steps; ++l) {
        const double t = grid_time(l, steps, cfg.horizon);
        const double f = magnitude_fn(cfg.fn, t, cfg.horizon);
        WeightSet w;
        w.t = t;
        std::vector<double> a(a0), v(v0);
        for (auto& e : a) e *= f;
        for (auto& e : v) e *= f;
        w.q = ad::Tensor::from({d, d}, a);
        w.k = w.q;
        w.v = ad::Tensor::from({d, d}, v);
        w.o = identity;
        s.x = ad::axpy(s.x, cfg.dt, attention_field(s, w, g, fo));
        s.t = grid_time(l + 1, steps, cfg.horizon);
        if (!s.x.all_finite()) throw DivergenceError("particle state became non-finite", l + 1);
        tr.times.push_back(s.t);
        tr.states.emplace_back(s.x.data().begin(), s.x.data().end());
    }
    tr.metrics = dispersion_metrics(tr.times, tr.states, n, d, cfg.cluster_threshold);
    return tr;
}

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
}

}  // namespace

std::vector<DispersionPoint> dispersion_metrics(const std::vector<double>& times,
                                                const std::vector<std::vector<double>>& states, std::size_t n,
                                                std::size_t dim, double threshold) {
    if (states.empty()) throw ContractError("dispersion metrics need at least one state");
    if (times.size() != states.size()) throw DimensionError("times and states differ in length");
    std::vector<DispersionPoint> out;
    double cut = 0.0;
    const double pairs = n > 1 ? static_cast<double>(n * (n - 1) / 2) : 1.0;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& x = states[s];
        if (x.size() != n * dim) throw DimensionError("state size does not match n * dim");
        std::vector<double> dist(n * n, 0.0);
        std::vector<double> norms(n, 0.0), unit(n * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < dim; ++c) norms[i] += x[i * dim + c] * x[i * dim + c];
            norms[i] = std::sqrt(norms[i]);
            if (norms[i] > 0.0)
                for (std::size_t c = 0; c < dim; ++c) unit[i * dim + c] = x[i * dim + c] / norms[i];
        }
        DispersionPoint p;
        p.t = times[s];
        double dsum = 0.0, asum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double dd = 0.0, um = 0.0, up = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    const double diff = x[i * dim + c] - x[j * dim + c];
                    dd += diff * diff;
                    const double a = unit[i * dim + c], b = unit[j * dim + c];
                    um += (a - b) * (a - b);
                    up += (a + b) * (a + b);
                }
                dist[i * n + j] = std::sqrt(dd);
                dsum += dist[i * n + j];
                // Angle from the chord lengths; acos of the cosine loses
                // half the digits near 0 and pi.
                if (norms[i] > 0.0 && norms[j] > 0.0) asum += 2.0 * std::atan2(std::sqrt(um), std::sqrt(up));
            }
        p.mean_dist = dsum / pairs;
        p.ang_disp = asum / pairs;
        if (s == 0) cut = threshold * p.mean_dist;
        std::vector<std::size_t> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (dist[i * n + j] <= cut) parent[find_root(parent, i)] = find_root(parent, j);
        for (std::size_t i = 0; i < n; ++i)
            if (find_root(parent, i) == i) ++p.clusters;
        out.push_back(p);
    }
    return out;
}

void write_trajectory_csv(const std::string& path, const SimTrajectory& tr) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out.precision(17);
    out << "t,particle";
    for (std::size_t c = 0; c < tr.dim; ++c) out << ",x" << c;
    out << '\n';
    for (std::size_t i = 0; i < tr.n; ++i)
        for (std::size_t s = 0; s < tr.times.size(); ++s) {
            out << tr.times[s] << ',' << i;
            for (std::size_t c = 0; c < tr.dim; ++c) out << ',' << tr.states[s][i * tr.dim + c];
            out << '\n';
        }
}

void write_metrics_csv(const std::string& path, const SimTrajectory& tr) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out.precision(17);
    out << "t,mean_dist,ang_disp,clusters\n";
    for (const auto& p : tr.metrics) out << p.t << ',' << p.mean_dist << ',' << p.ang_disp << ',' << p.clusters << '\n';
}

std::string trajectory_svg(const SimTrajectory& tr, const std::string& title) {
    svg::Chart chart;
    chart.title = title;
    chart.x_label = "x0";
    chart.y_label = tr.dim > 1 ? "x1" : "t";
    chart.legend = false;
    for (std::size_t i = 0; i < tr.n; ++i) {
        svg::Series path, end;
        for (std::size_t s = 0; s < tr.times.size(); ++s) {
            path.x.push_back(tr.states[s][i * tr.dim]);
            path.y.push_back(tr.dim > 1 ? tr.states[s][i * tr.dim + 1] : tr.times[s]);
        }
        end.x = {path.x.back()};
        end.y = {path.y.back()};
        end.markers_only = true;
        end.color = "#d62728";
        path.color = "#1f77b4";
        chart.series.push_back(std::move(path));
        chart.series.push_back(std::move(end));
    }
    return svg::render(chart);
}

}  // namespace dqf
