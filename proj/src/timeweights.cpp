#include "dqf/timeweights.hpp"

#include <cmath>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"

namespace dqf {
namespace {
// Standard deviation of projection weights before the 1/sqrt(d_emb) factor.
constexpr double kProjScale = 0.02;
}  // namespace

std::string to_string(HyperMode mode) { return mode == HyperMode::shared_mlp ? "shared_mlp" : "per_target"; }

HyperMode hyper_mode_from_string(std::string_view s) {
    if (s == "per_target") return HyperMode::per_target;
    if (s == "shared_mlp") return HyperMode::shared_mlp;
    throw ConfigError("unknown hypernetwork mode '" + std::string(s) + "'");
}

SinusoidalEmbedding::SinusoidalEmbedding(std::size_t n_freq) : freqs_(n_freq) {
    for (std::size_t i = 0; i < n_freq; ++i)
        freqs_[i] = std::exp(-std::log(1e4) * static_cast<double>(i) / static_cast<double>(n_freq));
}

std::vector<double> SinusoidalEmbedding::operator()(double t) const {
    const std::size_t n = freqs_.size();
    std::vector<double> out(1 + 2 * n);
    out[0] = t;
    for (std::size_t i = 0; i < n; ++i) {
        out[1 + i] = std::sin(freqs_[i] * t);
        out[1 + n + i] = std::cos(freqs_[i] * t);
    }
    return out;
}

TimeWeightFactory::TimeWeightFactory(std::vector<TargetSpec> targets, std::size_t d_emb,
                                     HyperMode mode, std::size_t n_freq)
    : targets_(std::move(targets)), d_emb_(d_emb), mode_(mode), sinusoidal_(n_freq) {
    if (d_emb_ == 0) throw ConfigError("d_emb must be positive");
    if (targets_.empty()) throw ConfigError("factory needs at least one target");
    for (std::size_t i = 0; i < targets_.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (targets_[i].name == targets_[j].name)
                throw RegistryError("duplicate target '" + targets_[i].name + "'");
    const std::size_t ds = sinusoidal_.output_dim();
    const std::size_t n_mlp = mode_ == HyperMode::shared_mlp ? 1 : targets_.size();
    mlps_.resize(n_mlp);
    for (auto& m : mlps_) {
        m.w1 = ad::Tensor::zeros({d_emb_, ds}, true);
        m.b1 = ad::Tensor::zeros({d_emb_}, true);
        m.w2 = ad::Tensor::zeros({d_emb_, d_emb_}, true);
        m.b2 = ad::Tensor::zeros({d_emb_}, true);
    }
    for (const auto& t : targets_) {
        const std::size_t n = ad::element_count(t.shape);
        projs_.push_back({ad::Tensor::zeros({n, d_emb_}, true), ad::Tensor::full({n}, t.base_value, true)});
    }
}

void TimeWeightFactory::initialize(Rng& rng) {
    const double b1 = 1.0 / std::sqrt(static_cast<double>(sinusoidal_.output_dim()));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(d_emb_));
    for (auto& m : mlps_) {
        m.w1 = uniform_tensor(m.w1.shape(), b1, rng);
        m.b1 = uniform_tensor(m.b1.shape(), b1, rng);
        m.w2 = uniform_tensor(m.w2.shape(), b2, rng);
        m.b2 = uniform_tensor(m.b2.shape(), b2, rng);
    }
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        auto& p = projs_[i];
        p.w = normal_tensor(p.w.shape(), kProjScale * b2, rng);
        const auto& spec = targets_[i];
        std::vector<double> bias(p.b.size(), spec.base_value);
        if (spec.base_std > 0.0) {
            std::normal_distribution<double> dist(0.0, spec.base_std);
            for (auto& x : bias) x += dist(rng);
        }
        p.b = ad::Tensor::from(p.b.shape(), std::move(bias), true);
    }
}

std::size_t TimeWeightFactory::target_index(std::string_view name) const {
    for (std::size_t i = 0; i < targets_.size(); ++i)
        if (targets_[i].name == name) return i;
    throw RegistryError("no weight target named '" + std::string(name) + "'");
}

const TargetSpec& TimeWeightFactory::target(std::string_view name) const { return targets_[target_index(name)]; }

ad::Tensor TimeWeightFactory::hidden(const Mlp& mlp, const ad::Tensor& s) const {
    return ad::linear(ad::silu(ad::linear(s, mlp.w1, &mlp.b1)), mlp.w2, &mlp.b2);
}

ad::Tensor TimeWeightFactory::project(std::size_t i, const ad::Tensor& h) const {
    return ad::reshape(ad::linear(h, projs_[i].w, &projs_[i].b), targets_[i].shape);
}

WeightMap TimeWeightFactory::materialize(double t) const {
    if (!std::isfinite(t)) throw ContractError("materialize: non-finite time");
    const auto s = ad::Tensor::from({1, sinusoidal_.output_dim()}, sinusoidal_(t));
    WeightMap out;
    if (mode_ == HyperMode::shared_mlp) {
        const auto h = hidden(mlps_[0], s);
        for (std::size_t i = 0; i < targets_.size(); ++i) out.emplace(targets_[i].name, project(i, h));
    } else {
        for (std::size_t i = 0; i < targets_.size(); ++i)
            out.emplace(targets_[i].name, project(i, hidden(mlps_[i], s)));
    }
    return out;
}

ad::Tensor TimeWeightFactory::materialize(std::string_view name, double t) const {
    const std::size_t i = target_index(name);
    const auto s = ad::Tensor::from({1, sinusoidal_.output_dim()}, sinusoidal_(t));
    return project(i, hidden(mlps_[mode_ == HyperMode::shared_mlp ? 0 : i], s));
}

std::vector<WeightMap> TimeWeightFactory::materialize_grid(std::span<const double> times) const {
    const std::size_t n = times.size();
    if (n == 0) return {};
    const std::size_t ds = sinusoidal_.output_dim();
    std::vector<double> rows;
    rows.reserve(n * ds);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(times[i])) throw ContractError("materialize_grid: non-finite time");
        if (i > 0 && times[i] < times[i - 1]) throw ContractError("materialize_grid: times must be sorted");
        const auto e = sinusoidal_(times[i]);
        rows.insert(rows.end(), e.begin(), e.end());
    }
    // All times go through each projection as one batch; row l equals
    // materialize(times[l]) bit for bit.
    const auto s = ad::Tensor::from({n, ds}, std::move(rows));
    std::vector<WeightMap> out(n);
    ad::Tensor shared;
    if (mode_ == HyperMode::shared_mlp) shared = hidden(mlps_[0], s);
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        const auto h = mode_ == HyperMode::shared_mlp ? shared : hidden(mlps_[i], s);
        const auto all = ad::linear(h, projs_[i].w, &projs_[i].b);
        for (std::size_t l = 0; l < n; ++l)
            out[l].emplace(targets_[i].name, ad::reshape(ad::slice_rows(all, l, l + 1), targets_[i].shape));
    }
    return out;
}

ParamList TimeWeightFactory::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < mlps_.size(); ++i) {
        const std::string tag = mode_ == HyperMode::shared_mlp ? "shared" : targets_[i].name;
        const std::string base = "factory.mlp." + tag + ".";
        out.push_back({base + "w1", mlps_[i].w1, true});
        out.push_back({base + "b1", mlps_[i].b1, false});
        out.push_back({base + "w2", mlps_[i].w2, true});
        out.push_back({base + "b2", mlps_[i].b2, false});
    }
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        const std::string base = "factory.proj." + targets_[i].name + ".";
        out.push_back({base + "w", projs_[i].w, true});
        out.push_back({base + "b", projs_[i].b, false});
    }
    return out;
}

std::size_t TimeWeightFactory::parameter_count() const { return count_parameters(parameters()); }

std::size_t TimeWeightFactory::expected_parameter_count(const std::vector<TargetSpec>& targets,
                                                        std::size_t d_emb, HyperMode mode,
                                                        std::size_t n_freq) {
    const std::size_t ds = 1 + 2 * n_freq;
    const std::size_t mlp = ds * d_emb + d_emb + d_emb * d_emb + d_emb;
    std::size_t total = (mode == HyperMode::shared_mlp ? 1 : targets.size()) * mlp;
    for (const auto& t : targets) total += ad::element_count(t.shape) * (d_emb + 1);
    return total;
}

}  // namespace dqf
