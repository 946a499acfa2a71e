#include "dqf/discretize.hpp"

#include <algorithm>
#include <cmath>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"

namespace dqf {

namespace {

bool is_matrix_target(std::string_view name) {
    return std::find(std::begin(kMatrixTargets), std::end(kMatrixTargets), name) != std::end(kMatrixTargets);
}

ModelConfig with_layers(ModelConfig cfg, std::size_t layers) {
    cfg.n_steps = std::max<std::size_t>(layers, 1);
    cfg.validate();
    cfg.n_steps = layers;
    return cfg;
}

}  // namespace

std::string to_string(TuneMode m) { return m == TuneMode::full ? "full" : "lora"; }

TuneMode tune_mode_from_string(std::string_view s) {
    if (s == "full") return TuneMode::full;
    if (s == "lora") return TuneMode::lora;
    throw ConfigError("unknown fine-tuning mode '" + std::string(s) + "' (expected lora or full)");
}

DiscreteModel::DiscreteModel(ModelConfig cfg, Stem stem, std::vector<WeightSet> layers, double horizon,
                             std::string kind)
    : cfg_(with_layers(std::move(cfg), layers.size())),
      stem_(std::move(stem)),
      layers_(std::move(layers)),
      horizon_(horizon),
      kind_(std::move(kind)) {
    if (!layers_.empty() && !(horizon_ > 0.0)) throw ConfigError("depth horizon must be positive");
    cfg_.horizon = horizon_;
}

std::vector<double> DiscreteModel::layer_times() const {
    std::vector<double> t(layers_.size());
    for (std::size_t l = 0; l < t.size(); ++l) t[l] = grid_time(l, layers_.size(), horizon_);
    return t;
}

WeightSet DiscreteModel::layer_weights(std::size_t step) const {
    if (step >= layers_.size()) throw DimensionError("layer " + std::to_string(step) + " out of range");
    if (adapters_.empty()) return layers_[step];
    WeightSet w = layers_[step];
    for (const auto& ad : adapters_) {
        if (ad.layer != step) continue;
        auto& base = w.get(ad.target);
        base = ad::add(base, ad::scale(ad::matmul(ad.b, ad.a), ad.scale()));
    }
    return w;
}

ParamList DiscreteModel::parameters() const {
    ParamList p = stem_.parameters();
    for (std::size_t l = 0; l < layers_.size(); ++l)
        for (const auto& [name, t] : layers_[l].to_map())
            p.push_back({"layers." + std::to_string(l) + "." + name, t, is_matrix_target(name)});
    for (const auto& ad : adapters_) {
        const std::string base = "lora." + std::to_string(ad.layer) + "." + ad.target;
        p.push_back({base + ".a", ad.a, false});
        p.push_back({base + ".b", ad.b, false});
    }
    return p;
}

ParamList DiscreteModel::trainable_parameters() const {
    ParamList all = parameters();
    ParamList out;
    for (auto& p : all) {
        const bool adapter = p.name.rfind("lora.", 0) == 0;
        if (adapter == (mode_ == TuneMode::lora)) out.push_back(std::move(p));
    }
    return out;
}

void DiscreteModel::set_tune_mode(TuneMode m) {
    if (m == TuneMode::lora && adapters_.empty()) throw ContractError("LoRA mode needs attached adapters");
    mode_ = m;
    for (auto& p : parameters()) {
        const bool adapter = p.name.rfind("lora.", 0) == 0;
        p.tensor.set_requires_grad(adapter == (m == TuneMode::lora));
    }
}

void DiscreteModel::attach_lora(const LoraConfig& cfg, Rng& rng) {
    if (cfg.rank == 0) throw ConfigError("LoRA rank must be positive");
    if (cfg.targets.empty()) throw ConfigError("LoRA needs at least one target");
    for (const auto& t : cfg.targets)
        if (!is_matrix_target(t)) throw ConfigError("LoRA target '" + t + "' is not a weight matrix");
    for (std::size_t l = 0; l < layers_.size(); ++l)
        for (const auto& t : cfg.targets) {
            const auto& w = layers_[l].get(t);
            const std::size_t d_out = w.shape()[0], d_in = w.shape()[1];
            if (cfg.rank > std::min(d_in, d_out))
                throw ConfigError("LoRA rank " + std::to_string(cfg.rank) + " exceeds min(d_in, d_out) of " + t);
            LoraAdapter ad;
            ad.layer = l;
            ad.target = t;
            ad.rank = cfg.rank;
            ad.alpha = cfg.alpha;
            ad.a = uniform_tensor({cfg.rank, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
            ad.b = ad::Tensor::zeros({d_out, cfg.rank}, true);
            adapters_.push_back(std::move(ad));
        }
    set_tune_mode(TuneMode::lora);
}

void DiscreteModel::merge_lora() {
    if (adapters_.empty()) return;
    ad::NoGrad ng;
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l] = layer_weights(l);
    for (auto& w : layers_)
        for (const char* name : kMatrixTargets) w.get(name) = w.get(name).detach(true);
    adapters_.clear();
    set_tune_mode(TuneMode::full);
}

DiscreteModel populate(const OdeModel& m, std::size_t n_steps) {
    if (n_steps == 0) throw ConfigError("populate needs at least one step");
    const auto& cfg = m.config();
    std::vector<WeightSet> layers;
    {
        ad::NoGrad ng;
        for (std::size_t l = 0; l < n_steps; ++l) {
            WeightSet w = m.weights_at(grid_time(l, n_steps, cfg.horizon));
            for (auto& [name, t] : w.to_map()) w.get(name) = t.detach(true);
            layers.push_back(std::move(w));
        }
    }
    return DiscreteModel(cfg, m.stem().clone(), std::move(layers), cfg.horizon, "discrete");
}

std::size_t lora_parameter_count(const ModelConfig& cfg, std::size_t layers, const LoraConfig& lora) {
    std::size_t per_layer = 0;
    const std::size_t d = cfg.d_model, a = cfg.attn_width(), f = cfg.d_mlp;
    for (const auto& t : lora.targets) {
        std::size_t d_in = 0, d_out = 0;
        if (t == "q" || t == "k" || t == "v") d_in = d, d_out = a;
        else if (t == "o") d_in = a, d_out = d;
        else if (t == "w1") d_in = d, d_out = f;
        else if (t == "w2") d_in = f, d_out = d;
        else throw ConfigError("LoRA target '" + t + "' is not a weight matrix");
        per_layer += lora.rank * d_in + d_out * lora.rank;
    }
    return layers * per_layer;
}

TrainResult finetune(DiscreteModel& m, std::span<const std::size_t> train_ids, std::span<const std::size_t> val_ids,
                     const TrainConfig& cfg, TuneMode mode, const StepCallback& on_step) {
    m.set_tune_mode(mode);
    return train(m, train_ids, val_ids, cfg, on_step);
}

}  // namespace dqf
