#include "dqf/baseline.hpp"

#include "dqf/error.hpp"

namespace dqf {

DiscreteModel make_vanilla(const ModelConfig& cfg, Rng& rng) {
    Stem stem = Stem::create(cfg, rng);
    const auto targets = weight_targets(cfg);
    std::vector<WeightSet> layers;
    for (std::size_t l = 0; l < cfg.n_steps; ++l) {
        WeightSet w;
        w.t = static_cast<double>(l);
        for (const auto& spec : targets) {
            if (spec.base_std > 0.0)
                w.get(spec.name) = normal_tensor(spec.shape, spec.base_std, rng);
            else
                w.get(spec.name) = ad::Tensor::full(spec.shape, spec.base_value, true);
        }
        layers.push_back(std::move(w));
    }
    return DiscreteModel(cfg, std::move(stem), std::move(layers), static_cast<double>(cfg.n_steps), "vanilla");
}

std::size_t vanilla_parameter_count(const ModelConfig& cfg, std::size_t layers) {
    const std::size_t v = cfg.vocab_size, d = cfg.d_model, a = cfg.attn_width(), f = cfg.d_mlp;
    const std::size_t stem = 2 * v * d + cfg.max_seq_len * d + 2 * d;
    const std::size_t block = 4 * d + 4 * a * d + 2 * f * d + f + d;
    return stem + layers * block;
}

}  // namespace dqf
