#pragma once

// Discrete-layer models: the continuous model's weights populated onto a
// fixed grid of any size, optional LoRA adapters, and fine-tuning.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dqf/model.hpp"
#include "dqf/training.hpp"

namespace dqf {

struct LoraAdapter {
    std::size_t layer = 0;
    std::string target;  // one of kMatrixTargets
    std::size_t rank = 8;
    double alpha = 16.0;
    ad::Tensor a;  // [rank, d_in]
    ad::Tensor b;  // [d_out, rank], zero at attach time

    double scale() const { return alpha / static_cast<double>(rank); }
};

struct LoraConfig {
    std::vector<std::string> targets{"q", "v"};
    std::size_t rank = 8;
    double alpha = 16.0;
};

enum class TuneMode { full, lora };
std::string to_string(TuneMode m);
TuneMode tune_mode_from_string(std::string_view s);

class DiscreteModel : public LanguageModel {
   public:
    // `horizon` is the depth spanned by the layers; each layer advances by
    // horizon / layers.size().
    DiscreteModel(ModelConfig cfg, Stem stem, std::vector<WeightSet> layers, double horizon,
                  std::string kind = "discrete");

    std::string kind() const override { return kind_; }
    const ModelConfig& config() const override { return cfg_; }
    const Stem& stem() const override { return stem_; }
    std::size_t depth_steps() const override { return layers_.size(); }
    double depth_horizon() const override { return horizon_; }
    // Base weights plus (alpha/r) B A on every adapted target.
    WeightSet layer_weights(std::size_t step) const override;
    ParamList parameters() const override;
    ParamList trainable_parameters() const override;

    const std::vector<WeightSet>& layers() const { return layers_; }
    std::vector<WeightSet>& layers() { return layers_; }
    std::vector<double> layer_times() const;

    // Adapters on every selected target at every layer; base weights and
    // the stem are frozen and the trainable set becomes the adapters.
    void attach_lora(const LoraConfig& cfg, Rng& rng);
    // W <- W + (alpha/r) B A; adapters removed. No-op without adapters.
    void merge_lora();
    const std::vector<LoraAdapter>& adapters() const { return adapters_; }
    std::vector<LoraAdapter>& adapters() { return adapters_; }
    bool has_adapters() const { return !adapters_.empty(); }

    void set_tune_mode(TuneMode m);
    TuneMode tune_mode() const { return mode_; }

   private:
    ModelConfig cfg_;
    Stem stem_;
    std::vector<WeightSet> layers_;
    double horizon_ = 1.0;
    std::string kind_;
    std::vector<LoraAdapter> adapters_;
    TuneMode mode_ = TuneMode::full;
};

// Weights materialized at l * T / n_steps, detached from the factory; the
// stem is copied.
DiscreteModel populate(const OdeModel& m, std::size_t n_steps);

// Closed-form LoRA parameter count: per layer and target r * (d_in + d_out).
std::size_t lora_parameter_count(const ModelConfig& cfg, std::size_t layers, const LoraConfig& lora);

// Trains the adapters (lora) or the populated weights and stem (full) with
// the training loop.
TrainResult finetune(DiscreteModel& m, std::span<const std::size_t> train_ids, std::span<const std::size_t> val_ids,
                     const TrainConfig& cfg, TuneMode mode, const StepCallback& on_step = {});

}  // namespace dqf
