#pragma once

// Weights as continuous functions of depth:
//   W(t) = Proj(MLP(Sinusoidal(t)))
// Sinusoidal(t) = [t, sin(w t), cos(w t)] with w_i = exp(-ln(1e4) i / n_freq).
// The MLP is Linear -> SiLU -> Linear with hidden and output width d_emb.
// Each registered target gets its own affine projection to its flattened
// extents; the MLP is either per target or shared by all targets.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dqf/params.hpp"
#include "dqf/tensor.hpp"

namespace dqf {

enum class HyperMode { per_target, shared_mlp };

std::string to_string(HyperMode mode);
HyperMode hyper_mode_from_string(std::string_view s);

inline constexpr std::size_t kDefaultFrequencies = 128;

class SinusoidalEmbedding {
   public:
    explicit SinusoidalEmbedding(std::size_t n_freq = kDefaultFrequencies);

    std::size_t frequency_count() const { return freqs_.size(); }
    std::size_t output_dim() const { return 1 + 2 * freqs_.size(); }
    std::span<const double> frequencies() const { return freqs_; }

    std::vector<double> operator()(double t) const;

   private:
    std::vector<double> freqs_;
};

// One weight produced by the factory. `base_std` is the standard deviation
// of the projection bias at init (the "vanilla" init of this weight) and
// `base_value` a constant added to it (1 for layer-norm gains).
struct TargetSpec {
    std::string name;
    ad::Shape shape;
    double base_std = 0.02;
    double base_value = 0.0;
};

using WeightMap = std::map<std::string, ad::Tensor, std::less<>>;

class TimeWeightFactory {
   public:
    TimeWeightFactory() = default;
    TimeWeightFactory(std::vector<TargetSpec> targets, std::size_t d_emb, HyperMode mode,
                      std::size_t n_freq = kDefaultFrequencies);

    // Draws fresh parameters.
    void initialize(Rng& rng);

    const std::vector<TargetSpec>& targets() const { return targets_; }
    const TargetSpec& target(std::string_view name) const;
    std::size_t d_emb() const { return d_emb_; }
    HyperMode mode() const { return mode_; }
    const SinusoidalEmbedding& embedding() const { return sinusoidal_; }

    // All targets at depth t, differentiable w.r.t. the factory parameters
    // when a tape is active.
    WeightMap materialize(double t) const;
    ad::Tensor materialize(std::string_view name, double t) const;
    std::vector<WeightMap> materialize_grid(std::span<const double> times) const;

    ParamList parameters() const;
    std::size_t parameter_count() const;
    // Closed-form count for a registry, mode and embedding width.
    static std::size_t expected_parameter_count(const std::vector<TargetSpec>& targets,
                                                std::size_t d_emb, HyperMode mode,
                                                std::size_t n_freq = kDefaultFrequencies);

   private:
    struct Mlp {
        ad::Tensor w1, b1, w2, b2;
    };
    struct Proj {
        ad::Tensor w, b;
    };

    std::size_t target_index(std::string_view name) const;
    ad::Tensor hidden(const Mlp& mlp, const ad::Tensor& s) const;
    ad::Tensor project(std::size_t i, const ad::Tensor& h) const;

    std::vector<TargetSpec> targets_;
    std::size_t d_emb_ = 0;
    HyperMode mode_ = HyperMode::per_target;
    SinusoidalEmbedding sinusoidal_;
    std::vector<Mlp> mlps_;  // one per target, or a single shared one
    std::vector<Proj> projs_;
};

}  // namespace dqf
