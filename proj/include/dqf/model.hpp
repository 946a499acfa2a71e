#pragma once

// Continuous-depth transformer. Tokens are embedded into particles
// x_i(0); the particles evolve under
//     dx_i/dt = attention_field(x, t)_i + ff_field(x, t)_i,   t in [0, T]
// integrated with explicit Euler on a uniform grid of n_steps steps, and a
// final layer norm plus linear head produce next-token logits. Both fields
// read the same state (same-level placement) and pre-normalize it with
// their own time-dependent layer norm.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqf/params.hpp"
#include "dqf/tensor.hpp"
#include "dqf/timeweights.hpp"

namespace dqf {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_head = 16;
    std::size_t d_mlp = 256;
    std::size_t n_steps = 4;
    double horizon = 4.0;
    std::size_t max_seq_len = 64;
    std::size_t d_emb = 64;
    HyperMode hyper_mode = HyperMode::per_target;
    double dropout = 0.1;
    double ln_eps = 1e-5;

    double dt() const { return horizon / static_cast<double>(n_steps); }
    std::size_t attn_width() const { return n_heads * d_head; }
    void validate() const;
};

// t_l = horizon * l / n_steps. Every component that places weights on the
// Euler grid goes through this so that grids agree bit for bit.
double grid_time(std::size_t step, std::size_t n_steps, double horizon);
std::vector<double> grid_times(std::size_t n_steps, double horizon);

// All per-depth weights. Q, K, V stack the heads row-wise
// ([heads*d_head, d]); O is [d, heads*d_head] so O_h is its h-th column block.
struct WeightSet {
    double t = 0.0;
    ad::Tensor attn_ln_gain, attn_ln_bias;
    ad::Tensor q, k, v, o;
    ad::Tensor ff_ln_gain, ff_ln_bias;
    ad::Tensor w1, b1, w2, b2;

    static WeightSet from_map(const WeightMap& m, double t);
    WeightMap to_map() const;
    ad::Tensor& get(std::string_view name);
    const ad::Tensor& get(std::string_view name) const;
};

// Registry of every weight the factory produces for this geometry.
std::vector<TargetSpec> weight_targets(const ModelConfig& cfg);
inline constexpr const char* kMatrixTargets[] = {"q", "k", "v", "o", "w1", "w2"};

// Geometry the field code needs.
struct FieldGeometry {
    std::size_t heads = 1;
    std::size_t head_dim = 1;
    double ln_eps = 1e-5;

    static FieldGeometry of(const ModelConfig& cfg) { return {cfg.n_heads, cfg.d_head, cfg.ln_eps}; }
};

struct FieldOptions {
    bool causal = true;
    bool layer_norm = true;
    double dropout = 0.0;  // attention-probability and field-output dropout
    Rng* rng = nullptr;    // required when dropout > 0
    std::vector<double>* attention_probs = nullptr;  // receives [batch, heads, seq, seq]
};

// Particle matrix for `batch` sequences of `seq` tokens, rows ordered
// sequence-major: x is [batch*seq, d].
struct SequenceState {
    ad::Tensor x;
    std::size_t batch = 1;
    std::size_t seq = 1;
    double t = 0.0;
    bool causal = true;
};

struct Trajectory {
    std::vector<SequenceState> states;  // l = 0..N, t_l = l*T/N

    std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
    double horizon() const { return states.back().t; }
};

ad::Tensor attention_field(const SequenceState& x, const WeightSet& w, const FieldGeometry& g,
                           const FieldOptions& opts = {});
ad::Tensor ff_field(const SequenceState& x, const WeightSet& w, const FieldGeometry& g,
                    const FieldOptions& opts = {});
ad::Tensor vector_field(const SequenceState& x, const WeightSet& w, const FieldGeometry& g,
                        const FieldOptions& opts = {});

// Weights for Euler step l at time t.
using LayerWeights = std::function<WeightSet(std::size_t step, double t)>;

struct SolveOptions {
    FieldOptions field;
    bool keep_trajectory = true;
    // Called with the attention probabilities of each step, if set.
    std::function<void(std::size_t step, const std::vector<double>& probs)> on_attention;
};

// x_{l+1} = x_l + dt * vector_field(x_l, W(t_l)); throws DivergenceError on
// a non-finite state.
Trajectory euler_solve(const SequenceState& x0, const LayerWeights& weights, std::size_t n_steps,
                       double horizon, const FieldGeometry& g, const SolveOptions& opts = {});
Trajectory euler_solve(const SequenceState& x0, const TimeWeightFactory& factory,
                       std::size_t n_steps, double horizon, const FieldGeometry& g,
                       const SolveOptions& opts = {});

// Token/position embeddings, the closing layer norm and the untied head.
struct Stem {
    ad::Tensor tok_emb;  // [vocab, d]
    ad::Tensor pos_emb;  // [max_seq_len, d]
    ad::Tensor lnf_gain, lnf_bias;
    ad::Tensor head;  // [vocab, d]

    static Stem create(const ModelConfig& cfg, Rng& rng);
    Stem clone() const;
    ParamList parameters() const;
};

struct ForwardOptions {
    bool training = false;  // enables dropout
    Rng* rng = nullptr;
    bool keep_trajectory = false;
    std::function<void(std::size_t step, const std::vector<double>& probs)> on_attention;
};

struct ForwardResult {
    ad::Tensor logits;  // [batch*seq, vocab]
    Trajectory trajectory;
};

// Interface shared by the continuous model and the discrete-layer models.
class LanguageModel {
   public:
    virtual ~LanguageModel() = default;

    virtual std::string kind() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual const Stem& stem() const = 0;
    // Euler steps/layers and the depth they span.
    virtual std::size_t depth_steps() const = 0;
    virtual double depth_horizon() const = 0;
    // Effective weights used by step l.
    virtual WeightSet layer_weights(std::size_t step) const = 0;
    virtual ParamList parameters() const = 0;
    virtual ParamList trainable_parameters() const { return parameters(); }

    // tokens holds `batch` sequences of equal length, concatenated.
    ForwardResult forward(std::span<const std::size_t> tokens, std::size_t batch,
                          const ForwardOptions& opts = {}) const;
    ad::Tensor forward_logits(std::span<const std::size_t> tokens, std::size_t batch = 1) const {
        return forward(tokens, batch).logits;
    }
    // Initial particles x(0) for the given tokens.
    SequenceState embed(std::span<const std::size_t> tokens, std::size_t batch) const;

   protected:
    // Hook so subclasses can produce all step weights in one pass.
    virtual LayerWeights weight_source() const;
};

class OdeModel : public LanguageModel {
   public:
    explicit OdeModel(ModelConfig cfg);

    void initialize(Rng& rng);

    std::string kind() const override { return "continuous"; }
    const ModelConfig& config() const override { return cfg_; }
    const Stem& stem() const override { return stem_; }
    Stem& stem() { return stem_; }
    std::size_t depth_steps() const override { return cfg_.n_steps; }
    double depth_horizon() const override { return cfg_.horizon; }
    WeightSet layer_weights(std::size_t step) const override;
    WeightSet weights_at(double t) const;
    ParamList parameters() const override;

    const TimeWeightFactory& factory() const { return factory_; }
    TimeWeightFactory& factory() { return factory_; }

   protected:
    LayerWeights weight_source() const override;

   private:
    ModelConfig cfg_;
    Stem stem_;
    TimeWeightFactory factory_;
};

}  // namespace dqf
