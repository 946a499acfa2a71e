#pragma once

// Token sensitivity through finite-time Lyapunov exponents. For a pair of
// positions (in, out) the tangent map Y solves dY/dt = J_{in,out}(t) Y with
// Y(0) = I along a frozen forward trajectory, where J is the Jacobian of
// particle out's vector field with respect to particle in. The score is the
// leading exponent (1/T) log sigma_max(Y(T)).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqf/linalg.hpp"
#include "dqf/model.hpp"
#include "dqf/tokenizer.hpp"

namespace dqf {

// Everything the closed-form Jacobian of row `out` needs, computed once
// per (state, weights).
class FieldLinearization {
   public:
    FieldLinearization(const SequenceState& s, const WeightSet& w, const FieldGeometry& g, std::size_t out,
                       bool layer_norm = true);

    std::size_t out() const { return out_; }
    // d attention_field(x)_out / d x_in, optionally restricted to one head.
    linalg::Matrix attention(std::size_t in, std::optional<std::size_t> head = std::nullopt) const;
    // d ff_field(x)_out / d x_in; exactly zero unless in == out.
    linalg::Matrix feed_forward(std::size_t in) const;
    linalg::Matrix total(std::size_t in, std::optional<std::size_t> head = std::nullopt) const;

   private:
    struct Head {
        linalg::Matrix qh, kh, vh, oh;  // [dh,d] x3 and [d,dh]
        std::vector<double> p;          // attention row of `out`
        std::vector<std::vector<double>> k, v;  // projected keys/values per position
        std::vector<double> q_out, head_out;
        linalg::Matrix r;  // q_out^T K_h, [1,d]
        linalg::Matrix c;  // sum_j p_j (v_j - head_out) k_j^T Q_h, [dh,d]
    };

    linalg::Matrix ln_jacobian(std::size_t i, const ad::Tensor& gain) const;

    std::size_t d_ = 0, seq_ = 0, out_ = 0;
    bool causal_ = true, layer_norm_ = true;
    double scale_ = 1.0, eps_ = 1e-5;
    WeightSet w_;
    std::vector<std::vector<double>> x_;  // raw particles of this sequence
    std::vector<Head> heads_;
    linalg::Matrix ff_;  // W2 diag(gelu'(W1 xhat + b1)) W1 at `out`
};

// Free-function forms over a trajectory state (batch must be 1).
linalg::Matrix jacobian_attention(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                                  std::size_t in, std::size_t out);
linalg::Matrix jacobian_ff(const SequenceState& s, const WeightSet& w, const FieldGeometry& g, std::size_t in,
                           std::size_t out);

enum class FieldPart { attention, feed_forward, both };

// Reference Jacobians by reverse-mode differentiation of the field code:
// result[in] = d field(x)_out / d x_in for every in.
std::vector<linalg::Matrix> autodiff_jacobians(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                                               std::size_t out, FieldPart part = FieldPart::both);

struct TangentState {
    std::size_t in = 0, out = 0;
    linalg::Matrix y;
    double t = 0.0;
    double log_scale = 0.0;  // true Y = exp(log_scale) * y
};

enum class JacobianSource { closed_form, autodiff };

// Step weights for the Euler grid of a trajectory.
std::vector<WeightSet> trajectory_weights(const LanguageModel& m);

struct TangentOptions {
    JacobianSource source = JacobianSource::closed_form;
    std::optional<std::size_t> head;  // restrict the attention part to one head
    double renormalize_above = 1e100;
};

TangentState tangent_solve(const Trajectory& traj, const std::vector<WeightSet>& weights, const FieldGeometry& g,
                           std::size_t in, std::size_t out, const TangentOptions& opts = {});
// Euler evolution with caller-provided Jacobians J[l] (one per step).
TangentState tangent_solve(const std::vector<linalg::Matrix>& jacobians, double dt, std::size_t in = 0,
                           std::size_t out = 0, double renormalize_above = 1e100);

// (1/(2T)) log lambda_max(Y Y^T), accounting for renormalization.
double sensitivity_score(const TangentState& tangent, double horizon);
double sensitivity_score(const linalg::Matrix& y, double horizon);

struct SensitivityMap {
    std::vector<std::string> tokens;
    std::size_t target = 0;
    std::vector<double> scores;                 // one per source position 0..target
    std::vector<std::vector<double>> per_head;  // [head][source]
    // Attention of each position, averaged over Euler steps: [head][query][key].
    std::vector<std::vector<std::vector<double>>> attention_per_head;
    std::vector<std::vector<double>> attention_mean;  // averaged over heads as well
    std::string aggregation = "sigma_max";
    std::string jacobian = "closed_form";
};

struct SensitivityOptions {
    bool per_head = false;
    bool attention_baseline = false;
    JacobianSource source = JacobianSource::closed_form;
};

SensitivityMap sensitivity_map(const LanguageModel& m, const CharTokenizer& tok, std::span<const std::size_t> tokens,
                               std::size_t target, const SensitivityOptions& opts = {});

std::string sensitivity_json(const SensitivityMap& map);
// Standalone page with tokens shaded by score (red scale).
std::string sensitivity_html(const SensitivityMap& map);

}  // namespace dqf
