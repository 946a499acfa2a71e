#pragma once

// Conventional discrete transformer with independent per-layer weights and
// the same block layout (attention and feed-forward read the same state,
// residual updates with step 1).

#include <cstddef>

#include "dqf/discretize.hpp"

namespace dqf {

// cfg.n_steps layers; initialization matches the continuous model's base
// values (gains 1, biases 0, matrices N(0, 0.02^2)).
DiscreteModel make_vanilla(const ModelConfig& cfg, Rng& rng);

std::size_t vanilla_parameter_count(const ModelConfig& cfg, std::size_t layers);

}  // namespace dqf
