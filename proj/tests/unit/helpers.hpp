#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dqf/model.hpp"
#include "dqf/params.hpp"

namespace testing {

inline dqf::ModelConfig tiny_config(std::size_t vocab = 7) {
    dqf::ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_head = 4;
    c.d_mlp = 16;
    c.n_steps = 3;
    c.horizon = 3.0;
    c.max_seq_len = 8;
    c.d_emb = 8;
    c.dropout = 0.0;
    return c;
}

inline dqf::OdeModel tiny_model(std::uint64_t seed = 3, std::size_t vocab = 7) {
    dqf::OdeModel m(tiny_config(vocab));
    dqf::Rng rng(seed);
    m.initialize(rng);
    return m;
}

inline std::vector<std::size_t> random_ids(std::size_t n, std::size_t vocab, std::uint64_t seed) {
    dqf::Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
    std::vector<std::size_t> ids(n);
    for (auto& i : ids) i = pick(rng);
    return ids;
}

inline dqf::WeightSet random_weights(const dqf::ModelConfig& c, dqf::Rng& rng, double sd = 0.5) {
    const std::size_t d = c.d_model, a = c.attn_width(), f = c.d_mlp;
    dqf::WeightSet w;
    w.attn_ln_gain = dqf::normal_tensor({d}, sd, rng, false);
    w.attn_ln_bias = dqf::normal_tensor({d}, sd, rng, false);
    w.q = dqf::normal_tensor({a, d}, sd, rng, false);
    w.k = dqf::normal_tensor({a, d}, sd, rng, false);
    w.v = dqf::normal_tensor({a, d}, sd, rng, false);
    w.o = dqf::normal_tensor({d, a}, sd, rng, false);
    w.ff_ln_gain = dqf::normal_tensor({d}, sd, rng, false);
    w.ff_ln_bias = dqf::normal_tensor({d}, sd, rng, false);
    w.w1 = dqf::normal_tensor({f, d}, sd, rng, false);
    w.b1 = dqf::normal_tensor({f}, sd, rng, false);
    w.w2 = dqf::normal_tensor({d, f}, sd, rng, false);
    w.b2 = dqf::normal_tensor({d}, sd, rng, false);
    return w;
}

inline dqf::SequenceState random_state(std::size_t seq, std::size_t d, dqf::Rng& rng, bool causal = true) {
    dqf::SequenceState s;
    s.x = dqf::normal_tensor({seq, d}, 1.0, rng, false);
    s.seq = seq;
    s.causal = causal;
    return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace testing
