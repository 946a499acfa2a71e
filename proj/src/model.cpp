#include "dqf/model.hpp"

#include <cmath>
#include <memory>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"

namespace dqf {

void ModelConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (d_model == 0 || n_heads == 0 || d_head == 0 || d_mlp == 0 || d_emb == 0)
        throw ConfigError("model widths must be positive");
    if (n_steps == 0) throw ConfigError("n_steps must be at least 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
    if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

double grid_time(std::size_t step, std::size_t n_steps, double horizon) {
    return horizon * static_cast<double>(step) / static_cast<double>(n_steps);
}

std::vector<double> grid_times(std::size_t n_steps, double horizon) {
    std::vector<double> t(n_steps + 1);
    for (std::size_t l = 0; l <= n_steps; ++l) t[l] = grid_time(l, n_steps, horizon);
    return t;
}

std::vector<TargetSpec> weight_targets(const ModelConfig& c) {
    const std::size_t d = c.d_model, a = c.attn_width();
    return {
        {"attn_ln_gain", {d}, 0.0, 1.0},
        {"attn_ln_bias", {d}, 0.0, 0.0},
        {"q", {a, d}, 0.02, 0.0},
        {"k", {a, d}, 0.02, 0.0},
        {"v", {a, d}, 0.02, 0.0},
        {"o", {d, a}, 0.02, 0.0},
        {"ff_ln_gain", {d}, 0.0, 1.0},
        {"ff_ln_bias", {d}, 0.0, 0.0},
        {"w1", {c.d_mlp, d}, 0.02, 0.0},
        {"b1", {c.d_mlp}, 0.0, 0.0},
        {"w2", {d, c.d_mlp}, 0.02, 0.0},
        {"b2", {d}, 0.0, 0.0},
    };
}

ad::Tensor& WeightSet::get(std::string_view name) {
    if (name == "attn_ln_gain") return attn_ln_gain;
    if (name == "attn_ln_bias") return attn_ln_bias;
    if (name == "q") return q;
    if (name == "k") return k;
    if (name == "v") return v;
    if (name == "o") return o;
    if (name == "ff_ln_gain") return ff_ln_gain;
    if (name == "ff_ln_bias") return ff_ln_bias;
    if (name == "w1") return w1;
    if (name == "b1") return b1;
    if (name == "w2") return w2;
    if (name == "b2") return b2;
    throw RegistryError("no weight named '" + std::string(name) + "'");
}

const ad::Tensor& WeightSet::get(std::string_view name) const { return const_cast<WeightSet*>(this)->get(name); }

WeightSet WeightSet::from_map(const WeightMap& m, double t) {
    WeightSet w;
    w.t = t;
    for (const auto& [name, tensor] : m) w.get(name) = tensor;
    return w;
}

WeightMap WeightSet::to_map() const {
    WeightMap m;
    for (const char* name : {"attn_ln_gain", "attn_ln_bias", "q", "k", "v", "o", "ff_ln_gain",
                             "ff_ln_bias", "w1", "b1", "w2", "b2"})
        if (get(name).defined()) m.emplace(name, get(name));
    return m;
}

namespace {

ad::Tensor maybe_dropout(const ad::Tensor& t, const FieldOptions& opts) {
    if (opts.dropout <= 0.0) return t;
    if (!opts.rng) throw ContractError("dropout requested without a random generator");
    return ad::dropout(t, opts.dropout, *opts.rng);
}

}  // namespace

ad::Tensor attention_field(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                           const FieldOptions& opts) {
    const ad::Tensor xa = opts.layer_norm ? ad::layernorm(s.x, w.attn_ln_gain, w.attn_ln_bias, g.ln_eps) : s.x;
    const auto q = ad::linear(xa, w.q);
    const auto k = ad::linear(xa, w.k);
    const auto v = ad::linear(xa, w.v);
    kernels::AttentionShape shape{s.batch, s.seq, g.heads, g.head_dim, opts.causal,
                                  1.0 / std::sqrt(static_cast<double>(g.head_dim))};
    std::vector<double> ds;
    if (opts.dropout > 0.0) {
        if (!opts.rng) throw ContractError("dropout requested without a random generator");
        ds = ad::dropout_scales(shape.prob_count(), opts.dropout, *opts.rng);
    }
    auto att = ad::attention(q, k, v, shape, ds);
    if (opts.attention_probs) *opts.attention_probs = std::move(att.probs);
    return ad::linear(att.out, w.o);
}

ad::Tensor ff_field(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                    const FieldOptions& opts) {
    const ad::Tensor xf = opts.layer_norm ? ad::layernorm(s.x, w.ff_ln_gain, w.ff_ln_bias, g.ln_eps) : s.x;
    return ad::linear(ad::gelu(ad::linear(xf, w.w1, &w.b1)), w.w2, &w.b2);
}

ad::Tensor vector_field(const SequenceState& s, const WeightSet& w, const FieldGeometry& g,
                        const FieldOptions& opts) {
    auto a = maybe_dropout(attention_field(s, w, g, opts), opts);
    auto f = maybe_dropout(ff_field(s, w, g, opts), opts);
    return ad::add(a, f);
}

Trajectory euler_solve(const SequenceState& x0, const LayerWeights& weights, std::size_t n_steps,
                       double horizon, const FieldGeometry& g, const SolveOptions& opts) {
    if (n_steps == 0) throw ContractError("euler_solve: need at least one step");
    if (!(horizon > 0.0)) throw ContractError("euler_solve: horizon must be positive");
    const double dt = horizon / static_cast<double>(n_steps);
    Trajectory traj;
    SequenceState cur = x0;
    cur.t = 0.0;
    traj.states.push_back(cur);
    std::vector<double> probs;
    for (std::size_t l = 0; l < n_steps; ++l) {
        const double t = grid_time(l, n_steps, horizon);
        FieldOptions fo = opts.field;
        fo.causal = x0.causal;
        if (opts.on_attention) fo.attention_probs = &probs;
        const WeightSet w = weights(l, t);
        SequenceState next = cur;
        next.x = ad::axpy(cur.x, dt, vector_field(cur, w, g, fo));
        next.t = grid_time(l + 1, n_steps, horizon);
        if (!next.x.all_finite()) throw DivergenceError("non-finite particle state", l + 1);
        if (opts.on_attention) opts.on_attention(l, probs);
        cur = std::move(next);
        if (opts.keep_trajectory || l + 1 == n_steps) traj.states.push_back(cur);
    }
    return traj;
}

Trajectory euler_solve(const SequenceState& x0, const TimeWeightFactory& factory,
                       std::size_t n_steps, double horizon, const FieldGeometry& g,
                       const SolveOptions& opts) {
    return euler_solve(
        x0, [&](std::size_t, double t) { return WeightSet::from_map(factory.materialize(t), t); },
        n_steps, horizon, g, opts);
}

Stem Stem::create(const ModelConfig& cfg, Rng& rng) {
    Stem s;
    s.tok_emb = normal_tensor({cfg.vocab_size, cfg.d_model}, 0.02, rng);
    s.pos_emb = normal_tensor({cfg.max_seq_len, cfg.d_model}, 0.02, rng);
    s.lnf_gain = ad::Tensor::full({cfg.d_model}, 1.0, true);
    s.lnf_bias = ad::Tensor::zeros({cfg.d_model}, true);
    s.head = normal_tensor({cfg.vocab_size, cfg.d_model}, 0.02, rng);
    return s;
}

Stem Stem::clone() const {
    return {tok_emb.detach(true), pos_emb.detach(true), lnf_gain.detach(true), lnf_bias.detach(true),
            head.detach(true)};
}

ParamList Stem::parameters() const {
    return {{"stem.tok_emb", tok_emb, true},
            {"stem.pos_emb", pos_emb, true},
            {"stem.lnf_gain", lnf_gain, false},
            {"stem.lnf_bias", lnf_bias, false},
            {"stem.head", head, true}};
}

SequenceState LanguageModel::embed(std::span<const std::size_t> tokens, std::size_t batch) const {
    const auto& cfg = config();
    if (batch == 0 || tokens.empty() || tokens.size() % batch != 0)
        throw DimensionError("token count " + std::to_string(tokens.size()) + " not divisible into " +
                             std::to_string(batch) + " sequences");
    const std::size_t seq = tokens.size() / batch;
    if (seq > cfg.max_seq_len)
        throw DimensionError("sequence of " + std::to_string(seq) + " exceeds max_seq_len " +
                             std::to_string(cfg.max_seq_len));
    std::vector<std::size_t> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % seq;
    SequenceState s;
    s.x = ad::add(ad::embedding(stem().tok_emb, tokens), ad::embedding(stem().pos_emb, pos));
    s.batch = batch;
    s.seq = seq;
    s.causal = true;
    return s;
}

LayerWeights LanguageModel::weight_source() const {
    return [this](std::size_t step, double) { return layer_weights(step); };
}

ForwardResult LanguageModel::forward(std::span<const std::size_t> tokens, std::size_t batch,
                                     const ForwardOptions& opts) const {
    const auto& cfg = config();
    SequenceState x0 = embed(tokens, batch);
    ForwardResult res;
    ad::Tensor final_x = x0.x;
    if (depth_steps() > 0) {
        SolveOptions so;
        so.keep_trajectory = opts.keep_trajectory;
        so.on_attention = opts.on_attention;
        if (opts.training && cfg.dropout > 0.0) {
            so.field.dropout = cfg.dropout;
            so.field.rng = opts.rng;
        }
        res.trajectory = euler_solve(x0, weight_source(), depth_steps(), depth_horizon(),
                                     FieldGeometry::of(cfg), so);
        final_x = res.trajectory.states.back().x;
    } else {
        res.trajectory.states.push_back(x0);
    }
    const auto& st = stem();
    res.logits = ad::linear(ad::layernorm(final_x, st.lnf_gain, st.lnf_bias, cfg.ln_eps), st.head);
    return res;
}

OdeModel::OdeModel(ModelConfig cfg)
    : cfg_(std::move(cfg)), factory_(weight_targets(cfg_), cfg_.d_emb, cfg_.hyper_mode) {
    cfg_.validate();
    Rng zero(0);
    stem_ = Stem::create(cfg_, zero);
}

void OdeModel::initialize(Rng& rng) {
    stem_ = Stem::create(cfg_, rng);
    factory_.initialize(rng);
}

WeightSet OdeModel::weights_at(double t) const { return WeightSet::from_map(factory_.materialize(t), t); }

WeightSet OdeModel::layer_weights(std::size_t step) const {
    return weights_at(grid_time(step, cfg_.n_steps, cfg_.horizon));
}

LayerWeights OdeModel::weight_source() const {
    auto times = grid_times(cfg_.n_steps, cfg_.horizon);
    times.pop_back();
    auto maps = std::make_shared<std::vector<WeightMap>>(factory_.materialize_grid(times));
    return [maps, times](std::size_t step, double) { return WeightSet::from_map((*maps)[step], times[step]); };
}

ParamList OdeModel::parameters() const {
    ParamList p = stem_.parameters();
    for (auto& fp : factory_.parameters()) p.push_back(std::move(fp));
    return p;
}

}  // namespace dqf
