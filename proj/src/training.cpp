#include "dqf/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"

namespace dqf {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (warmup_frac < 0.0 || warmup_frac > 1.0) throw ConfigError("warmup_frac must lie in [0, 1]");
    if (!(min_lr_ratio > 0.0) || min_lr_ratio > 1.0) throw ConfigError("min_lr_ratio must lie in (0, 1]");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in (0, 1)");
}

std::size_t TrainConfig::warmup_steps() const {
    return static_cast<std::size_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
    const std::size_t warm = cfg.warmup_steps();
    if (step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
    if (cfg.total_steps <= warm) return cfg.lr;
    const double progress =
        std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm));
    const double r = cfg.min_lr_ratio;
    return cfg.lr * (r + (1.0 - r) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

AdamState adam_init(const ParamList& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.tensor.size(), 0.0);
        s.v.emplace_back(p.tensor.size(), 0.0);
    }
    return s;
}

void adam_step(const ParamList& params, AdamState& state, const TrainConfig& cfg, double lr) {
    if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto t = params[i].tensor;
        if (t.size() != state.m[i].size()) throw DimensionError("adam_step: state shape mismatch for " + params[i].name);
        const auto g = t.grad();
        for (double x : g)
            if (!std::isfinite(x)) throw DivergenceError("non-finite gradient in " + params[i].name, state.step);
        auto w = t.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const double wd = params[i].decay ? cfg.weight_decay : 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mh = m[j] / bc1, vh = v[j] / bc2;
            w[j] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + wd * w[j]);
        }
    }
}

double global_grad_norm(const ParamList& params) {
    double s = 0.0;
    for (const auto& p : params)
        for (double x : p.tensor.grad()) s += x * x;
    return std::sqrt(s);
}

void zero_grads(const ParamList& params) {
    for (auto p : params) p.tensor.zero_grad();
}

CorpusSplit split_corpus(const std::vector<std::size_t>& ids, double val_fraction) {
    const auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(ids.size())));
    if (n_val < 2 || n_val >= ids.size()) throw IngestionError("corpus too short to split");
    const auto cut = static_cast<std::ptrdiff_t>(ids.size() - n_val);
    return {{ids.begin(), ids.begin() + cut}, {ids.begin() + cut, ids.end()}};
}

namespace {

constexpr std::size_t kEvalBatch = 16;

void sample_batch(std::span<const std::size_t> ids, std::size_t batch, std::size_t len, Rng& rng,
                  std::vector<std::size_t>& inputs, std::vector<std::size_t>& targets) {
    inputs.clear();
    targets.clear();
    const std::size_t range = ids.size() - len;  // offsets 0..range-1 leave room for the target
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t off = static_cast<std::size_t>(rng() % range);
        for (std::size_t i = 0; i < len; ++i) {
            inputs.push_back(ids[off + i]);
            targets.push_back(ids[off + i + 1]);
        }
    }
}

}  // namespace

double evaluate_loss(const LanguageModel& model, std::span<const std::size_t> ids,
                     std::size_t seq_len, std::size_t max_windows) {
    if (ids.size() < 2) throw IngestionError("need at least two tokens to evaluate");
    if (seq_len == 0) seq_len = model.config().max_seq_len;
    ad::NoGrad no_grad;
    double total = 0.0;
    std::size_t count = 0;
    std::size_t windows = 0;
    std::vector<std::size_t> inputs, targets;
    auto flush = [&](std::size_t batch) {
        if (inputs.empty()) return;
        const auto logits = model.forward_logits(inputs, batch);
        total += ad::cross_entropy(logits, targets).item() * static_cast<double>(targets.size());
        count += targets.size();
        inputs.clear();
        targets.clear();
    };
    std::size_t batch = 0;
    for (std::size_t start = 0; start + 1 < ids.size(); start += seq_len) {
        if (max_windows && windows == max_windows) break;
        const std::size_t len = std::min(seq_len, ids.size() - 1 - start);
        if (len != seq_len) {
            flush(batch);
            batch = 0;
        }
        for (std::size_t i = 0; i < len; ++i) {
            inputs.push_back(ids[start + i]);
            targets.push_back(ids[start + i + 1]);
        }
        ++batch;
        ++windows;
        if (batch == kEvalBatch || len != seq_len) {
            flush(batch);
            batch = 0;
        }
    }
    flush(batch);
    return total / static_cast<double>(count);
}

double evaluate_perplexity(const LanguageModel& model, const CharTokenizer& tok, std::string_view text,
                           std::size_t seq_len, std::size_t max_windows) {
    const auto ids = tok.encode(text);
    return std::exp(evaluate_loss(model, ids, seq_len, max_windows));
}

TrainResult train(LanguageModel& model, std::span<const std::size_t> train_ids,
                  std::span<const std::size_t> val_ids, const TrainConfig& cfg,
                  const StepCallback& on_step) {
    cfg.validate();
    const std::size_t len = cfg.seq_len ? cfg.seq_len : model.config().max_seq_len;
    if (len > model.config().max_seq_len) throw ConfigError("seq_len exceeds the model's max_seq_len");
    if (train_ids.size() <= len + 1) throw IngestionError("training split is not longer than the sequence length");

    Rng data_rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const ParamList params = model.trainable_parameters();
    AdamState adam = adam_init(params);

    TrainResult res;
    LossPoint p0;
    p0.step = 0;
    p0.lr = lr_schedule(0, cfg);
    p0.val_loss = evaluate_loss(model, val_ids, len, cfg.eval_windows);
    res.initial_val_loss = res.final_val_loss = p0.val_loss;
    res.curve.push_back(p0);
    if (on_step) on_step(p0);

    std::vector<std::size_t> inputs, targets;
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        sample_batch(train_ids, cfg.batch_size, len, data_rng, inputs, targets);
        LossPoint pt;
        pt.step = step;
        {
            ad::Tape tape;
            ForwardOptions fo;
            fo.training = true;
            fo.rng = &dropout_rng;
            const auto logits = model.forward(inputs, cfg.batch_size, fo).logits;
            const auto loss = ad::cross_entropy(logits, targets);
            pt.train_loss = loss.item();
            if (!std::isfinite(pt.train_loss)) throw DivergenceError("non-finite training loss", step);
            zero_grads(params);
            tape.backward(loss);
        }
        pt.grad_norm = global_grad_norm(params);
        if (!std::isfinite(pt.grad_norm)) throw DivergenceError("non-finite gradient norm", step);
        if (cfg.grad_clip > 0.0 && pt.grad_norm > cfg.grad_clip) {
            const double s = cfg.grad_clip / pt.grad_norm;
            for (auto p : params)
                for (auto& g : p.tensor.mutable_grad()) g *= s;
        }
        pt.lr = lr_schedule(step, cfg);
        adam_step(params, adam, cfg, pt.lr);
        if (step % cfg.eval_interval == 0 || step == cfg.total_steps) {
            pt.val_loss = evaluate_loss(model, val_ids, len, cfg.eval_windows);
            res.final_val_loss = pt.val_loss;
        }
        res.curve.push_back(pt);
        res.steps = step;
        if (on_step) on_step(pt);
    }
    return res;
}

namespace {
std::string cell(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace

void write_loss_csv(const std::string& path, const std::vector<LossPoint>& curve) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out << "step,lr,train_loss,val_loss\n";
    for (const auto& p : curve)
        out << p.step << ',' << cell(p.lr) << ',' << cell(p.train_loss) << ',' << cell(p.val_loss) << '\n';
}

void write_grad_norm_csv(const std::string& path, const std::vector<LossPoint>& curve) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out << "step,grad_norm\n";
    for (const auto& p : curve)
        if (!std::isnan(p.grad_norm)) out << p.step << ',' << cell(p.grad_norm) << '\n';
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace dqf
