#include "dqf/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "dqf/error.hpp"

namespace dqf {

using nlohmann::json;

namespace {

class Section {
   public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("bad value for " + name_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown configuration key " + name_ + "." + it.key());
    }

   private:
    const json& j_;
    std::string name_;
    std::set<std::string, std::less<>> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_heads", c.n_heads},
            {"d_head", c.d_head},         {"d_mlp", c.d_mlp},             {"n_steps", c.n_steps},
            {"horizon", c.horizon},       {"max_seq_len", c.max_seq_len}, {"d_emb", c.d_emb},
            {"hyper_mode", to_string(c.hyper_mode)}, {"dropout", c.dropout}, {"ln_eps", c.ln_eps}};
}

namespace {

ModelConfig read_model(const json& j, const std::string& name) {
    ModelConfig c;
    Section s(j, name);
    s.get("vocab_size", c.vocab_size);
    s.get("d_model", c.d_model);
    s.get("n_heads", c.n_heads);
    s.get("d_head", c.d_head);
    s.get("d_mlp", c.d_mlp);
    s.get("n_steps", c.n_steps);
    s.get("horizon", c.horizon);
    s.get("max_seq_len", c.max_seq_len);
    s.get("d_emb", c.d_emb);
    std::string mode = to_string(c.hyper_mode);
    s.get("hyper_mode", mode);
    c.hyper_mode = hyper_mode_from_string(mode);
    s.get("dropout", c.dropout);
    s.get("ln_eps", c.ln_eps);
    s.finish();
    return c;
}

}  // namespace

ModelConfig model_config_from_json(const json& j) { return read_model(j, "model"); }

void RunConfig::validate() const {
    ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = 1;  // filled from the corpus
    m.validate();
    train.validate();
    sim.validate();
    if (dtype != "f64" && dtype != "f32") throw ConfigError("dtype must be f64 or f32");
    if (analysis.spectral_grid < 2) throw ConfigError("analysis.spectral_grid must be at least 2");
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    const auto& s = c.sim;
    return {{"model", to_json(c.model)},
            {"train",
             {{"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"weight_decay", t.weight_decay},
              {"warmup_frac", t.warmup_frac},
              {"min_lr_ratio", t.min_lr_ratio},
              {"grad_clip", t.grad_clip},
              {"batch_size", t.batch_size},
              {"total_steps", t.total_steps},
              {"seq_len", t.seq_len},
              {"eval_interval", t.eval_interval},
              {"eval_windows", t.eval_windows},
              {"val_fraction", t.val_fraction},
              {"seed", t.seed}}},
            {"lora", {{"targets", c.lora.targets}, {"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
            {"sim",
             {{"n", s.n},
              {"dim", s.dim},
              {"horizon", s.horizon},
              {"dt", s.dt},
              {"fn", "f" + std::to_string(s.fn)},
              {"seed", s.seed},
              {"init_range", s.init_range},
              {"identity_weights", s.identity_weights},
              {"zero_values", s.zero_values},
              {"cluster_threshold", s.cluster_threshold}}},
            {"analysis", {{"spectral_grid", c.analysis.spectral_grid}, {"variance_samples", c.analysis.variance_samples}}},
            {"corpus", c.corpus},
            {"out", c.out},
            {"dtype", c.dtype}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section top(j, "config");
    if (const json* m = top.child("model")) c.model = read_model(*m, "model");
    if (const json* tj = top.child("train")) {
        Section s(*tj, "train");
        auto& t = c.train;
        s.get("lr", t.lr);
        s.get("beta1", t.beta1);
        s.get("beta2", t.beta2);
        s.get("eps", t.eps);
        s.get("weight_decay", t.weight_decay);
        s.get("warmup_frac", t.warmup_frac);
        s.get("min_lr_ratio", t.min_lr_ratio);
        s.get("grad_clip", t.grad_clip);
        s.get("batch_size", t.batch_size);
        s.get("total_steps", t.total_steps);
        s.get("seq_len", t.seq_len);
        s.get("eval_interval", t.eval_interval);
        s.get("eval_windows", t.eval_windows);
        s.get("val_fraction", t.val_fraction);
        s.get("seed", t.seed);
        s.finish();
    }
    if (const json* lj = top.child("lora")) {
        Section s(*lj, "lora");
        s.get("targets", c.lora.targets);
        s.get("rank", c.lora.rank);
        s.get("alpha", c.lora.alpha);
        s.finish();
    }
    if (const json* sj = top.child("sim")) {
        Section s(*sj, "sim");
        auto& m = c.sim;
        s.get("n", m.n);
        s.get("dim", m.dim);
        s.get("horizon", m.horizon);
        s.get("dt", m.dt);
        if (const json* f = s.child("fn")) m.fn = magnitude_fn_from_string(f->is_string() ? f->get<std::string>() : f->dump());
        s.get("seed", m.seed);
        s.get("init_range", m.init_range);
        s.get("identity_weights", m.identity_weights);
        s.get("zero_values", m.zero_values);
        s.get("cluster_threshold", m.cluster_threshold);
        s.finish();
    }
    if (const json* aj = top.child("analysis")) {
        Section s(*aj, "analysis");
        s.get("spectral_grid", c.analysis.spectral_grid);
        s.get("variance_samples", c.analysis.variance_samples);
        s.finish();
    }
    top.get("corpus", c.corpus);
    top.get("out", c.out);
    top.get("dtype", c.dtype);
    top.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot read config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value");
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("bad override key '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null()) throw ConfigError("override path '" + key + "' is not a section");
        start = dot + 1;
    }
}

void echo_run_config(const std::string& dir, const json& effective) {
    std::filesystem::create_directories(dir);
    std::ofstream c(dir + "/config.json");
    std::ofstream v(dir + "/VERSION");
    if (!c || !v) throw IngestionError("cannot write into " + dir);
    c << effective.dump(2) << '\n';
    v << kVersion << '\n';
}

}  // namespace dqf
