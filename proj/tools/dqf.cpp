#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dqf/baseline.hpp"
#include "dqf/checkpoint.hpp"
#include "dqf/cluster_sim.hpp"
#include "dqf/config.hpp"
#include "dqf/discretize.hpp"
#include "dqf/error.hpp"
#include "dqf/lyapunov.hpp"
#include "dqf/spectral.hpp"
#include "dqf/svg.hpp"
#include "dqf/training.hpp"
#include "selftest/criteria.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dqf;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
};

// The effective configuration: defaults, then the file, then --set
// overrides, then explicit flags.
json effective_config(const Common& c) {
    json doc = to_json(RunConfig{});
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw IngestionError("cannot read config " + c.config);
        json file;
        try {
            file = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
        }
        // Validate the file on its own so unknown keys are reported against it.
        (void)run_config_from_json(file);
        doc.merge_patch(file);
    }
    for (const auto& s : c.sets) apply_override(doc, s);
    if (c.seed) {
        doc["train"]["seed"] = *c.seed;
        doc["sim"]["seed"] = *c.seed;
    }
    if (!c.out.empty()) doc["out"] = c.out;
    (void)run_config_from_json(doc);
    return doc;
}

void log_line(const std::string& s) {
    std::cerr << s << '\n';
    std::cerr.flush();
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path);
    out << j.dump(2) << '\n';
}

std::string loss_svg(const std::vector<LossPoint>& curve, const std::string& title) {
    svg::Chart chart;
    chart.title = title;
    chart.x_label = "step";
    chart.y_label = "loss (nats)";
    svg::Series tr{"train", {}, {}, "", false, false}, va{"validation", {}, {}, "", false, true};
    for (const auto& p : curve) {
        if (std::isfinite(p.train_loss)) tr.x.push_back(double(p.step)), tr.y.push_back(p.train_loss);
        if (std::isfinite(p.val_loss)) va.x.push_back(double(p.step)), va.y.push_back(p.val_loss);
    }
    if (!tr.x.empty()) chart.series.push_back(tr);
    if (!va.x.empty()) chart.series.push_back(va);
    return svg::render(chart);
}

StepCallback progress(std::size_t total, std::size_t every) {
    return [total, every](const LossPoint& p) {
        if (p.step % every != 0 && p.step != total && !std::isfinite(p.val_loss)) return;
        std::string s = "step " + std::to_string(p.step) + "/" + std::to_string(total);
        if (std::isfinite(p.train_loss)) s += " train " + fmt(p.train_loss);
        if (std::isfinite(p.val_loss)) s += " val " + fmt(p.val_loss);
        if (std::isfinite(p.grad_norm)) s += " |g| " + fmt(p.grad_norm, 3);
        log_line(s);
    };
}

void write_training_outputs(const std::string& dir, const TrainResult& res, const TrainConfig& tc,
                            std::size_t seq_len, const std::string& title) {
    write_loss_csv(dir + "/loss.csv", res.curve);
    write_grad_norm_csv(dir + "/grad_norm.csv", res.curve);
    svg::write_text(dir + "/loss.svg", loss_svg(res.curve, title));
    write_json(dir + "/summary.json", {{"steps", res.steps},
                                      {"initial_val_loss", res.initial_val_loss},
                                      {"final_val_loss", res.final_val_loss},
                                      {"final_val_perplexity", std::exp(res.final_val_loss)},
                                      {"eval_seq_len", seq_len},
                                      {"eval_windows", tc.eval_windows}});
}

int cmd_train(const Common& common, const std::string& arch) {
    const json doc = effective_config(common);
    RunConfig rc = run_config_from_json(doc);
    if (rc.corpus.empty()) throw ConfigError("train needs a corpus (config key 'corpus')");
    const std::string text = read_text_file(rc.corpus);
    const CharTokenizer tok = CharTokenizer::build(text);
    const auto ids = tok.encode(text);
    const CorpusSplit split = split_corpus(ids, rc.train.val_fraction);
    rc.model.vocab_size = tok.size();

    json echoed = doc;
    echoed["model"]["vocab_size"] = tok.size();
    echoed["arch"] = arch;
    echo_run_config(rc.out, echoed);
    write_json(rc.out + "/vocabulary.json", {{"size", tok.size()}, {"characters", tok.decode([&] {
                                                 std::vector<std::size_t> all(tok.size());
                                                 for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                                                 return all;
                                             }())}});
    {
        std::ofstream val(rc.out + "/val.txt", std::ios::binary);
        val << tok.decode(split.val);
    }

    Rng rng(rc.train.seed);
    std::unique_ptr<LanguageModel> model;
    if (arch == "ode") {
        auto m = std::make_unique<OdeModel>(rc.model);
        m->initialize(rng);
        model = std::move(m);
    } else {
        model = std::make_unique<DiscreteModel>(make_vanilla(rc.model, rng));
    }
    log_line(arch + " model, " + std::to_string(count_parameters(model->parameters())) + " parameters, vocabulary " +
             std::to_string(tok.size()) + ", " + std::to_string(split.train.size()) + " training tokens");
    const auto res = train(*model, split.train, split.val, rc.train,
                           progress(rc.train.total_steps, std::max<std::size_t>(1, rc.train.eval_interval / 4)));
    const std::size_t len = rc.train.seq_len ? rc.train.seq_len : rc.model.max_seq_len;
    write_training_outputs(rc.out, res, rc.train, len, arch + " training");
    save_checkpoint(rc.out + "/checkpoint", *model, tok, {rc.train.seed, res.steps, rc.dtype});
    std::cout << "final validation loss " << fmt(res.final_val_loss, 6) << " perplexity "
              << fmt(std::exp(res.final_val_loss), 6) << '\n';
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& text_path, std::size_t seq_len, std::size_t windows) {
    const auto lc = load_checkpoint(ckpt);
    const std::string text = read_text_file(text_path);
    const double ppl = evaluate_perplexity(*lc.model, lc.tokenizer, text, seq_len, windows);
    std::cout.precision(17);
    std::cout << "perplexity " << ppl << '\n';
    return 0;
}

int cmd_spectra(const Common& common, const std::string& ckpt, const std::string& circuit,
                std::optional<std::size_t> head, std::optional<std::size_t> grid) {
    json doc = effective_config(common);
    if (grid) doc["analysis"]["spectral_grid"] = *grid;
    const RunConfig rc = run_config_from_json(doc);
    const auto lc = load_checkpoint(ckpt);
    const auto& mc = lc.model->config();
    doc["model"] = to_json(mc);
    echo_run_config(rc.out, doc);

    std::vector<Circuit> circuits;
    if (circuit == "both") circuits = {Circuit::qk, Circuit::ov};
    else circuits = {circuit_from_string(circuit)};
    std::vector<std::size_t> heads;
    if (head) {
        if (*head >= mc.n_heads) throw ConfigError("head index out of range");
        heads = {*head};
    } else {
        for (std::size_t h = 0; h < mc.n_heads; ++h) heads.push_back(h);
    }
    std::vector<SpectralTrace> traces;
    for (auto c : circuits)
        for (auto h : heads) {
            traces.push_back(spectral_trace(*lc.model, h, c, rc.analysis.spectral_grid));
            const auto& tr = traces.back();
            svg::write_text(rc.out + "/spectrum_" + to_string(c) + "_head" + std::to_string(h) + ".svg",
                            spectral_svg(tr));
            log_line(to_string(c) + " head " + std::to_string(h) + ": " + std::to_string(tr.times.size()) +
                     " grid points, max matched jump " + fmt(tr.max_matched_jump(), 6));
        }
    write_spectral_csv(rc.out + "/spectra.csv", traces);
    return 0;
}

int cmd_lyapunov(const Common& common, const std::string& ckpt, const std::string& text_path,
                 const std::string& inline_text, std::size_t target, bool per_head, bool baseline,
                 const std::string& jacobian) {
    json doc = effective_config(common);
    const RunConfig rc = run_config_from_json(doc);
    const auto lc = load_checkpoint(ckpt);
    doc["model"] = to_json(lc.model->config());
    if (text_path.empty() == inline_text.empty()) throw ConfigError("give exactly one of --text or --string");
    const std::string text = text_path.empty() ? inline_text : read_text_file(text_path);
    const auto ids = lc.tokenizer.encode(text);
    if (ids.empty()) throw IngestionError("empty input text");
    if (ids.size() > lc.model->config().max_seq_len)
        throw ConfigError("input has " + std::to_string(ids.size()) + " tokens; the model accepts at most " +
                          std::to_string(lc.model->config().max_seq_len));
    if (target >= ids.size()) throw ConfigError("target position is past the end of the input");
    echo_run_config(rc.out, doc);

    SensitivityOptions so;
    so.per_head = per_head;
    so.attention_baseline = baseline;
    if (jacobian == "autodiff") so.source = JacobianSource::autodiff;
    else if (jacobian != "closed_form") throw ConfigError("--jacobian must be closed_form or autodiff");
    const auto map = sensitivity_map(*lc.model, lc.tokenizer, ids, target, so);
    svg::write_text(rc.out + "/sensitivity.json", sensitivity_json(map) + "\n");
    svg::write_text(rc.out + "/sensitivity.html", sensitivity_html(map));
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.scores.size(); ++i)
        if (map.scores[i] > map.scores[best]) best = i;
    std::cout << "most sensitive source " << best << " ('" << map.tokens[best] << "') score "
              << fmt(map.scores[best], 6) << '\n';
    return 0;
}

int cmd_simulate(const Common& common, const std::optional<std::string>& fn, const std::optional<std::size_t>& n,
                 const std::optional<std::size_t>& dim, const std::optional<double>& horizon,
                 const std::optional<double>& dt, bool identity, bool zero_values, bool svg_out) {
    json doc = effective_config(common);
    if (fn) doc["sim"]["fn"] = *fn;
    if (n) doc["sim"]["n"] = *n;
    if (dim) doc["sim"]["dim"] = *dim;
    if (horizon) doc["sim"]["horizon"] = *horizon;
    if (dt) doc["sim"]["dt"] = *dt;
    if (identity) doc["sim"]["identity_weights"] = true;
    if (zero_values) doc["sim"]["zero_values"] = true;
    const RunConfig rc = run_config_from_json(doc);
    echo_run_config(rc.out, doc);
    const auto traj = simulate(rc.sim);
    write_trajectory_csv(rc.out + "/trajectory.csv", traj);
    write_metrics_csv(rc.out + "/metrics.csv", traj);
    if (svg_out)
        svg::write_text(rc.out + "/trajectory.svg",
                        trajectory_svg(traj, "f" + std::to_string(rc.sim.fn) + ", seed " + std::to_string(rc.sim.seed)));
    const auto& first = traj.metrics.front();
    const auto& last = traj.metrics.back();
    std::cout << "f" << rc.sim.fn << " seed " << rc.sim.seed << ": dispersion ratio " << fmt(traj.dispersion_ratio(), 6)
              << ", angular dispersion " << fmt(first.ang_disp) << " -> " << fmt(last.ang_disp) << ", clusters "
              << first.clusters << " -> " << last.clusters << '\n';
    return 0;
}

int cmd_discretize(const Common& common, const std::string& ckpt, std::size_t steps) {
    json doc = effective_config(common);
    const RunConfig rc = run_config_from_json(doc);
    auto lc = load_checkpoint(ckpt);
    const auto* ode = dynamic_cast<const OdeModel*>(lc.model.get());
    if (!ode) throw ConfigError("discretize needs a continuous checkpoint, got '" + lc.kind + "'");
    doc["model"] = to_json(ode->config());
    doc["discretize"] = {{"source", ckpt}, {"steps", steps}};
    echo_run_config(rc.out, doc);
    const DiscreteModel dm = populate(*ode, steps);
    save_checkpoint(rc.out + "/checkpoint", dm, lc.tokenizer, {lc.info.seed, lc.info.step, rc.dtype});
    std::cout << "populated " << steps << " layers, dt " << fmt(dm.depth_horizon() / double(steps), 6) << '\n';
    return 0;
}

int cmd_finetune(const Common& common, const std::string& ckpt, const std::string& mode_name,
                 std::optional<std::size_t> steps) {
    json doc = effective_config(common);
    const RunConfig rc = run_config_from_json(doc);
    if (rc.corpus.empty()) throw ConfigError("finetune needs a corpus (config key 'corpus')");
    const TuneMode mode = tune_mode_from_string(mode_name);
    auto lc = load_checkpoint(ckpt);
    std::unique_ptr<DiscreteModel> dm;
    if (const auto* ode = dynamic_cast<const OdeModel*>(lc.model.get())) {
        dm = std::make_unique<DiscreteModel>(populate(*ode, steps.value_or(ode->config().n_steps)));
    } else {
        if (steps && *steps != lc.model->depth_steps())
            throw ConfigError("--steps only applies to continuous checkpoints");
        dm.reset(static_cast<DiscreteModel*>(lc.model.release()));
    }
    doc["model"] = to_json(dm->config());
    doc["finetune"] = {{"source", ckpt}, {"mode", mode_name}, {"steps", dm->depth_steps()}};
    echo_run_config(rc.out, doc);

    const std::string text = read_text_file(rc.corpus);
    const auto ids = lc.tokenizer.encode(text);
    const CorpusSplit split = split_corpus(ids, rc.train.val_fraction);
    if (mode == TuneMode::lora && !dm->has_adapters()) {
        Rng rng(rc.train.seed);
        dm->attach_lora(rc.lora, rng);
    }
    log_line(to_string(mode) + " fine-tuning, " + std::to_string(count_parameters(dm->trainable_parameters())) +
             " trainable parameters over " + std::to_string(dm->depth_steps()) + " layers");
    const auto res = finetune(*dm, split.train, split.val, rc.train, mode,
                              progress(rc.train.total_steps, std::max<std::size_t>(1, rc.train.eval_interval / 4)));
    const std::size_t len = rc.train.seq_len ? rc.train.seq_len : dm->config().max_seq_len;
    write_training_outputs(rc.out, res, rc.train, len, to_string(mode) + " fine-tuning");
    save_checkpoint(rc.out + "/checkpoint", *dm, lc.tokenizer, {rc.train.seed, lc.info.step + res.steps, rc.dtype});
    std::cout << "validation loss " << fmt(res.initial_val_loss, 6) << " -> " << fmt(res.final_val_loss, 6) << '\n';
    return 0;
}

int cmd_selftest(const std::vector<int>& only, const std::string& work) {
    selftest::Context ctx;
    ctx.work_dir = work.empty() ? (fs::temp_directory_path() / "dqf-selftest").string() : work;
    ctx.log = &std::cerr;
    const auto results = selftest::run(ctx, only);
    bool ok = true;
    for (const auto& r : results) {
        std::cout << selftest::format(r) << '\n';
        ok = ok && r.pass;
    }
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous-depth transformer toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--set", common.sets, "override a configuration key, e.g. train.lr=1e-3");
        sub->add_option("--seed", common.seed, "seed for every random draw");
        sub->add_option("--out", common.out, "output directory");
    };

    std::string arch = "ode";
    auto* train_cmd = app.add_subcommand("train", "train a model on a corpus");
    add_common(train_cmd, true);
    train_cmd->add_option("--arch", arch, "ode or vanilla")->check(CLI::IsMember({"ode", "vanilla"}));

    std::string ckpt, text, inline_text;
    std::size_t seq_len = 0, windows = 0;
    auto* eval_cmd = app.add_subcommand("eval", "perplexity of a checkpoint on a text file");
    eval_cmd->add_option("--ckpt", ckpt)->required();
    eval_cmd->add_option("--text", text)->required();
    eval_cmd->add_option("--seq-len", seq_len, "window length (default: the model's maximum)");
    eval_cmd->add_option("--windows", windows, "evaluate at most this many windows (0: all)");

    std::string circuit = "qk";
    std::optional<std::size_t> head, grid;
    auto* spectra_cmd = app.add_subcommand("spectra", "eigenvalue traces of QK/OV circuits over depth");
    add_common(spectra_cmd, true);
    spectra_cmd->add_option("--ckpt", ckpt)->required();
    spectra_cmd->add_option("--circuit", circuit)->check(CLI::IsMember({"qk", "ov", "both"}));
    spectra_cmd->add_option("--head", head, "head index (default: all heads)");
    spectra_cmd->add_option("--grid", grid, "number of time points over [0, T]");

    std::size_t target = 0;
    bool per_head = false, baseline = false;
    std::string jacobian = "closed_form";
    auto* lyap_cmd = app.add_subcommand("lyapunov", "token sensitivity map from finite-time Lyapunov exponents");
    add_common(lyap_cmd, true);
    lyap_cmd->add_option("--ckpt", ckpt)->required();
    lyap_cmd->add_option("--text", text, "file holding the input sequence");
    lyap_cmd->add_option("--string", inline_text, "the input sequence itself");
    lyap_cmd->add_option("--target", target, "position whose sensitivity is measured")->required();
    lyap_cmd->add_flag("--per-head", per_head);
    lyap_cmd->add_flag("--attention-baseline", baseline);
    lyap_cmd->add_option("--jacobian", jacobian)->check(CLI::IsMember({"closed_form", "autodiff"}));

    std::optional<std::string> fn;
    std::optional<std::size_t> n, dim;
    std::optional<double> horizon, dt;
    bool identity = false, zero_values = false, no_svg = false;
    auto* sim_cmd = app.add_subcommand("simulate", "attention-only particle simulation");
    add_common(sim_cmd, true);
    sim_cmd->add_option("--fn", fn, "magnitude function f0..f5");
    sim_cmd->add_option("--n", n);
    sim_cmd->add_option("--dim", dim);
    sim_cmd->add_option("--T", horizon);
    sim_cmd->add_option("--dt", dt);
    sim_cmd->add_flag("--identity", identity, "A0 = V0 = I");
    sim_cmd->add_flag("--zero-values", zero_values, "V0 = 0");
    sim_cmd->add_flag("--no-svg", no_svg);

    std::size_t steps = 0;
    auto* disc_cmd = app.add_subcommand("discretize", "populate a continuous model onto a layer grid");
    add_common(disc_cmd, false);
    disc_cmd->add_option("--ckpt", ckpt)->required();
    disc_cmd->add_option("--steps", steps)->required()->check(CLI::PositiveNumber);

    std::string mode = "lora";
    std::optional<std::size_t> ft_steps;
    auto* ft_cmd = app.add_subcommand("finetune", "LoRA or full fine-tuning of a discrete model");
    add_common(ft_cmd, true);
    ft_cmd->add_option("--ckpt", ckpt)->required();
    ft_cmd->add_option("--mode", mode)->check(CLI::IsMember({"lora", "full"}));
    ft_cmd->add_option("--steps", ft_steps, "layer count when starting from a continuous checkpoint");

    std::vector<int> only;
    std::string work;
    auto* self_cmd = app.add_subcommand("selftest", "run the acceptance checks");
    self_cmd->add_option("--only", only, "criterion numbers to run")->delimiter(',');
    self_cmd->add_option("--work", work, "scratch directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train_cmd) return cmd_train(common, arch);
        if (*eval_cmd) return cmd_eval(ckpt, text, seq_len, windows);
        if (*spectra_cmd) return cmd_spectra(common, ckpt, circuit, head, grid);
        if (*lyap_cmd) return cmd_lyapunov(common, ckpt, text, inline_text, target, per_head, baseline, jacobian);
        if (*sim_cmd) return cmd_simulate(common, fn, n, dim, horizon, dt, identity, zero_values, !no_svg);
        if (*disc_cmd) return cmd_discretize(common, ckpt, steps);
        if (*ft_cmd) return cmd_finetune(common, ckpt, mode, ft_steps);
        if (*self_cmd) return cmd_selftest(only, work);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.error_class());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
