#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "dqf/baseline.hpp"
#include "dqf/checkpoint.hpp"
#include "dqf/config.hpp"
#include "dqf/discretize.hpp"
#include "dqf/error.hpp"
#include "helpers.hpp"

using namespace dqf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "dqf_unit_ckpt" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

const CharTokenizer& tok7() {
    static const auto t = CharTokenizer::build("abcdefg");
    return t;
}

}  // namespace

TEST_CASE("round trip reproduces logits bitwise") {
    const auto m = testing::tiny_model(4);
    const auto ids = testing::random_ids(8, 7, 1);
    const auto dir = scratch("ode");
    save_checkpoint(dir.string(), m, tok7(), {7, 12, "f64"});
    const auto loaded = load_checkpoint(dir.string());
    CHECK(loaded.kind == "continuous");
    CHECK(loaded.info.seed == 7);
    CHECK(loaded.info.step == 12);
    CHECK(loaded.tokenizer.vocabulary() == tok7().vocabulary());
    CHECK(testing::bitwise_equal(m.forward_logits(ids).data(), loaded.model->forward_logits(ids).data()));

    auto d = populate(m, 5);
    Rng rng(3);
    d.attach_lora({{"q", "v"}, 2, 16.0}, rng);
    for (auto& a : d.adapters()) a.b.mutable_data()[0] = 0.5;
    const auto ddir = scratch("discrete");
    save_checkpoint(ddir.string(), d, tok7(), {});
    const auto dl = load_checkpoint(ddir.string());
    CHECK(dl.kind == "discrete");
    CHECK(testing::bitwise_equal(d.forward_logits(ids).data(), dl.model->forward_logits(ids).data()));

    const auto van = make_vanilla(testing::tiny_config(), rng);
    const auto vdir = scratch("vanilla");
    save_checkpoint(vdir.string(), van, tok7(), {});
    CHECK(testing::bitwise_equal(van.forward_logits(ids).data(),
                                 load_checkpoint(vdir.string()).model->forward_logits(ids).data()));
}

TEST_CASE("save, load, save is byte identical") {
    const auto m = testing::tiny_model(5);
    const auto a = scratch("a"), b = scratch("b");
    save_checkpoint(a.string(), m, tok7(), {1, 2, "f64"});
    const auto l = load_checkpoint(a.string());
    save_checkpoint(b.string(), *l.model, l.tokenizer, l.info);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "tensors.bin") == slurp(b / "tensors.bin"));
}

TEST_CASE("manifest lists every tensor and the blob hash") {
    const auto m = testing::tiny_model(5);
    const auto dir = scratch("manifest");
    save_checkpoint(dir.string(), m, tok7(), {});
    const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(j.at("sha256") == sha256_hex(slurp(dir / "tensors.bin")));
    CHECK(j.at("tensors").size() == m.parameters().size());
}

TEST_CASE("corrupt checkpoints raise distinct errors") {
    const auto m = testing::tiny_model(5);
    const auto dir = scratch("bad");
    save_checkpoint(dir.string(), m, tok7(), {});
    const auto blob = slurp(dir / "tensors.bin");
    const auto manifest = slurp(dir / "manifest.json");

    {
        std::ofstream out(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
        out << blob.substr(0, blob.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IntegrityError);

    fs::remove(dir / "tensors.bin");
    CHECK_THROWS_AS(load_checkpoint(dir.string()), MissingBlobError);

    {
        std::ofstream out(dir / "tensors.bin", std::ios::binary);
        out << blob;
    }
    auto j = nlohmann::json::parse(manifest);
    j["format_version"] = kCheckpointVersion + 1;
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        out << j.dump();
    }
    CHECK_THROWS_AS(load_checkpoint(dir.string()), VersionError);
    CHECK_THROWS_AS(load_checkpoint((dir / "nothing").string()), MissingBlobError);
}

TEST_CASE("single-precision blobs load close to the original") {
    const auto m = testing::tiny_model(6);
    const auto dir = scratch("f32");
    save_checkpoint(dir.string(), m, tok7(), {0, 0, "f32"});
    const auto l = load_checkpoint(dir.string());
    CHECK(l.info.dtype == "f32");
    const auto ids = testing::random_ids(6, 7, 2);
    CHECK(testing::max_abs_diff(m.forward_logits(ids).data(), l.model->forward_logits(ids).data()) < 1e-4);
}

TEST_CASE("configuration round trip and strictness") {
    RunConfig c;
    c.model.vocab_size = 5;
    c.train.beta2 = 0.999;
    c.lora.rank = 4;
    const auto j = to_json(c);
    const auto back = run_config_from_json(j);
    CHECK(to_json(back) == j);

    auto typo = j;
    typo["train"]["learning_rate"] = 0.1;
    CHECK_THROWS_AS(run_config_from_json(typo), ConfigError);
    auto top = j;
    top["extra"] = 1;
    CHECK_THROWS_AS(run_config_from_json(top), ConfigError);

    auto doc = j;
    apply_override(doc, "train.lr=0.005");
    apply_override(doc, "model.hyper_mode=shared_mlp");
    const auto o = run_config_from_json(doc);
    CHECK(o.train.lr == 0.005);
    CHECK(o.model.hyper_mode == HyperMode::shared_mlp);
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
}

TEST_CASE("effective config is echoed with the version") {
    const auto dir = scratch("echo");
    echo_run_config(dir.string(), to_json(RunConfig{}));
    CHECK(fs::exists(dir / "config.json"));
    CHECK(slurp(dir / "VERSION").find(kVersion) != std::string::npos);
}

TEST_CASE("sha256 of a known string") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
