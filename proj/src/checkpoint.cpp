#include "dqf/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dqf/config.hpp"
#include "dqf/discretize.hpp"
#include "dqf/error.hpp"

namespace dqf {

using nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw IntegrityError("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

namespace {

template <class U>
void put_le(std::string& buf, U bits) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf += static_cast<char>((bits >> (8 * i)) & 0xff);
}

template <class U>
U get_le(const char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::size_t width_of(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    throw ConfigError("unknown checkpoint dtype '" + dtype + "'");
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_checkpoint(const std::string& dir, const LanguageModel& m, const CharTokenizer& tok,
                     const CheckpointInfo& info) {
    const std::size_t width = width_of(info.dtype);
    std::string blob;
    json inventory = json::array();
    for (const auto& p : m.parameters()) {
        const auto data = p.tensor.data();
        inventory.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", blob.size()},
                             {"bytes", data.size() * width}});
        for (double v : data) {
            if (width == 8)
                put_le(blob, std::bit_cast<std::uint64_t>(v));
            else
                put_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    json manifest;
    manifest["format"] = "dqf-checkpoint";
    manifest["format_version"] = kCheckpointVersion;
    manifest["tool_version"] = kVersion;
    manifest["kind"] = m.kind();
    manifest["model"] = to_json(m.config());
    std::vector<std::uint32_t> vocab(tok.vocabulary().begin(), tok.vocabulary().end());
    manifest["vocabulary"] = vocab;
    manifest["seed"] = info.seed;
    manifest["step"] = info.step;
    manifest["dtype"] = info.dtype;
    manifest["depth"] = {{"steps", m.depth_steps()}, {"horizon", m.depth_horizon()}};
    if (const auto* dm = dynamic_cast<const DiscreteModel*>(&m)) {
        manifest["depth"]["grid"] = dm->layer_times();
        manifest["tune_mode"] = to_string(dm->tune_mode());
        if (dm->has_adapters()) {
            std::vector<std::string> targets;
            for (const auto& a : dm->adapters())
                if (a.layer == 0) targets.push_back(a.target);
            const auto& a0 = dm->adapters().front();
            manifest["lora"] = {{"targets", targets}, {"rank", a0.rank}, {"alpha", a0.alpha}};
        }
    }
    manifest["tensors"] = inventory;
    manifest["sha256"] = sha256_hex(blob);

    std::filesystem::create_directories(dir);
    std::ofstream b(dir + "/tensors.bin", std::ios::binary);
    std::ofstream j(dir + "/manifest.json");
    if (!b || !j) throw IngestionError("cannot write checkpoint into " + dir);
    b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    j << manifest.dump(2) << '\n';
    if (!b || !j) throw IngestionError("failed writing checkpoint into " + dir);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const std::filesystem::path root(dir);
    if (!std::filesystem::exists(root / "manifest.json")) throw MissingBlobError("no manifest.json in " + dir);
    json manifest;
    try {
        manifest = json::parse(read_file(root / "manifest.json"));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        if (manifest.value("format", "") != "dqf-checkpoint") throw VersionError("not a checkpoint manifest");
        if (manifest.at("format_version").get<int>() != kCheckpointVersion)
            throw VersionError("checkpoint format version " + manifest.at("format_version").dump() +
                               " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
        if (!std::filesystem::exists(root / "tensors.bin")) throw MissingBlobError("no tensors.bin in " + dir);
        const std::string blob = read_file(root / "tensors.bin");
        if (sha256_hex(blob) != manifest.at("sha256").get<std::string>())
            throw IntegrityError("tensor blob hash mismatch in " + dir);

        LoadedCheckpoint out;
        out.kind = manifest.at("kind").get<std::string>();
        out.info.seed = manifest.at("seed").get<std::uint64_t>();
        out.info.step = manifest.at("step").get<std::size_t>();
        out.info.dtype = manifest.at("dtype").get<std::string>();
        const std::size_t width = width_of(out.info.dtype);
        const auto vocab = manifest.at("vocabulary").get<std::vector<std::uint32_t>>();
        out.tokenizer = CharTokenizer(std::vector<char32_t>(vocab.begin(), vocab.end()));
        const ModelConfig cfg = model_config_from_json(manifest.at("model"));
        const std::size_t steps = manifest.at("depth").at("steps").get<std::size_t>();
        const double horizon = manifest.at("depth").at("horizon").get<double>();

        Rng rng(0);
        if (out.kind == "continuous") {
            out.model = std::make_unique<OdeModel>(cfg);
        } else if (out.kind == "discrete" || out.kind == "vanilla") {
            std::vector<WeightSet> layers(steps);
            for (std::size_t l = 0; l < steps; ++l) {
                layers[l].t = grid_time(l, steps, horizon);
                for (const auto& spec : weight_targets(cfg))
                    layers[l].get(spec.name) = ad::Tensor::zeros(spec.shape, true);
            }
            auto dm = std::make_unique<DiscreteModel>(cfg, Stem::create(cfg, rng), std::move(layers), horizon, out.kind);
            if (manifest.contains("lora")) {
                LoraConfig lc;
                lc.targets = manifest["lora"].at("targets").get<std::vector<std::string>>();
                lc.rank = manifest["lora"].at("rank").get<std::size_t>();
                lc.alpha = manifest["lora"].at("alpha").get<double>();
                dm->attach_lora(lc, rng);
            }
            dm->set_tune_mode(tune_mode_from_string(manifest.value("tune_mode", "full")));
            out.model = std::move(dm);
        } else {
            throw VersionError("unknown model kind '" + out.kind + "'");
        }

        std::map<std::string, const json*> entries;
        for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = &e;
        const ParamList params = out.model->parameters();
        if (entries.size() != params.size()) {
            for (const auto& p : params)
                if (!entries.count(p.name)) throw MissingBlobError("checkpoint has no tensor '" + p.name + "'");
            throw IntegrityError("checkpoint lists tensors the model does not have");
        }
        for (auto p : params) {
            auto it = entries.find(p.name);
            if (it == entries.end()) throw MissingBlobError("checkpoint has no tensor '" + p.name + "'");
            const json& e = *it->second;
            if (e.at("shape").get<ad::Shape>() != p.tensor.shape())
                throw IntegrityError("tensor '" + p.name + "' has shape " + e.at("shape").dump() + ", expected " +
                                     ad::shape_string(p.tensor.shape()));
            const std::size_t offset = e.at("offset").get<std::size_t>(), bytes = e.at("bytes").get<std::size_t>();
            if (bytes != p.tensor.size() * width || offset + bytes > blob.size())
                throw IntegrityError("tensor '" + p.name + "' lies outside the blob");
            auto dst = p.tensor.mutable_data();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                const char* src = blob.data() + offset + i * width;
                dst[i] = width == 8 ? std::bit_cast<double>(get_le<std::uint64_t>(src))
                                    : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(src)));
            }
        }
        return out;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed manifest: ") + e.what());
    }
}

}  // namespace dqf
