#pragma once

// Checkpoint directory: manifest.json (format version, model geometry,
// vocabulary, provenance, tensor inventory, SHA-256 of the blob file) and
// tensors.bin (little-endian raw arrays in manifest order).

#include <cstdint>
#include <memory>
#include <string>

#include "dqf/model.hpp"
#include "dqf/tokenizer.hpp"

namespace dqf {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    std::uint64_t seed = 0;
    std::size_t step = 0;
    std::string dtype = "f64";  // blob precision, f64 or f32
};

struct LoadedCheckpoint {
    std::unique_ptr<LanguageModel> model;
    CharTokenizer tokenizer;
    CheckpointInfo info;
    std::string kind;
};

void save_checkpoint(const std::string& dir, const LanguageModel& m, const CharTokenizer& tok,
                     const CheckpointInfo& info);
// Throws VersionError, MissingBlobError or IntegrityError on bad input.
LoadedCheckpoint load_checkpoint(const std::string& dir);

std::string sha256_hex(const std::string& bytes);

}  // namespace dqf
