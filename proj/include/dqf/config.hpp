#pragma once

// Run configuration: one JSON document covering the model, training,
// fine-tuning, simulation and analysis settings. Unknown keys are rejected.

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dqf/cluster_sim.hpp"
#include "dqf/discretize.hpp"
#include "dqf/model.hpp"
#include "dqf/training.hpp"

namespace dqf {

inline constexpr const char* kVersion = "0.1.0";

struct AnalysisConfig {
    std::size_t spectral_grid = 33;
    std::size_t variance_samples = 100000;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    LoraConfig lora;
    SimConfig sim;
    AnalysisConfig analysis;
    std::string corpus;        // path to a UTF-8 text file
    std::string out = "run";   // output directory
    std::string dtype = "f64";  // checkpoint blob precision: f64 or f32

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// "section.key=value"; the value is parsed as JSON when possible and taken
// as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Writes config.json and VERSION into `dir` (created if needed).
void echo_run_config(const std::string& dir, const nlohmann::json& effective);

}  // namespace dqf
