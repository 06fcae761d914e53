#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "amsf/datasets.hpp"
#include "amsf/harness.hpp"
#include "amsf/model.hpp"

namespace amsf::config {

struct RunConfig {
    std::string data_root = "data";
    std::string manifest = "manifest.csv";
    datasets::SyntheticRecipe recipe;
    datasets::PreprocessPolicy preprocess;
    ModelConfig model;
    harness::TrainConfig train;
    harness::EvalConfig eval;
    std::array<int, 3> split_ratios = {5, 3, 2};
    uint64_t split_seed = 99;
};

nlohmann::json defaults();
nlohmann::json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j);

/// Reads a config file and deep-merges it over the defaults.
nlohmann::json load_file(const std::filesystem::path& file);

/// "a.b.c=value" with the value parsed as JSON when possible, else a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Stable digest of the canonical config dump.
std::string fingerprint(const nlohmann::json& j);

}  // namespace amsf::config
