#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/encoder.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

struct DataConfig {
    std::optional<std::string> train_path;
    std::optional<std::string> eval_path;
    std::optional<std::string> vocab_path;
    std::optional<SyntheticSpec> synthetic;
    bool synthetic_seed_explicit = false;
    std::optional<std::vector<std::string>> train_relations;
    std::optional<std::vector<std::string>> eval_relations;
};

/// Parsed, validated run configuration. `json` keeps the fully resolved
/// document (defaults filled, overrides applied); its hash is the config
/// fingerprint recorded in every artifact.
struct RunConfig {
    std::uint64_t seed = 7;
    int threads = 1;
    std::string output_dir = "out";
    DataConfig data;
    std::string encoder_preset = "tiny";
    std::size_t max_len = 64;
    double dropout_rate = 0.0;
    Protocol protocol;
    std::size_t eval_episodes = 1000;
    TrainConfig train;
    std::vector<LossWeights> sweep_grid;
    std::optional<std::string> checkpoint;
    std::optional<std::string> episode_dump;

    nlohmann::json json;

    static RunConfig from_json(nlohmann::json document);
    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
    static nlohmann::json defaults();
};

/// Apply one "dotted.path=value" override; the value is parsed as JSON when
/// possible and treated as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reject any key not present in the documented schema, recursively.
void validate_config_keys(const nlohmann::json& doc);

}  // namespace fewshot
