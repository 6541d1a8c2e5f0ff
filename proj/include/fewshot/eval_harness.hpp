#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/trainer.hpp"

namespace fewshot {

struct QueryRecord {
    std::size_t true_label = 0;
    std::size_t predicted_label = 0;
    std::string relation;  // global relation id of the query
};

struct EpisodeResult {
    std::size_t episode = 0;
    std::vector<QueryRecord> queries;
    double accuracy = 0.0;  // correct / total, exactly
};

struct PerClassStat {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

struct RunReport {
    std::string fingerprint;
    nlohmann::json config = nlohmann::json::object();
    std::string notes;
    std::size_t n_episodes = 0;
    double mean_accuracy = 0.0;
    double ci_half_width = 0.0;  // 95%, normal approximation over episode accuracies
    std::map<std::string, PerClassStat> per_relation;
    std::vector<EpisodeResult> episodes;
};

struct EvalOptions {
    Protocol protocol;
    std::size_t n_episodes = 1000;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string fingerprint;                   // recorded verbatim in the report
    nlohmann::json config = nlohmann::json::object();
    std::optional<std::string> episode_dump_path;  // JSON-lines audit trail
};

/// Maps one example to its embedding h (length d). Backs stub encoders.
using Embedder = std::function<std::vector<double>(const Example&)>;

/// Full evaluation: per episode, fine_tune_on_support then argmax over query
/// logits. Episodes run on immutable snapshots and may execute concurrently;
/// results are ordered by episode index, so the report does not depend on the
/// thread count.
RunReport evaluate(const EncoderParams& params, const Dataset& dataset_eval,
                   const TrainConfig& cfg, const EvalOptions& opts);

/// Same protocol with a fixed embedding function and head-only adaptation.
RunReport evaluate_with_embedder(const Embedder& embed, std::size_t d_model,
                                 const Dataset& dataset_eval, const TrainConfig& cfg,
                                 const EvalOptions& opts);

/// Pooled per-relation accuracy over all query records. Relations never
/// sampled are absent from the map.
std::map<std::string, double> per_class_accuracy(const std::vector<EpisodeResult>& results);
std::map<std::string, PerClassStat> per_class_counts(const std::vector<EpisodeResult>& results);

struct SweepCell {
    LossWeights weights;
    std::optional<RunReport> report;  // absent when the cell failed
    std::string error;
};

struct SweepReport {
    std::vector<SweepCell> cells;
};

/// Full meta-train + evaluate per weight cell, identical seeds across cells
/// so comparisons are paired. A failing cell records its error and the sweep
/// continues.
SweepReport ablation_sweep(const Dataset& train, const Dataset& eval_set,
                           const std::vector<LossWeights>& grid, const TrainConfig& base_cfg,
                           const EncoderParams& initial, const EvalOptions& opts);

// --- serialization ---

nlohmann::json report_to_json(const RunReport& report);
void write_report_json(const std::string& path, const RunReport& report);
void write_protocol_csv(const std::string& path, const std::string& preset,
                        const Protocol& protocol, const RunReport& report);
void write_per_class_csv(const std::string& path, const RunReport& report);
void write_ablation_csv(const std::string& path, const SweepReport& sweep);

/// FNV-1a hash of a canonical JSON dump; the config fingerprint in reports.
std::string fingerprint_of(const nlohmann::json& config);

/// Caveat line stamped into every report.
extern const char* kReportNotes;

}  // namespace fewshot
