#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fewshot/run_config.hpp"

namespace fewshot::cli {

/// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

struct GradCheckRow {
    std::string name;
    std::size_t trials = 0;
    double max_error = 0.0;
    double tolerance = 1e-4;
    bool pass() const { return max_error < tolerance; }
};

/// Finite-difference suite over the losses (both contrastive numerator
/// variants) and a 2-layer d=16 encoder under the combined loss.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, std::size_t trials);

/// Dispatch a subcommand. Overrides are dotted-path assignments applied to
/// the config document before validation. Throws config/data/numeric errors;
/// main() maps them to exit codes.
void run_command(const std::string& command, const RunConfig& config, std::ostream& out);

/// Load config (file may be empty for pure-override runs), honoring the
/// FEWSHOT_OUTPUT_DIR environment variable unless the output dir was
/// explicitly overridden.
RunConfig load_config(const std::string& config_path, std::vector<std::string> overrides);

}  // namespace fewshot::cli
