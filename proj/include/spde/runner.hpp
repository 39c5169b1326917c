#pragma once

/// @file runner.hpp
/// @brief Experiment orchestration: one entry point per experiment kind,
/// CSV artifacts, and a JSON report
///
///     { "payload": { experiment, config, results, checks },
///       "meta":    { timestamp, threads, payload_sha256 } }
///
/// The payload excludes everything that may differ between identical runs
/// (time, thread count, output directory), so its SHA-256 is a pure function
/// of the configuration.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "spde/config.hpp"

namespace spde {

enum ExitCode : int { exit_pass = 0, exit_invariant_failure = 2, exit_config_error = 3, exit_numeric_blowup = 4 };

/// One named, pinned check. `tolerance` is a number for one-sided checks
/// and [lo, hi] for interval checks.
struct Check {
    std::string name;
    double value = 0.0;
    nlohmann::json tolerance;
    bool pass = false;
    /// Reported-only checks never change the exit status.
    bool asserted = true;
    nlohmann::json detail = nlohmann::json::object();
};

struct RunResult {
    nlohmann::json payload;
    std::string payload_sha256;
    std::vector<Check> checks;
    std::filesystem::path report_path;
    std::vector<std::filesystem::path> files;

    [[nodiscard]] bool passed() const noexcept;
};

[[nodiscard]] nlohmann::json to_json(const Check& c);

/// Lowercase hex SHA-256.
[[nodiscard]] std::string sha256_hex(std::string_view data);

/// Runs the configured experiment and writes its artifacts. Throws on
/// configuration and numerical errors.
[[nodiscard]] RunResult run_experiment(const ExperimentConfig& cfg);

/// run_experiment with the exit-code contract; one line per check on `log`.
[[nodiscard]] int run(const ExperimentConfig& cfg, std::ostream& log);

/// CSV files the plot script knows how to draw, relative to the results directory.
[[nodiscard]] std::vector<std::string> expected_result_files();

/// Writes plot.py next to the results. Throws ConfigError listing the
/// expected files when the directory holds none of them.
std::filesystem::path emit_plot_script(const std::filesystem::path& results_dir);

}  // namespace spde
