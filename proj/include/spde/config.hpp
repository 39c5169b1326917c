#pragma once

/// @file config.hpp
/// @brief Flat `key = value` experiment configuration with dotted sections.
///
/// Lines are `section.key = value`; `#` starts a comment. Lists are comma
/// separated. Every key has a default (see default_config_text()); unknown
/// keys and all constraint violations are reported together in one ConfigError.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spde/samples.hpp"

namespace spde {

enum class ExperimentKind { Simulate, Expand, Converge, ResolventCheck, Functional, Musiela };

[[nodiscard]] std::string to_string(ExperimentKind k);
[[nodiscard]] ExperimentKind experiment_from_string(std::string_view s);

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Converge;
    samples::TransportConfig transport;
    std::vector<double> eps_list;
    std::vector<int> m_list;
    std::size_t n_paths = 64;
    std::uint64_t seed = 20240611;
    std::filesystem::path out_dir = "results";
    std::size_t threeterm_paths = 4;
    std::vector<double> lambdas;
    std::vector<double> resolvent_eps;
    samples::HJMConfig hjm;
    std::vector<double> martingale_eps;
    std::size_t martingale_paths = 10000;
    double x0 = 1.0;
    double functional_x = 1.0;
    bool write_binary = false;
};

using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines; syntax errors are collected into a ConfigError.
[[nodiscard]] ConfigMap parse_config_text(std::string_view text);
[[nodiscard]] ConfigMap read_config_file(const std::filesystem::path& path);

/// Builds a config from defaults overridden by `entries`, then validates.
/// Throws ConfigError listing every unknown key, malformed value and
/// violated constraint.
[[nodiscard]] ExperimentConfig make_config(const ConfigMap& entries);

/// Every constraint violation of cfg, in key order.
[[nodiscard]] std::vector<std::string> validate_config(const ExperimentConfig& cfg);

/// All keys with their defaults and a one-line description.
[[nodiscard]] std::string default_config_text();

/// Canonical `key = value` rendering of cfg (stable key order).
[[nodiscard]] ConfigMap config_entries(const ExperimentConfig& cfg);

}  // namespace spde
