#pragma once

/// @file samples.hpp
/// @brief Test functions and the two reference problems used by the CLI,
/// the unit tests and the acceptance suite.

#include <cstddef>
#include <string>
#include <vector>

#include "spde/expansion.hpp"
#include "spde/grid_space.hpp"
#include "spde/musiela.hpp"

namespace spde::samples {

struct Sample {
    std::string name;
    GridFunction f;
};

/// Five elements of H(R) with w = 1; the grid must cover [-20, 40] or less.
[[nodiscard]] std::vector<Sample> full_line_suite(const GridSpec& grid);

/// Three slowly varying elements of H(R) with small ||A^2 f|| / ||f||, w = 1.
[[nodiscard]] std::vector<Sample> broad_suite(const GridSpec& grid);

/// Five elements of H(R+) with w = 1.
[[nodiscard]] std::vector<Sample> half_line_suite(const GridSpec& grid);

struct TransportConfig {
    double x_min = -20.0;
    double x_max = 40.0;
    double dx = 1.0 / 32.0;
    double T = 1.0;
    std::size_t n_steps = 32;
    double w = 1.0;
    int m = 2;
    double p = 2.0;
    bool stochastic = true;
    /// Multiplies both volatility curves.
    double noise_scale = 1.0;
    bool shifted = true;
};

/// Transport problem with u0' a Gaussian of width 1.5, alpha(t) = e^{-t} b
/// for a Gaussian bump b, and two Gaussian-type volatility curves.
[[nodiscard]] ProblemSpec transport_problem(const TransportConfig& cfg = {});

struct HJMConfig {
    double dx = 1.0 / 16.0;
    double x_max = 30.0;
    double x_min_full = -10.0;
    double T = 1.0;
    std::size_t n_steps = 16;
    double w = 1.0;
    int m = 2;
    /// sigma_1 = a1 e^{-x}, sigma_2 = a2 x e^{-x}; a2 = 0 drops the second factor.
    double a1 = 0.01;
    double a2 = 0.006;
};

[[nodiscard]] HJMModel hjm_model(const HJMConfig& cfg = {});
[[nodiscard]] GridSpec hjm_full_grid(const HJMConfig& cfg = {});
[[nodiscard]] TimeGrid hjm_time_grid(const HJMConfig& cfg = {});

}  // namespace spde::samples
