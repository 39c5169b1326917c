#pragma once

/// @file stochastic.hpp
/// @brief Finite-factor Wiener noise, deterministic and stochastic
/// convolutions, and the weighted convolutions
///
///     Sigma_k(t) = int_0^t (t-s)^k S(t-s) C(s) dW(s).
///
/// All time quadratures use the left point of each step. Weighted sums are
/// propagated with binomial accumulators a_l, l = 0..k,
///
///     a_l(j+1) = S(dt) [ sum_{q<=l} C(l,q) a_q(j) + xi_j ],
///
/// so that Sigma_k(t_j) = dt^k a_k(j) with one propagator application per
/// accumulator and step.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spde/grid_space.hpp"
#include "spde/semigroup.hpp"

namespace spde {

struct TimeGrid {
    double T = 1.0;
    std::size_t n_steps = 1;
    double dt = 1.0;

    static TimeGrid make(double T, std::size_t n_steps);

    [[nodiscard]] double t(std::size_t j) const noexcept { return dt * static_cast<double>(j); }

    /// Throws AlignmentError unless dt is an integer multiple of dx.
    void require_aligned(const GridSpec& grid) const;
};

/// Increments dW_f(t_j) ~ Normal(0, dt), laid out [path][step][factor].
class WienerIncrements {
public:
    WienerIncrements(std::size_t n_paths, std::size_t n_steps, std::size_t factors, double dt, std::uint64_t seed,
                     std::vector<double> data);

    [[nodiscard]] std::size_t n_paths() const noexcept { return n_paths_; }
    [[nodiscard]] std::size_t n_steps() const noexcept { return n_steps_; }
    [[nodiscard]] std::size_t factors() const noexcept { return factors_; }
    [[nodiscard]] double dt() const noexcept { return dt_; }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] double operator()(std::size_t path, std::size_t step, std::size_t factor) const noexcept {
        return data_[(path * n_steps_ + step) * factors_ + factor];
    }
    [[nodiscard]] std::span<const double> raw() const noexcept { return data_; }

    /// Sums of r consecutive steps; n_steps must be divisible by r.
    [[nodiscard]] WienerIncrements aggregate(std::size_t r) const;

    /// The first `count` paths.
    [[nodiscard]] WienerIncrements head(std::size_t count) const;

private:
    std::size_t n_paths_;
    std::size_t n_steps_;
    std::size_t factors_;
    double dt_;
    std::uint64_t seed_;
    std::vector<double> data_;
};

/// sqrt(dt) * Z with Z a pure function of (seed, path, step, factor).
[[nodiscard]] double wiener_increment(std::uint64_t seed, std::size_t path, std::size_t step, std::size_t factor,
                                      double dt) noexcept;

[[nodiscard]] WienerIncrements sample_wiener_increments(std::size_t factors, const TimeGrid& tg, std::size_t n_paths,
                                                        std::uint64_t seed);

/// B dW = sum_f sigma_f dW_f with K volatility curves, constant or indexed by step.
class NoiseModel {
public:
    NoiseModel() = default;

    /// Checks sigma_f(+inf) = 0 and admissibility in sp.
    static NoiseModel constant(std::vector<GridFunction> sigmas, const WeightedSpace& sp, std::uint64_t seed = 0);

    /// sigmas[f][j] is sigma_f at step j.
    static NoiseModel time_dependent(std::vector<std::vector<GridFunction>> sigmas, const WeightedSpace& sp,
                                     std::uint64_t seed = 0);

    /// Skips all checks; for scalar sanity tests with constant curves.
    static NoiseModel unchecked(std::vector<GridFunction> sigmas, std::uint64_t seed = 0);

    [[nodiscard]] std::size_t factors() const noexcept { return sigmas_.size(); }
    [[nodiscard]] bool is_time_dependent() const noexcept { return time_dependent_; }
    [[nodiscard]] bool empty() const noexcept { return sigmas_.empty(); }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] const GridFunction& sigma(std::size_t factor, std::size_t step) const;

    /// Applies op to every curve; the result is not re-checked.
    [[nodiscard]] NoiseModel mapped(const std::function<GridFunction(const GridFunction&)>& op) const;

    [[nodiscard]] NoiseModel scaled(double a) const;

    /// sum_f ||sigma_f(step)||^2 with the given per-curve squared norm.
    [[nodiscard]] double hilbert_schmidt_sq(std::size_t step,
                                            const std::function<double(const GridFunction&)>& norm_sq) const;

    /// xi = sum_f sigma_f(step) dW_f(step) for one path.
    [[nodiscard]] GridFunction source(const WienerIncrements& incr, std::size_t path, std::size_t step,
                                      const GridSpec& grid) const;

private:
    std::vector<std::vector<GridFunction>> sigmas_;
    bool time_dependent_ = false;
    std::uint64_t seed_ = 0;
};

using Trajectory = std::vector<GridFunction>;

struct PathEnsemble {
    std::vector<Trajectory> paths;
    std::shared_ptr<const WienerIncrements> increments;

    [[nodiscard]] std::size_t n_paths() const noexcept { return paths.size(); }
    [[nodiscard]] std::size_t n_times() const noexcept { return paths.empty() ? 0 : paths.front().size(); }
};

/// Sigma_k(t_j) = sum_{i<j} (t_j - t_i)^k S(t_j - t_i) source(i), j = 0..n_steps.
/// source(i) must already carry its quadrature factor (dt or dW).
[[nodiscard]] Trajectory weighted_convolution(const Propagator& prop, std::size_t n_steps, int k,
                                              const std::function<GridFunction(std::size_t)>& source);

/// (S * f)(t_j) = sum_{i<j} S(t_j - t_i) f(t_i) dt; f holds t_0..t_{n-1}.
[[nodiscard]] Trajectory det_convolution(const SemigroupParams& params, const std::vector<GridFunction>& f,
                                         const TimeGrid& tg);

[[nodiscard]] Trajectory stoch_convolution_path(const SemigroupParams& params, const NoiseModel& noise,
                                                const TimeGrid& tg, const WienerIncrements& incr, std::size_t path,
                                                int k);

[[nodiscard]] PathEnsemble stoch_convolution(const SemigroupParams& params, const NoiseModel& noise,
                                             const TimeGrid& tg, std::shared_ptr<const WienerIncrements> incr, int k);

/// max over paths and times of ||Sigma_{k+1} - (k+1) S * Sigma_k|| / (1 + ||Sigma_{k+1}||).
[[nodiscard]] double verify_recursion(int k, const SemigroupParams& params, const NoiseModel& noise,
                                      const TimeGrid& tg, const WienerIncrements& incr, const WeightedSpace& sp);

/// ((1/n) sum_paths (max_t ||X(t)||)^p)^{1/p}
[[nodiscard]] double lp_norm_estimate(const PathEnsemble& ens, double p, const WeightedSpace& sp);

/// Same reduction from per-path suprema, summed in index order.
[[nodiscard]] double lp_norm_from_sups(std::span<const double> sups, double p);

/// Rows t,x,mean,q05,q50,q95.
void write_ensemble_summary_csv(const PathEnsemble& ens, const TimeGrid& tg, const std::filesystem::path& path);

/// Little-endian layout:
///   uint64 K, uint64 n_steps, uint64 n_paths, uint64 n, float64 dx,
///   float64 x_min, float64 dt, uint64 seed,
///   then per path, per time index j = 0..n_steps: float64 limit, n float64 values,
///   then K * n_steps float64 increments per path ([path][step][factor]).
void write_ensemble_binary(const PathEnsemble& ens, const std::filesystem::path& path);
[[nodiscard]] PathEnsemble read_ensemble_binary(const std::filesystem::path& path);

}  // namespace spde
