#pragma once

/// @file musiela.hpp
/// @brief Forward-rate curves in the Musiela parametrization,
///
///     du = (A u + alpha_0) dt + sum_k sigma_k dW_k   on H(R+),
///     alpha_0 = sum_k sigma_k I sigma_k,  (I f)(x) = int_0^x f,
///
/// lifted to H(R) by a continuous extension operator L and perturbed to
/// dv_eps = (A + eps A^2) v_eps dt + L alpha_0 dt + sum_k L sigma_k dW_k.
/// Discounted bond prices are B(t, x) = exp(-F_{t,x} v).
///
/// The extension acts on g = f' e^{w y/2} by the reflection
///
///     (L_0 g)(-y) = chi(y) sum_{i=1}^{2m+1} c_i g(y / i),   y > 0,
///     sum_i c_i (-1/i)^j = 1,   j = 0..2m,
///
/// with chi a smooth cutoff equal to 1 on [0, 1] and 0 beyond 6, and then
/// Lf = f on x >= 0, Lf(x) = f(0) - int_x^0 e^{-wy/2} (L_0 g)(y) dy on x < 0.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "spde/expansion.hpp"
#include "spde/grid_space.hpp"
#include "spde/stochastic.hpp"

namespace spde {

struct HJMModel {
    /// On R+, sigma_k(+inf) = 0.
    std::vector<GridFunction> sigmas;
    /// On R+.
    GridFunction u0;
    int m = 2;
    double w = 1.0;

    [[nodiscard]] const GridSpec& grid() const noexcept { return u0.spec(); }
    void validate() const;
};

/// sum_k sigma_k I sigma_k
[[nodiscard]] GridFunction hjm_drift(const std::vector<GridFunction>& sigmas);
[[nodiscard]] GridFunction hjm_drift(const HJMModel& model);

/// sqrt(sum_{j<=k} ||f^{(j)}||_H^2), the graph norm of D(A^k).
[[nodiscard]] double derivative_graph_norm(const GridFunction& f, int k, double w);

/// ||f I f||_{D(A_0^m)} / ||f||^2_{D(A_0^m)}; requires f(+inf) = 0.
[[nodiscard]] double product_estimate_check(const GridFunction& f, int m, double w);

/// Smooth cutoff, 1 for y <= inner, 0 for y >= outer.
[[nodiscard]] double cutoff(double y, double inner = 1.0, double outer = 6.0) noexcept;

/// c_1..c_{order+1} of the reflection matching derivatives 0..order.
[[nodiscard]] std::vector<double> reflection_coefficients(int order);

/// L from H(R+) on `half` to H(R) on `full`, precomputed as a linear stencil.
class ExtensionOperator {
public:
    /// full must share dx with half, contain x = 0, and reach x <= -outer.
    ExtensionOperator(const GridSpec& half, const GridSpec& full, int order, double w);

    [[nodiscard]] GridFunction apply(const GridFunction& f) const;

    [[nodiscard]] const std::vector<double>& coefficients() const noexcept { return c_; }
    [[nodiscard]] const GridSpec& full_grid() const noexcept { return full_; }

private:
    GridSpec half_;
    GridSpec full_;
    int order_;
    double w_;
    std::size_t offset_;
    std::vector<double> c_;
    /// For each full-grid node left of 0: (index into f', weight) pairs.
    std::vector<std::vector<std::pair<std::size_t, double>>> taps_;
};

[[nodiscard]] GridFunction extend(const GridFunction& f, int order, const GridSpec& full, double w);

/// ProblemSpec on H(R+) with the shift semigroup only (the unperturbed Musiela equation).
[[nodiscard]] ProblemSpec halfline_problem(const HJMModel& model, const TimeGrid& tg);

/// ProblemSpec on H(R) for L u0, L alpha_0, L sigma_k with G = A^2.
[[nodiscard]] ProblemSpec extended_problem(const HJMModel& model, const TimeGrid& tg, const GridSpec& full);

[[nodiscard]] PathEnsemble simulate_forward_rates(const HJMModel& model, double eps, const TimeGrid& tg,
                                                  const GridSpec& full, std::size_t n_paths, std::uint64_t seed);

struct BondPrice {
    /// exp(-F_{t,x} v)
    double discounted = 1.0;
    /// exp(-int_0^x v(t, y) dy)
    double undiscounted = 1.0;
    /// exp(int_0^t v(s, 0) ds)
    double money_market = 1.0;
};

[[nodiscard]] BondPrice bond_price(const Trajectory& v, const TimeGrid& tg, std::size_t j, double x);

/// J_{m-1}(d) = sum_{j=1}^{m-1} (-d)^j / j!
[[nodiscard]] double taylor_J(double d, int m);
/// r_m(d) = e^{-d} - 1 - J_{m-1}(d)
[[nodiscard]] double taylor_r(double d, int m);

struct PricingErrorExpansion {
    std::vector<double> eps_list;
    int m = 2;
    double t = 0.0;
    double x = 0.0;
    /// Mean over paths of the coefficient of eps^n, n = 1..m-1, in (B_eps - B)/B.
    std::vector<double> mean_terms;
    /// L1(Omega) norms per eps.
    std::vector<double> relative_error_l1;
    std::vector<double> residual_l1;
    /// Worst |e^{-d} - 1 - J - r| over all paths and eps.
    double identity_error = 0.0;
    /// Empirical E exp(-p' (F u_eps - F u)) per eps, p' = 2.
    std::vector<double> exponential_moment;

    [[nodiscard]] double residual_slope() const;
};

[[nodiscard]] PricingErrorExpansion pricing_error_expansion(const HJMModel& model, const std::vector<double>& eps_list,
                                                            const TimeGrid& tg, const GridSpec& full, std::size_t j,
                                                            double x, std::size_t n_paths, std::uint64_t seed);

struct MartingaleResult {
    double eps = 0.0;
    /// max_t |mean_paths B(t, x0) - B_ref(t)|
    double drift_estimate = 0.0;
    /// 3 max_t sd(t) / sqrt(n_paths)
    double ci = 0.0;
    std::vector<double> mean;
    std::vector<double> reference;
    std::vector<double> sd;
};

/// B(t, x0) on common noise for each eps. The reference B_ref(t) is the
/// price on the noise-free transported curve, exp(-F_{t,x0}(S_A u0)), which
/// is the expectation under the installed drift at eps = 0.
[[nodiscard]] std::vector<MartingaleResult> martingale_diagnostic(const HJMModel& model,
                                                                  const std::vector<double>& eps_list,
                                                                  const TimeGrid& tg, const GridSpec& full,
                                                                  std::size_t n_paths, std::uint64_t seed,
                                                                  double x0 = 1.0);

/// Fraction of samples with v >= -1e-10; with half_line_only, x >= 0 nodes only.
[[nodiscard]] double positivity_fraction(const PathEnsemble& ens, bool half_line_only = false);

}  // namespace spde
