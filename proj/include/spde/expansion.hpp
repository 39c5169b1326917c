#pragma once

/// @file expansion.hpp
/// @brief Mild solutions of du = (A + eps G) u dt + alpha dt + B dW, the
/// expansion u_eps = u + sum_{k<m} eps^k v_k / k! + R_{m,eps}, and the
/// explicit bounds on the remainder.
///
/// Time stepping is exponential Euler with left-point sources,
///
///     u(t_{j+1}) = S_{A+eps G}(dt) [u(t_j) + alpha(t_j) dt + B(t_j) dW_j],
///
/// which telescopes into the discrete mild formula. Because the heat factor
/// is the exact exponential of G_h, the v_k computed from
///
///     v_k(t) = t^k S_A(t) G^k u0 + int (t-s)^k S_A(t-s) G^k alpha ds
///                                + int (t-s)^k S_A(t-s) G^k B dW
///
/// are the exact eps-derivatives of the discrete u_eps at eps = 0.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spde/grid_space.hpp"
#include "spde/semigroup.hpp"
#include "spde/stochastic.hpp"

namespace spde {

struct ProblemSpec {
    GridFunction u0;
    /// alpha(t_j), j = 0..n_steps-1.
    std::vector<GridFunction> alpha;
    /// Empty for the deterministic case B = 0.
    NoiseModel noise;
    int m = 2;
    double p = 2.0;
    TimeGrid tg;
    WeightedSpace sp;
    Perturbation perturbation;
    /// G^k u0 for k = 0, 1, ...; used instead of G_h^k u0 when present.
    std::optional<std::vector<GridFunction>> u0_generator_powers;

    /// Alignment, shapes, admissibility, finite D(G^m) norms.
    void validate() const;

    [[nodiscard]] bool deterministic() const noexcept { return noise.empty(); }
    [[nodiscard]] const GridSpec& grid() const noexcept { return sp.spec(); }
    [[nodiscard]] GridFunction u0_power(int k) const;
    [[nodiscard]] ProblemSpec without_noise() const;
};

[[nodiscard]] Trajectory solve_mild_path(const ProblemSpec& ps, double eps, const WienerIncrements* incr,
                                         std::size_t path);

[[nodiscard]] PathEnsemble solve_mild(const ProblemSpec& ps, double eps,
                                      std::shared_ptr<const WienerIncrements> incr);

/// Precomputed G^k data for the v_k of one problem.
class CoefficientEngine {
public:
    CoefficientEngine(const ProblemSpec& ps, int k_max);

    [[nodiscard]] int k_max() const noexcept { return k_max_; }

    /// v_k along one noise path (incr may be null when B = 0).
    [[nodiscard]] Trajectory vk_path(int k, const WienerIncrements* incr, std::size_t path) const;

private:
    const ProblemSpec* ps_;
    int k_max_;
    std::vector<GridFunction> gk_u0_;
    std::vector<std::vector<GridFunction>> gk_alpha_;
    std::vector<NoiseModel> gk_noise_;
};

[[nodiscard]] PathEnsemble compute_vk(const ProblemSpec& ps, int k, std::shared_ptr<const WienerIncrements> incr);

/// u_eps - u - sum_{k<m} eps^k v_k / k!; v[k-1] = v_k.
[[nodiscard]] Trajectory remainder_empirical(const Trajectory& u, const Trajectory& u_eps,
                                             const std::vector<Trajectory>& v, double eps, int m);

/// int_0^{N} (N - rho)^{m-1} phi(rho) d rho for phi piecewise linear between
/// integer nodes: returns the node weights W_0..W_N.
[[nodiscard]] std::vector<double> product_weights(std::size_t N, int m);

/// R_{m,eps} = eps^m/(m-1)! (R1 + R2 + R3) evaluated from its definition:
/// left points in s, product integration in r.
class ThreeTermRemainder {
public:
    ThreeTermRemainder(const ProblemSpec& ps, double eps, int m);

    /// eps^m/(m-1)! (R1 + R2), shared by all paths.
    [[nodiscard]] const Trajectory& deterministic() const noexcept { return det_; }

    /// eps^m/(m-1)! R3 along one path.
    [[nodiscard]] Trajectory stochastic_part(const WienerIncrements& incr, std::size_t path) const;

    /// eps^m/(m-1)! R3 through R3 = S_{A+eps G} * Phi, Phi the weight-(m-1)
    /// convolution of G^m B with S_A (left-rectangle outer integral).
    [[nodiscard]] Trajectory stochastic_part_fubini(const WienerIncrements& incr, std::size_t path) const;

    [[nodiscard]] Trajectory path(const WienerIncrements* incr, std::size_t path) const;

private:
    const ProblemSpec* ps_;
    double eps_;
    int m_;
    double prefactor_;
    Trajectory det_;
    // y_[f][i][N]: dt^m sum_q W_q^(N) S_{eps G}(q dt) G^m sigma_f(t_i); i = 0 only for constant noise.
    std::vector<std::vector<std::vector<GridFunction>>> y_;
};

enum class RemainderMode { Empirical, ThreeTerm };

[[nodiscard]] PathEnsemble compute_remainder(const ProblemSpec& ps, double eps, RemainderMode mode,
                                             std::shared_ptr<const WienerIncrements> incr);

struct ExpansionResult {
    PathEnsemble u;
    std::map<double, PathEnsemble> u_eps;
    /// v[k-1] = v_k, k = 1..m-1.
    std::vector<PathEnsemble> v;
    std::map<double, PathEnsemble> R_empirical;
    std::map<double, PathEnsemble> R_threeterm;
};

/// Everything held in memory; meant for small path counts.
[[nodiscard]] ExpansionResult compute_expansion(const ProblemSpec& ps, const std::vector<double>& eps_list,
                                                std::shared_ptr<const WienerIncrements> incr, bool threeterm);

/// e^{w_A t} int_0^t (t-r)^{m-1} e^{eps w_G r} dr
[[nodiscard]] double f_epsilon(double t, int m, double w_A, double w_G, double eps);

/// Running maximum of f_epsilon over the grid times t_0..t_j, for each j.
[[nodiscard]] std::vector<double> f_star(const std::vector<double>& times, int m, double w_A, double w_G, double eps);

struct RemainderBound {
    double M_A = 1.0;
    double w_A = 0.0;
    double M_G = 1.0;
    double w_G = 0.0;
    double N_p = 2.0;
    /// False when p != 2: N_p is then set to 1 and the bound is not certified.
    bool rigorous = true;
    std::string warning;
    std::vector<double> times;
    std::vector<double> f_eps_values;
    std::vector<double> f_star_values;
    /// ||u0||_{D(G^m)}, ||alpha||_{L1(0,t;D(G^m))}, ||B||_{L2(0,t;L2(U;D(G^m)))}
    double u0_norm = 0.0;
    std::vector<double> alpha_norms;
    std::vector<double> noise_norms;
    std::vector<double> bound_pointwise;
    double bound_uniform = 0.0;
};

[[nodiscard]] RemainderBound theoretical_bound(const ProblemSpec& ps, double eps);

/// Least-squares slope of log y against log x.
[[nodiscard]] double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct StudyOptions {
    std::vector<double> eps_list;
    std::vector<int> m_list;
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    /// Paths (from the front) on which the three-term remainder is also evaluated.
    std::size_t threeterm_paths = 0;
};

/// Streaming statistics of ||R_{m,eps}(t)|| over paths. Index order is
/// [m][eps][t]; per-path values are reduced in path order.
struct RemainderStudy {
    std::vector<double> eps_list;
    std::vector<int> m_list;
    std::vector<double> times;
    std::size_t n_paths = 0;
    std::vector<std::vector<std::vector<double>>> mean_sq;
    std::vector<std::vector<std::vector<double>>> se_mean_sq;
    /// C^p norm (p from the problem) of R_{m,eps}, [m][eps].
    std::vector<std::vector<double>> cp_norm;
    /// C^p norm of u_eps - u, [eps].
    std::vector<double> difference_norm;
    /// sqrt(mean ||R_threeterm - R_empirical||^2) / sqrt(mean ||R_empirical||^2), max over t, [m][eps].
    std::vector<std::vector<double>> mode_mismatch;
    /// mean ||R_threeterm||^2 over the three-term paths, [m][eps][t]; empty without them.
    std::vector<std::vector<std::vector<double>>> threeterm_mean_sq;

    /// sqrt(mean_sq): the L2(Omega; H) norm at each grid time.
    [[nodiscard]] double l2_norm(std::size_t mi, std::size_t ei, std::size_t j) const;
    /// Standard error of l2_norm by the delta method.
    [[nodiscard]] double l2_norm_se(std::size_t mi, std::size_t ei, std::size_t j) const;
    [[nodiscard]] double slope(std::size_t mi) const;
    [[nodiscard]] double difference_slope() const;
};

[[nodiscard]] RemainderStudy run_remainder_study(const ProblemSpec& ps, const StudyOptions& opt);

enum class SlopeQuantity { Remainder, Difference };

/// Slope for m = ps.m from a fresh study with ps.p.
[[nodiscard]] double convergence_slope(const ProblemSpec& ps, const std::vector<double>& eps_list,
                                       SlopeQuantity quantity, std::size_t n_paths, std::uint64_t seed);

struct DerivativeCheck {
    double relative_error = 0.0;
    /// Set when the smallest h is so small that rounding dominates.
    bool conditioning_warning = false;
    /// Unextrapolated error at the smallest h.
    double raw_error = 0.0;
};

/// Forward differences of order k in eps at eps0 (= 0 in practice) on common
/// noise, Richardson-extrapolated over h_list (geometric, ratio 1/2), compared
/// with v_k; sup over t of the ensemble L2 relative error.
[[nodiscard]] DerivativeCheck eps_derivative_check(const ProblemSpec& ps, double eps0, const std::vector<double>& h_list,
                                                   int k, std::shared_ptr<const WienerIncrements> incr);

}  // namespace spde
