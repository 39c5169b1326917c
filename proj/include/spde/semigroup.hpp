#pragma once

/// @file semigroup.hpp
/// @brief The shift semigroup S_A, the heat semigroups S_G, their products,
/// resolvents, and the structural checks used to certify them on a grid.
///
/// S_A(t) f = f(t + .) is exact for t a multiple of dx. The heat semigroup is
/// the exact exponential of the discrete generator G_h (five-point fourth-order
/// second difference, minus w^2/2 for the shifted variant), so that
/// d^k/d tau^k S_G(tau) = G_h^k S_G(tau) holds on the grid.

#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "spde/grid_space.hpp"
#include "spde/heat_kernel.hpp"

namespace spde {

enum class PerturbationKind {
    SecondDerivative,         // G = A^2
    SecondDerivativeShifted,  // G = A^2 - (w^2/2) I
};

struct Perturbation {
    PerturbationKind kind = PerturbationKind::SecondDerivativeShifted;
    double w = 1.0;

    static Perturbation plain(double w) { return {PerturbationKind::SecondDerivative, w}; }
    static Perturbation shifted(double w) { return {PerturbationKind::SecondDerivativeShifted, w}; }

    /// The zeroth-order part of G: -w^2/2 or 0.
    [[nodiscard]] double rate() const noexcept {
        return kind == PerturbationKind::SecondDerivativeShifted ? -0.5 * w * w : 0.0;
    }
    /// Growth exponent w_G with ||S_G(t)|| <= e^{w_G t}.
    [[nodiscard]] double growth() const noexcept {
        return kind == PerturbationKind::SecondDerivativeShifted ? 0.0 : 0.5 * w * w;
    }
};

enum class GeneratorKind { Shift, SecondDerivative, SecondDerivativeShifted, Sum };

/// ||S(t)|| <= M e^{omega t}.
struct GeneratorTag {
    GeneratorKind kind = GeneratorKind::Shift;
    double M = 1.0;
    double omega = 0.0;
    double eps = 0.0;
    Perturbation perturbation{};

    static GeneratorTag shift();
    static GeneratorTag second_derivative(double w);
    static GeneratorTag second_derivative_shifted(double w);
    /// A + eps G.
    static GeneratorTag sum(double eps, Perturbation p);
};

/// Semigroup S_{A + eps G}.
struct SemigroupParams {
    double eps = 0.0;
    Perturbation perturbation{};
    /// S(t) = I; only for scalar sanity checks.
    bool identity = false;
};

/// t / dx as an integer; throws AlignmentError otherwise.
[[nodiscard]] std::size_t aligned_steps(double t, double dx);

[[nodiscard]] GridFunction shift_apply(const GridFunction& f, double t);

/// S_G(t) f with G the plain or shifted second derivative.
[[nodiscard]] GridFunction heat_apply(const GridFunction& f, double t, bool shifted, double w);
[[nodiscard]] GridFunction heat_apply(const GridFunction& f, double t, const Perturbation& p);

/// S_A(t) S_{eps G}(t) f.
[[nodiscard]] GridFunction product_apply(const GridFunction& f, double t, double eps, const Perturbation& p);

/// G_h f.
[[nodiscard]] GridFunction apply_generator(const GridFunction& f, const Perturbation& p);

/// G_h^k f.
[[nodiscard]] GridFunction generator_power(const GridFunction& f, int k, const Perturbation& p);

/// sqrt(sum_{j<=m} ||G_h^j f||^2).
[[nodiscard]] double graph_norm(const GridFunction& f, int m, const Perturbation& p, const WeightedSpace& sp);

struct TaylorExpansion {
    GridFunction partial_sum;
    GridFunction remainder;
    /// Estimated quadrature error of the remainder integral (H norm).
    double quadrature_tolerance = 0.0;
};

/// S_{eps G}(t) f = sum_{k<m} (eps t)^k / k! G^k f
///                 + 1/(m-1)! int_0^{eps t} (eps t - u)^{m-1} S_G(u) G^m f du,
/// the integral by composite trapezoid over 64 subintervals with the
/// Euler-Maclaurin endpoint correction.
[[nodiscard]] TaylorExpansion taylor_expand_semigroup(const GridFunction& f, double t, double eps, int m,
                                                      const Perturbation& p, const WeightedSpace& sp);

/// (lambda - (A + eps G))^{-1} f = int_0^inf e^{-lambda t} S_{A+eps G}(t) f dt,
/// truncated where e^{-lambda t} < 1e-10, nodes t = q dx, trapezoid with
/// fourth-order end correction.
[[nodiscard]] GridFunction resolvent_shift(double lambda, const GridFunction& f, double eps, const Perturbation& p);

struct ResolventSolution {
    GridFunction y;
    /// z = y' e^{w x / 2}
    std::vector<double> z;
    /// ||(lambda - G) y - f||_H with the discrete operator used by the solve.
    double residual = 0.0;
};

/// (lambda - G) y = f through the conjugated problem
/// (lambda' - w^2/4) z + w z' - z'' = f' e^{w x/2}, lambda' = lambda - rate(G),
/// with z = 0 at both ends. Requires lambda > w^2/4.
[[nodiscard]] ResolventSolution solve_resolvent_G(double lambda, const GridFunction& f, const Perturbation& p);

/// ||lambda y - G y - f||_{L^2_w}-type residual computed with the derivative
/// stencil table; independent of the discretization used by the solve.
[[nodiscard]] double resolvent_stencil_residual(double lambda, const GridFunction& y, const GridFunction& f,
                                                const Perturbation& p, const WeightedSpace& sp);

/// <L f, f>_H for the generator L named by the tag.
[[nodiscard]] double dissipativity_check(const GeneratorTag& gen, const GridFunction& f, const WeightedSpace& sp);

/// <A f, f> + (w/2) ||f'||^2_{L^2_w}
[[nodiscard]] double integration_by_parts_residual(const GridFunction& f, const WeightedSpace& sp);

/// ||S_A(t) S_{eps G}(t) f - S_{eps G}(t) S_A(t) f||_H
[[nodiscard]] double commutator_residual(const GridFunction& f, double t, double eps, const Perturbation& p,
                                         const WeightedSpace& sp);

/// S_{A + eps G}(dt) on a fixed grid, reusable inside time-stepping loops.
class Propagator {
public:
    Propagator(const GridSpec& grid, double dt, SemigroupParams params);

    [[nodiscard]] double dt() const noexcept { return dt_; }
    [[nodiscard]] const GridSpec& grid() const noexcept { return grid_; }

    [[nodiscard]] GridFunction apply(const GridFunction& f) const;

    /// Applies the propagator `times` times.
    [[nodiscard]] GridFunction apply_n(const GridFunction& f, std::size_t times) const;

private:
    GridSpec grid_;
    double dt_;
    std::size_t shift_;
    double decay_;
    std::shared_ptr<const LatticeHeatKernel> kernel_;
};

}  // namespace spde
