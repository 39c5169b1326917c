#pragma once

/// @file functionals.hpp
/// @brief Expansion of F(u_eps) for smooth functionals F through the
/// coefficients
///
///     w_n = sum_j sum_{k in K(n, j)} n! / (k_1! ... k_n!)
///               D^j F(u)((v_1/1!)^{k_1}, ..., (v_n/n!)^{k_n}),
///
/// K(n, j) = {k >= 0 : k_1 + ... + k_n = j, k_1 + 2 k_2 + ... + n k_n = n},
/// and the bond-price functionals
///
///     F_{t,x} f = int_0^x f(t, y) dy + int_0^t f(s, 0) ds.
///
/// The factorial scalings are folded into one integer coefficient
/// n! / prod_i (k_i! (i!)^{k_i}) so that the derivative oracles see the v_i
/// unscaled; for linear F this makes w_n = DF(u) v_n exact.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spde/errors.hpp"
#include "spde/expansion.hpp"
#include "spde/grid_space.hpp"
#include "spde/stochastic.hpp"

namespace spde {

/// One index vector of K(n, j).
struct FdbPartition {
    /// k[i-1] = k_i, i = 1..n.
    std::vector<int> k;
    int j = 0;
    /// n! / prod_i (k_i! (i!)^{k_i})
    std::uint64_t coefficient = 0;
};

inline constexpr int max_fdb_order = 20;

/// K(n, j) for all j, by recursive enumeration of the weighted constraint.
[[nodiscard]] std::vector<FdbPartition> faa_di_bruno_partitions(int n);

/// Same set from scanning every vector in {0..n}^n; for cross-checks.
[[nodiscard]] std::vector<FdbPartition> brute_force_partitions(int n);

/// Scalar F of class C^m given by value and multilinear derivative oracles.
template <class Arg>
struct FunctionalSpec {
    using Derivative = std::function<double(const Arg& u, std::span<const Arg* const> h)>;

    std::function<double(const Arg&)> evaluate;
    /// derivatives[j-1] evaluates D^j F(u)(h_1, ..., h_j).
    std::vector<Derivative> derivatives;

    [[nodiscard]] int order() const noexcept { return static_cast<int>(derivatives.size()); }

    [[nodiscard]] double derivative(int j, const Arg& u, std::span<const Arg* const> h) const {
        if (j == 0) return evaluate(u);
        if (j > order()) throw UnsupportedError("functional has no derivative oracle of the requested order");
        return derivatives[static_cast<std::size_t>(j - 1)](u, h);
    }
};

/// w_n for v[i-1] = v_i, i = 1..n.
template <class Arg>
[[nodiscard]] double faa_di_bruno_wn(int n, const FunctionalSpec<Arg>& F, const Arg& u, std::span<const Arg> v) {
    if (n < 1) throw DomainError("w_n needs n >= 1");
    if (static_cast<int>(v.size()) < n) throw StructuralError("not enough expansion coefficients for w_n");
    double total = 0.0;
    std::vector<const Arg*> args;
    for (const auto& part : faa_di_bruno_partitions(n)) {
        args.clear();
        for (int i = 1; i <= n; ++i) {
            for (int c = 0; c < part.k[static_cast<std::size_t>(i - 1)]; ++c) {
                args.push_back(&v[static_cast<std::size_t>(i - 1)]);
            }
        }
        total += static_cast<double>(part.coefficient) * F.derivative(part.j, u, args);
    }
    return total;
}

/// phi(L f) for a linear L, with D^j = phi^{(j)}(L u) prod_i L h_i.
template <class Arg>
[[nodiscard]] FunctionalSpec<Arg> compose_with_linear(std::function<double(const Arg&)> L,
                                                      std::function<double(int, double)> phi_derivative, int order) {
    FunctionalSpec<Arg> F;
    F.evaluate = [L, phi_derivative](const Arg& u) { return phi_derivative(0, L(u)); };
    for (int j = 1; j <= order; ++j) {
        F.derivatives.push_back([L, phi_derivative, j](const Arg& u, std::span<const Arg* const> h) {
            double prod = phi_derivative(j, L(u));
            for (const Arg* a : h) prod *= L(*a);
            return prod;
        });
    }
    return F;
}

/// L itself, exact to any order.
template <class Arg>
[[nodiscard]] FunctionalSpec<Arg> linear_functional(std::function<double(const Arg&)> L, int order) {
    FunctionalSpec<Arg> F;
    F.evaluate = L;
    F.derivatives.push_back([L](const Arg&, std::span<const Arg* const> h) { return L(*h[0]); });
    for (int j = 2; j <= order; ++j) {
        F.derivatives.push_back([](const Arg&, std::span<const Arg* const>) { return 0.0; });
    }
    return F;
}

/// F_{t_j, x} f with trapezoid rules in y and s. x must be a node >= 0.
[[nodiscard]] double F_tx(const Trajectory& f, const TimeGrid& tg, std::size_t j, double x);

struct FunctionalSurface {
    std::vector<double> times;
    /// The nodes x >= 0.
    std::vector<double> xs;
    /// values[j][i] = F_{t_j, xs[i]} f
    std::vector<std::vector<double>> values;
};

[[nodiscard]] FunctionalSurface F_full(const Trajectory& f, const TimeGrid& tg);

/// |F_{t_j,x} f| / ((1 + x + T) max_t ||f(t)||_{H(R+)}).
[[nodiscard]] double continuity_ratio(const Trajectory& f, const TimeGrid& tg, std::size_t j, double x, double w);

struct FunctionalExpansion {
    std::vector<double> eps_list;
    /// w[path][n-1] = w_n, n = 1..m-1.
    std::vector<std::vector<double>> w;
    /// F(u) per path.
    std::vector<double> base;
    /// remainder[eps][path] = F(u_eps) - F(u) - sum_n eps^n w_n / n!
    std::vector<std::vector<double>> remainder;
    /// (mean |remainder|^q)^{1/q} per eps.
    std::vector<double> remainder_norm;
    double q = 2.0;

    [[nodiscard]] double slope() const;
};

[[nodiscard]] FunctionalExpansion expand_functional(const FunctionalSpec<Trajectory>& F, const ExpansionResult& res,
                                                    const std::vector<double>& eps_list, double q = 2.0);

}  // namespace spde
