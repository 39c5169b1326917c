#pragma once

/// @file grid_space.hpp
/// @brief Weighted spaces H(R) and H(R+) on a truncated uniform grid.
///
/// An element of H is a grid function together with its value at +infinity.
/// The scalar product is
///
///     <f, g> = f(+inf) g(+inf) + int f'(x) g'(x) e^{w x} dx
///
/// with f' realized by fourth-order finite differences and the integral by
/// the composite trapezoid rule.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace spde {

struct GridSpec {
    double x_min = 0.0;
    double x_max = 1.0;
    std::size_t n = 8;
    double dx = 1.0 / 7.0;

    /// n points spanning [x_min, x_max]. Requires n >= 8 and x_max > x_min.
    static GridSpec uniform(double x_min, double x_max, std::size_t n);

    /// Spacing dx; (x_max - x_min) / dx must be an integer.
    static GridSpec with_spacing(double x_min, double x_max, double dx);

    [[nodiscard]] double x(std::size_t i) const noexcept { return x_min + dx * static_cast<double>(i); }

    /// Index of the node at x, if x is a grid node (relative tolerance 1e-9 of dx).
    [[nodiscard]] std::optional<std::size_t> node_index(double x) const noexcept;

    [[nodiscard]] bool is_half_line() const noexcept { return x_min == 0.0; }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

class GridFunction {
public:
    GridFunction() = default;

    /// Values must be finite and of length spec.n.
    GridFunction(GridSpec spec, std::vector<double> values, double limit_at_infinity);

    static GridFunction sample(const GridSpec& spec, const std::function<double(double)>& f,
                               double limit_at_infinity);
    static GridFunction constant(const GridSpec& spec, double c);
    static GridFunction zero(const GridSpec& spec) { return constant(spec, 0.0); }

    [[nodiscard]] const GridSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] double limit() const noexcept { return limit_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const noexcept { return values_[i]; }

    /// Moves the value buffer out; the function is left empty.
    [[nodiscard]] std::vector<double> release() && { return std::move(values_); }

    /// |values[n-1] - limit| <= tol_scale * (1 + |limit|).
    [[nodiscard]] bool tail_consistent(double tol_scale = 1e-6) const noexcept;

    GridFunction& operator+=(const GridFunction& other);
    GridFunction& operator-=(const GridFunction& other);
    GridFunction& operator*=(double a) noexcept;

    /// this += a * other
    GridFunction& axpy(double a, const GridFunction& other);

    friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
    friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
    friend GridFunction operator*(double a, GridFunction f) { return f *= a; }
    friend GridFunction operator*(GridFunction f, double a) { return f *= a; }

private:
    GridSpec spec_{};
    std::vector<double> values_;
    double limit_ = 0.0;
};

/// H(R) when spec.x_min < 0, H(R+) when spec.x_min == 0.
class WeightedSpace {
public:
    WeightedSpace(double w, GridSpec spec);

    [[nodiscard]] double w() const noexcept { return w_; }
    [[nodiscard]] const GridSpec& spec() const noexcept { return spec_; }

    /// e^{w x_i}
    [[nodiscard]] std::span<const double> weights() const noexcept { return *weights_; }

private:
    double w_;
    GridSpec spec_;
    std::shared_ptr<const std::vector<double>> weights_;
};

/// Composite trapezoid rule on uniform spacing.
[[nodiscard]] double trapezoid(std::span<const double> y, double dx) noexcept;

[[nodiscard]] double inner_product(const GridFunction& f, const GridFunction& g, const WeightedSpace& sp);
[[nodiscard]] double norm(const GridFunction& f, const WeightedSpace& sp);

/// int |f'|^2 e^{wx} dx
[[nodiscard]] double weighted_seminorm_sq(const GridFunction& f, const WeightedSpace& sp);

/// Same as weighted_seminorm_sq for an already differentiated function.
[[nodiscard]] double weighted_l2_sq(std::span<const double> g, const WeightedSpace& sp);

[[nodiscard]] double sup_norm(const GridFunction& f) noexcept;

inline constexpr int max_derivative_order = 8;

/// Fourth-order accurate derivative; one-sided stencils near the ends.
/// The result has limit 0.
[[nodiscard]] GridFunction derivative(const GridFunction& f, int order);

/// [I f](x) = int_0^x f(y) dy by cumulative trapezoid. Requires 0 to be a
/// node and f(+inf) = 0.
[[nodiscard]] GridFunction integrate_from_zero(const GridFunction& f);

/// Half-line grid [0, x_max] with the same spacing as a full-line grid.
[[nodiscard]] GridSpec half_line_of(const GridSpec& full);

/// Pointwise restriction to the nodes x >= 0. When w is given, also checks
/// that the H(R+) norm does not exceed the H(R) norm.
[[nodiscard]] GridFunction restrict_to_halfline(const GridFunction& f, std::optional<double> w = std::nullopt);

/// Throws DomainError unless f is finite, tail consistent, and has
/// |f'|^2 e^{wx} below end_tol at both truncated ends (the right end only on
/// a half-line grid).
void require_admissible(const GridFunction& f, const WeightedSpace& sp, const char* what,
                        double end_tol = 1e-12);

void write_csv(const GridFunction& f, const std::filesystem::path& path);
[[nodiscard]] GridFunction read_csv(const std::filesystem::path& path);

}  // namespace spde
