#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace spde {

/// Finite-difference weights for the derivative of order d at x0 from the
/// given nodes (Fornberg's recursion).
[[nodiscard]] std::vector<double> fornberg_weights(double x0, std::span<const double> nodes, int d);

/// Precomputed unit-spacing stencils of accuracy 4 for one derivative order.
/// Row i of the boundary block holds the stencil for node i counted from
/// the nearer end; the right end uses the mirrored row with sign (-1)^d.
class DerivativeStencil {
public:
    static const DerivativeStencil& get(int order);

    [[nodiscard]] int order() const noexcept { return order_; }
    [[nodiscard]] std::size_t radius() const noexcept { return radius_; }
    [[nodiscard]] std::size_t boundary_width() const noexcept { return boundary_width_; }

    /// Applies the stencil; out has the size of in. Requires in.size() >= boundary_width().
    void apply(std::span<const double> in, double dx, std::span<double> out) const;

private:
    explicit DerivativeStencil(int order);

    int order_;
    std::size_t radius_;
    std::size_t boundary_width_;
    std::vector<double> central_;
    std::vector<std::vector<double>> left_rows_;
};

}  // namespace spde
