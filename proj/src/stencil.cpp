#include "spde/stencil.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <mutex>

#include "spde/errors.hpp"
#include "spde/grid_space.hpp"

namespace spde {

std::vector<double> fornberg_weights(double x0, std::span<const double> nodes, int d) {
    const std::size_t n = nodes.size();
    const int m = d;
    // c[j][k]: weight of node j for derivative k.
    std::vector<std::vector<double>> c(n, std::vector<double>(static_cast<std::size_t>(m) + 1, 0.0));
    double c1 = 1.0;
    double c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for (std::size_t i = 1; i < n; ++i) {
        const int mn = std::min(static_cast<int>(i), m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = nodes[i] - x0;
        for (std::size_t j = 0; j < i; ++j) {
            const double c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) {
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) {
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = c[j][static_cast<std::size_t>(m)];
    return out;
}

DerivativeStencil::DerivativeStencil(int order) : order_(order) {
    constexpr int accuracy = 4;
    const int central_points = 2 * ((order + 1) / 2) - 1 + accuracy;
    const int boundary_points = order + accuracy;
    radius_ = static_cast<std::size_t>((central_points - 1) / 2);
    boundary_width_ = static_cast<std::size_t>(std::max(central_points, boundary_points));

    std::vector<double> nodes(static_cast<std::size_t>(central_points));
    for (int k = 0; k < central_points; ++k) nodes[static_cast<std::size_t>(k)] = k - static_cast<double>(radius_);
    central_ = fornberg_weights(0.0, nodes, order);

    std::vector<double> bnodes(static_cast<std::size_t>(boundary_points));
    for (int k = 0; k < boundary_points; ++k) bnodes[static_cast<std::size_t>(k)] = k;
    for (std::size_t i = 0; i < radius_; ++i) {
        left_rows_.push_back(fornberg_weights(static_cast<double>(i), bnodes, order));
    }
}

const DerivativeStencil& DerivativeStencil::get(int order) {
    if (order < 1 || order > max_derivative_order) {
        throw UnsupportedError("derivative order " + std::to_string(order) + " outside the stencil table [1, " +
                               std::to_string(max_derivative_order) + "]");
    }
    static std::array<std::unique_ptr<DerivativeStencil>, max_derivative_order + 1> table;
    static std::once_flag once;
    std::call_once(once, [] {
        for (int d = 1; d <= max_derivative_order; ++d) {
            table[static_cast<std::size_t>(d)].reset(new DerivativeStencil(d));
        }
    });
    return *table[static_cast<std::size_t>(order)];
}

void DerivativeStencil::apply(std::span<const double> in, double dx, std::span<double> out) const {
    const std::size_t n = in.size();
    if (n < boundary_width_) {
        throw StructuralError("grid too small for derivative stencil of order " + std::to_string(order_));
    }
    const double scale = 1.0 / std::pow(dx, order_);
    const std::size_t r = radius_;
    for (std::size_t i = r; i + r < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < central_.size(); ++k) acc += central_[k] * in[i - r + k];
        out[i] = acc * scale;
    }
    const double mirror = (order_ % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t i = 0; i < r; ++i) {
        const auto& row = left_rows_[i];
        double left = 0.0;
        double right = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k) {
            left += row[k] * in[k];
            right += row[k] * in[n - 1 - k];
        }
        out[i] = left * scale;
        out[n - 1 - i] = mirror * right * scale;
    }
}

}  // namespace spde
