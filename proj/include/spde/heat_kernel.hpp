#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace spde {

/// Convolution coefficients of exp(tau * D2), where D2 is the five-point
/// fourth-order second difference on spacing dx:
///
///     k_j = (1/pi) int_0^pi exp(r s(theta)) cos(j theta) d theta,
///     r = tau / dx^2,  s(theta) = -5/2 + (8/3) cos theta - (1/6) cos 2 theta.
///
/// Entries beyond eight kernel standard deviations plus a fixed margin are
/// dropped, as are trailing entries below 1e-18.
class LatticeHeatKernel {
public:
    /// Cached by (tau, dx). tau >= 0.
    static std::shared_ptr<const LatticeHeatKernel> get(double tau, double dx);

    [[nodiscard]] double tau() const noexcept { return tau_; }
    [[nodiscard]] std::size_t radius() const noexcept { return taps_.size() - 1; }
    /// k_0 .. k_radius; the kernel is symmetric.
    [[nodiscard]] std::span<const double> taps() const noexcept { return taps_; }

    /// out_i = sum_j k_|j| dev_{i-j}, with dev extended by dev[0] on the left
    /// and by 0 on the right. out must not alias dev.
    void convolve(std::span<const double> dev, std::span<double> out) const;

    LatticeHeatKernel(double tau, double dx);

private:
    double tau_;
    std::vector<double> taps_;
};

}  // namespace spde
