#include "spde/heat_kernel.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "spde/errors.hpp"

namespace spde {

LatticeHeatKernel::LatticeHeatKernel(double tau, double dx) : tau_(tau) {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw DomainError("heat time must be finite and nonnegative");
    const double r = tau / (dx * dx);
    if (r == 0.0) {
        taps_ = {1.0};
        return;
    }
    const double sigma = std::sqrt(2.0 * r);
    const auto r_max = static_cast<std::size_t>(std::ceil(8.0 * sigma)) + 24;
    const std::size_t nq = std::max<std::size_t>(512, 4 * (r_max + 1));

    std::vector<double> cos_table(nq);
    for (std::size_t q = 0; q < nq; ++q) {
        cos_table[q] = std::cos(2.0 * std::numbers::pi * static_cast<double>(q) / static_cast<double>(nq));
    }
    std::vector<double> e(nq);
    for (std::size_t q = 0; q < nq; ++q) {
        const double c1 = cos_table[q];
        const double c2 = cos_table[(2 * q) % nq];
        e[q] = std::exp(r * (-2.5 + (8.0 / 3.0) * c1 - c2 / 6.0));
    }
    taps_.assign(r_max + 1, 0.0);
    for (std::size_t j = 0; j <= r_max; ++j) {
        double acc = 0.0;
        for (std::size_t q = 0; q < nq; ++q) acc += e[q] * cos_table[(j * q) % nq];
        taps_[j] = acc / static_cast<double>(nq);
    }
    while (taps_.size() > 1 && std::abs(taps_.back()) < 1e-18) taps_.pop_back();
}

std::shared_ptr<const LatticeHeatKernel> LatticeHeatKernel::get(double tau, double dx) {
    static std::mutex mu;
    static std::map<std::pair<double, double>, std::shared_ptr<const LatticeHeatKernel>> cache;
    const std::lock_guard lock(mu);
    auto it = cache.find({tau, dx});
    if (it != cache.end()) return it->second;
    if (cache.size() > 4096) cache.clear();
    auto k = std::make_shared<const LatticeHeatKernel>(tau, dx);
    cache.emplace(std::make_pair(tau, dx), k);
    return k;
}

void LatticeHeatKernel::convolve(std::span<const double> dev, std::span<double> out) const {
    const std::size_t n = dev.size();
    const std::size_t R = radius();
    if (R >= n) {
        throw DomainError("heat kernel support (" + std::to_string(R) + " cells) exceeds the grid (" +
                          std::to_string(n) + " points)");
    }
    const double* k = taps_.data();
    const double left = dev[0];
    auto at = [&](std::ptrdiff_t i) -> double {
        if (i < 0) return left;
        if (i >= static_cast<std::ptrdiff_t>(n)) return 0.0;
        return dev[static_cast<std::size_t>(i)];
    };
    const auto sn = static_cast<std::ptrdiff_t>(n);
    const auto sR = static_cast<std::ptrdiff_t>(R);
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        double acc = k[0] * dev[static_cast<std::size_t>(i)];
        if (i >= sR && i + sR < sn) {
            const double* d = dev.data() + i;
            for (std::ptrdiff_t j = 1; j <= sR; ++j) acc += k[j] * (d[-j] + d[j]);
        } else {
            for (std::ptrdiff_t j = 1; j <= sR; ++j) acc += k[j] * (at(i - j) + at(i + j));
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
}

}  // namespace spde
