#include "spde/semigroup.hpp"

#include <cmath>

#include <fmt/format.h>

#include "spde/errors.hpp"
#include "spde/heat_kernel.hpp"

namespace spde {

GeneratorTag GeneratorTag::shift() { return {GeneratorKind::Shift, 1.0, 0.0, 0.0, {}}; }

GeneratorTag GeneratorTag::second_derivative(double w) {
    return {GeneratorKind::SecondDerivative, 1.0, 0.5 * w * w, 0.0, Perturbation::plain(w)};
}

GeneratorTag GeneratorTag::second_derivative_shifted(double w) {
    return {GeneratorKind::SecondDerivativeShifted, 1.0, 0.0, 0.0, Perturbation::shifted(w)};
}

GeneratorTag GeneratorTag::sum(double eps, Perturbation p) {
    return {GeneratorKind::Sum, 1.0, eps * p.growth(), eps, p};
}

std::size_t aligned_steps(double t, double dx) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw AlignmentError(fmt::format("time {} is not a nonnegative number", t));
    const double s = t / dx;
    const double r = std::round(s);
    if (std::abs(s - r) > 1e-9 * std::max(1.0, r)) {
        throw AlignmentError(fmt::format("time {} is not an integer multiple of dx = {}", t, dx));
    }
    return static_cast<std::size_t>(r);
}

namespace {

std::vector<double> shifted_values(std::span<const double> v, double limit, std::size_t s) {
    const std::size_t n = v.size();
    std::vector<double> out(n, limit);
    for (std::size_t i = 0; i + s < n; ++i) out[i] = v[i + s];
    return out;
}

// decay * (limit + K * (v - limit))
GridFunction heat_with_kernel(const GridFunction& f, const LatticeHeatKernel& k, double decay) {
    const double lim = f.limit();
    const auto v = f.values();
    std::vector<double> dev(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) dev[i] = v[i] - lim;
    std::vector<double> out(v.size());
    k.convolve(dev, out);
    for (double& x : out) x = decay * (lim + x);
    return {f.spec(), std::move(out), decay * lim};
}

}  // namespace

GridFunction shift_apply(const GridFunction& f, double t) {
    const std::size_t s = aligned_steps(t, f.spec().dx);
    if (s == 0) return f;
    return {f.spec(), shifted_values(f.values(), f.limit(), s), f.limit()};
}

GridFunction heat_apply(const GridFunction& f, double t, bool shifted, double w) {
    if (!(t >= 0.0)) throw DomainError("heat time must be nonnegative");
    if (t == 0.0) return f;
    const auto k = LatticeHeatKernel::get(t, f.spec().dx);
    const double decay = shifted ? std::exp(-0.5 * w * w * t) : 1.0;
    return heat_with_kernel(f, *k, decay);
}

GridFunction heat_apply(const GridFunction& f, double t, const Perturbation& p) {
    return heat_apply(f, t, p.kind == PerturbationKind::SecondDerivativeShifted, p.w);
}

GridFunction product_apply(const GridFunction& f, double t, double eps, const Perturbation& p) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw DomainError(fmt::format("eps = {} outside [0, 1]", eps));
    return heat_apply(shift_apply(f, t), eps * t, p);
}

GridFunction apply_generator(const GridFunction& f, const Perturbation& p) {
    const auto v = f.values();
    const std::size_t n = v.size();
    const double lim = f.limit();
    const double left = v[0] - lim;
    auto d = [&](std::ptrdiff_t i) -> double {
        if (i < 0) return left;
        if (i >= static_cast<std::ptrdiff_t>(n)) return 0.0;
        return v[static_cast<std::size_t>(i)] - lim;
    };
    const double dx = f.spec().dx;
    const double s = 1.0 / (12.0 * dx * dx);
    const double rate = p.rate();
    std::vector<double> out(n);
    for (std::size_t ui = 0; ui < n; ++ui) {
        const auto i = static_cast<std::ptrdiff_t>(ui);
        const double d2 = (-d(i - 2) + 16.0 * d(i - 1) - 30.0 * d(i) + 16.0 * d(i + 1) - d(i + 2)) * s;
        out[ui] = d2 + rate * v[ui];
    }
    return {f.spec(), std::move(out), rate * lim};
}

GridFunction generator_power(const GridFunction& f, int k, const Perturbation& p) {
    if (k < 0) throw DomainError("negative generator power");
    GridFunction g = f;
    for (int i = 0; i < k; ++i) g = apply_generator(g, p);
    return g;
}

double graph_norm(const GridFunction& f, int m, const Perturbation& p, const WeightedSpace& sp) {
    double acc = 0.0;
    GridFunction g = f;
    for (int j = 0; j <= m; ++j) {
        if (j > 0) g = apply_generator(g, p);
        const double nj = norm(g, sp);
        acc += nj * nj;
    }
    if (!std::isfinite(acc)) throw DomainError("D(G^m) norm overflow");
    return std::sqrt(acc);
}

namespace {

double factorial(int k) {
    double r = 1.0;
    for (int i = 2; i <= k; ++i) r *= i;
    return r;
}

double ipow(double x, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
}

// 1/(m-1)! int_0^tau (tau-u)^{m-1} S_G(u) gm du, corrected trapezoid with `cells` cells.
GridFunction taylor_integral(const GridFunction& gm, const GridFunction& gm1, double tau, int m, int cells,
                             const Perturbation& p) {
    const double h = tau / cells;
    const auto k = LatticeHeatKernel::get(h, gm.spec().dx);
    const double decay = p.kind == PerturbationKind::SecondDerivativeShifted ? std::exp(-0.5 * p.w * p.w * h) : 1.0;
    GridFunction y = gm;
    GridFunction acc = 0.5 * ipow(tau, m - 1) * gm;
    for (int q = 1; q <= cells; ++q) {
        y = heat_with_kernel(y, *k, decay);
        const double weight = (q == cells) ? 0.5 * (m == 1 ? 1.0 : 0.0) : ipow(tau - q * h, m - 1);
        if (weight != 0.0) acc.axpy(weight, y);
    }
    acc *= h;

    // F'(u) = -(m-1)(tau-u)^{m-2} S(u) G^m f + (tau-u)^{m-1} S(u) G^{m+1} f
    GridFunction d_end = GridFunction::zero(gm.spec());
    if (m == 1) {
        d_end = heat_with_kernel(gm1, *LatticeHeatKernel::get(tau, gm.spec().dx),
                                 p.kind == PerturbationKind::SecondDerivativeShifted
                                     ? std::exp(-0.5 * p.w * p.w * tau)
                                     : 1.0);
    } else if (m == 2) {
        d_end = -1.0 * y;
    }
    GridFunction d_start = ipow(tau, m - 1) * gm1;
    if (m >= 2) d_start.axpy(-(m - 1) * ipow(tau, m - 2), gm);
    acc.axpy(-h * h / 12.0, d_end);
    acc.axpy(h * h / 12.0, d_start);
    acc *= 1.0 / factorial(m - 1);
    return acc;
}

}  // namespace

TaylorExpansion taylor_expand_semigroup(const GridFunction& f, double t, double eps, int m, const Perturbation& p,
                                        const WeightedSpace& sp) {
    if (m < 1) throw DomainError("Taylor order m must be at least 1");
    if (!(t >= 0.0) || !(eps >= 0.0)) throw DomainError("t and eps must be nonnegative");
    const double tau = eps * t;
    std::vector<GridFunction> powers;
    powers.reserve(static_cast<std::size_t>(m) + 2);
    powers.push_back(f);
    for (int k = 1; k <= m + 1; ++k) powers.push_back(apply_generator(powers.back(), p));
    (void)graph_norm(f, m, p, sp);

    GridFunction partial = f;
    for (int k = 1; k < m; ++k) partial.axpy(ipow(tau, k) / factorial(k), powers[static_cast<std::size_t>(k)]);
    if (tau == 0.0) return {std::move(partial), GridFunction::zero(f.spec()), 0.0};

    const auto& gm = powers[static_cast<std::size_t>(m)];
    const auto& gm1 = powers[static_cast<std::size_t>(m) + 1];
    GridFunction rem = taylor_integral(gm, gm1, tau, m, 64, p);
    const GridFunction coarse = taylor_integral(gm, gm1, tau, m, 32, p);
    const double tol = norm(rem - coarse, sp) / 15.0;
    return {std::move(partial), std::move(rem), tol};
}

namespace {

std::vector<double> end_corrected_weights(std::size_t count) {
    std::vector<double> w(count, 1.0);
    const double c[4] = {17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0};
    for (std::size_t i = 0; i < 4; ++i) {
        w[i] = c[i];
        w[count - 1 - i] = c[i];
    }
    return w;
}

}  // namespace

GridFunction resolvent_shift(double lambda, const GridFunction& f, double eps, const Perturbation& p) {
    if (!(lambda > 0.0)) throw DomainError(fmt::format("resolvent needs lambda > 0, got {}", lambda));
    const double dx = f.spec().dx;
    const double t_cut = std::log(1e10) / lambda;
    const auto q_max = std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(t_cut / dx)));
    const auto weights = end_corrected_weights(q_max + 1);
    const Propagator step(f.spec(), dx, {eps, p});
    GridFunction g = f;
    GridFunction acc = weights[0] * f;
    for (std::size_t q = 1; q <= q_max; ++q) {
        g = step.apply(g);
        acc.axpy(weights[q] * std::exp(-lambda * dx * static_cast<double>(q)), g);
    }
    acc *= dx;
    return acc;
}

ResolventSolution solve_resolvent_G(double lambda, const GridFunction& f, const Perturbation& p) {
    const double w = p.w;
    if (!(lambda > 0.25 * w * w)) {
        throw CoercivityError(fmt::format("lambda = {} must exceed w^2/4 = {}", lambda, 0.25 * w * w));
    }
    const double lam = lambda - p.rate();
    const GridSpec& g = f.spec();
    const std::size_t n = g.n;
    const double dx = g.dx;
    const auto fp = derivative(f, 1);
    std::vector<double> ft(n);
    for (std::size_t i = 0; i < n; ++i) ft[i] = fp[i] * std::exp(0.5 * w * g.x(i));

    const double c = lam - 0.25 * w * w;
    const double lo = -1.0 / (dx * dx) - w / (2.0 * dx);
    const double di = c + 2.0 / (dx * dx);
    const double up = -1.0 / (dx * dx) + w / (2.0 * dx);

    // Thomas algorithm on the interior nodes 1..n-2.
    std::vector<double> cp(n, 0.0);
    std::vector<double> dp(n, 0.0);
    std::vector<double> z(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double denom = di - (i > 1 ? lo * cp[i - 1] : 0.0);
        if (std::abs(denom) < 1e-300) throw NumericError("singular tridiagonal system");
        cp[i] = up / denom;
        dp[i] = (ft[i] - (i > 1 ? lo * dp[i - 1] : 0.0)) / denom;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
        z[i] = dp[i] - (i + 2 < n ? cp[i] * z[i + 1] : 0.0);
    }

    double res2 = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double tz = lo * z[i - 1] + di * z[i] + up * z[i + 1];
        const double r = tz - ft[i];
        res2 += r * r;
    }

    const double y_inf = f.limit() / lam;
    std::vector<double> yp(n);
    for (std::size_t i = 0; i < n; ++i) yp[i] = z[i] * std::exp(-0.5 * w * g.x(i));
    std::vector<double> y(n);
    y[n - 1] = y_inf;
    for (std::size_t i = n - 1; i-- > 0;) y[i] = y[i + 1] - 0.5 * dx * (yp[i] + yp[i + 1]);

    const double lim_res = lam * y_inf - f.limit();
    const double residual = std::sqrt(lim_res * lim_res + dx * res2);
    if (!std::isfinite(residual)) throw NumericError("resolvent solve produced non-finite values");
    return {GridFunction(g, std::move(y), y_inf), std::move(z), residual};
}

double resolvent_stencil_residual(double lambda, const GridFunction& y, const GridFunction& f, const Perturbation& p,
                                  const WeightedSpace& sp) {
    const auto y2 = derivative(y, 2);
    const double rate = p.rate();
    std::vector<double> r(y.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = lambda * y[i] - y2[i] - rate * y[i] - f[i];
    return std::sqrt(weighted_l2_sq(r, sp));
}

double integration_by_parts_residual(const GridFunction& f, const WeightedSpace& sp) {
    return inner_product(derivative(f, 1), f, sp) + 0.5 * sp.w() * weighted_seminorm_sq(f, sp);
}

double dissipativity_check(const GeneratorTag& gen, const GridFunction& f, const WeightedSpace& sp) {
    const double w = sp.w();
    auto shift_part = [&] { return inner_product(derivative(f, 1), f, sp); };
    auto second_part = [&] { return inner_product(derivative(f, 2), f, sp); };
    auto pert_part = [&](const Perturbation& p) {
        double v = second_part();
        if (p.kind == PerturbationKind::SecondDerivativeShifted) {
            const double nf = norm(f, sp);
            v -= 0.5 * w * w * nf * nf;
        }
        return v;
    };
    switch (gen.kind) {
        case GeneratorKind::Shift:
            return shift_part();
        case GeneratorKind::SecondDerivative:
            return second_part();
        case GeneratorKind::SecondDerivativeShifted:
            return pert_part(Perturbation::shifted(w));
        case GeneratorKind::Sum:
            return shift_part() + gen.eps * pert_part(gen.perturbation);
    }
    return 0.0;
}

double commutator_residual(const GridFunction& f, double t, double eps, const Perturbation& p,
                           const WeightedSpace& sp) {
    const GridFunction a = shift_apply(heat_apply(f, eps * t, p), t);
    const GridFunction b = heat_apply(shift_apply(f, t), eps * t, p);
    return norm(a - b, sp);
}

Propagator::Propagator(const GridSpec& grid, double dt, SemigroupParams params)
    : grid_(grid), dt_(dt), shift_(params.identity ? 0 : aligned_steps(dt, grid.dx)) {
    if (!(params.eps >= 0.0 && params.eps <= 1.0)) {
        throw DomainError(fmt::format("eps = {} outside [0, 1]", params.eps));
    }
    const double tau = params.identity ? 0.0 : params.eps * dt;
    kernel_ = LatticeHeatKernel::get(tau, grid.dx);
    const auto& p = params.perturbation;
    decay_ = p.kind == PerturbationKind::SecondDerivativeShifted ? std::exp(-0.5 * p.w * p.w * tau) : 1.0;
}

GridFunction Propagator::apply(const GridFunction& f) const {
    GridFunction s(f.spec(), shifted_values(f.values(), f.limit(), shift_), f.limit());
    if (kernel_->radius() == 0 && decay_ == 1.0) return s;
    return heat_with_kernel(s, *kernel_, decay_);
}

GridFunction Propagator::apply_n(const GridFunction& f, std::size_t times) const {
    GridFunction g = f;
    for (std::size_t i = 0; i < times; ++i) g = apply(g);
    return g;
}

}  // namespace spde
