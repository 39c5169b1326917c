#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "spde/errors.hpp"
#include "spde/expansion.hpp"
#include "spde/grid_space.hpp"
#include "spde/samples.hpp"
#include "spde/semigroup.hpp"

using namespace spde;

namespace {

samples::TransportConfig small_config(bool stochastic, int m = 2) {
    samples::TransportConfig c;
    c.x_min = -12.0;
    c.x_max = 24.0;
    c.dx = 1.0 / 16.0;
    c.n_steps = 16;
    c.stochastic = stochastic;
    c.m = m;
    return c;
}

// u0 of the transport problem: antiderivative of e^{-x^2 / (2 s^2)}, s = 1.5.
constexpr double s0 = 1.5;
double gauss_integral(double x, double s) { return -s * std::sqrt(std::numbers::pi / 2.0) * std::erfc(x / (s * std::numbers::sqrt2)); }

ProblemSpec free_problem(bool shifted) {
    auto c = small_config(false);
    c.shifted = shifted;
    ProblemSpec ps = samples::transport_problem(c);
    ps.alpha.clear();
    return ps;
}

std::shared_ptr<const WienerIncrements> incr_for(const ProblemSpec& ps, std::size_t n, std::uint64_t seed) {
    return std::make_shared<const WienerIncrements>(sample_wiener_increments(ps.noise.factors(), ps.tg, n, seed));
}

double max_norm(const Trajectory& a, const WeightedSpace& sp) {
    double m = 0.0;
    for (const auto& u : a) m = std::max(m, norm(u, sp));
    return m;
}

double max_gap(const Trajectory& a, const Trajectory& b, const WeightedSpace& sp) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, norm(a[j] - b[j], sp));
    return m;
}

}  // namespace

TEST_CASE("noise-free mild solution is the product semigroup") {
    for (bool shifted : {false, true}) {
        const ProblemSpec ps = free_problem(shifted);
        const Trajectory u = solve_mild_path(ps, 0.25, nullptr, 0);
        REQUIRE(u.size() == ps.tg.n_steps + 1);
        for (std::size_t j : {1u, 7u, 16u}) {
            const GridFunction ref = product_apply(ps.u0, ps.tg.t(j), 0.25, ps.perturbation);
            CHECK(norm(u[j] - ref, ps.sp) <= 1e-12 * norm(ref, ps.sp));
        }
    }
}

TEST_CASE("constant drift under the shift adds c t") {
    ProblemSpec ps = free_problem(false);
    const double c = 0.3;
    ps.alpha.assign(ps.tg.n_steps, GridFunction::constant(ps.grid(), c));
    const Trajectory u = solve_mild_path(ps, 0.0, nullptr, 0);
    for (std::size_t j = 0; j <= ps.tg.n_steps; ++j) {
        const double t = ps.tg.t(j);
        const GridFunction ref = shift_apply(ps.u0, t) + GridFunction::constant(ps.grid(), c * t);
        CHECK(sup_norm(u[j] - ref) < 1e-13);
    }
}

TEST_CASE("Gaussian mild solution against the shift-and-heat closed form") {
    for (bool shifted : {false, true}) {
        const ProblemSpec ps = free_problem(shifted);
        const double eps = 0.5;
        const Trajectory u = solve_mild_path(ps, eps, nullptr, 0);
        const double t = 1.0;
        const double sigma = std::sqrt(s0 * s0 + 2.0 * eps * t);
        const double decay = shifted ? std::exp(-0.5 * eps * t) : 1.0;
        const GridFunction exact = GridFunction::sample(
            ps.grid(), [=](double x) { return decay * s0 / sigma * gauss_integral(x + t, sigma); }, 0.0);
        CHECK(sup_norm(u.back() - exact) < 1e-4);
    }
}

TEST_CASE("eps outside [0, 1] is rejected") {
    const ProblemSpec ps = free_problem(true);
    CHECK_THROWS_AS((void)solve_mild_path(ps, 1.5, nullptr, 0), DomainError);
    CHECK_THROWS_AS((void)solve_mild_path(ps, -0.1, nullptr, 0), DomainError);
}

TEST_CASE("expansion coefficients") {
    // Zero data gives zero coefficients.
    ProblemSpec zero = free_problem(false);
    zero.u0 = GridFunction::zero(zero.grid());
    for (const auto& u : CoefficientEngine(zero, 1).vk_path(1, nullptr, 0)) CHECK(sup_norm(u) == 0.0);

    // v_1(t) = t S_A(t) u0'' with u0'' = -(x / s^2) e^{-x^2 / (2 s^2)} for G = A^2.
    const ProblemSpec ps = free_problem(false);
    const Trajectory v1 = CoefficientEngine(ps, 1).vk_path(1, nullptr, 0);
    for (std::size_t j : {4u, 16u}) {
        const double t = ps.tg.t(j);
        const GridFunction ref = GridFunction::sample(
            ps.grid(), [t](double x) { return -t * (x + t) / (s0 * s0) * std::exp(-(x + t) * (x + t) / (2 * s0 * s0)); },
            0.0);
        CHECK(norm(v1[j] - ref, ps.sp) < 1e-5);
    }
    CHECK_THROWS_AS((void)CoefficientEngine(ps, 1).vk_path(2, nullptr, 0), DomainError);
}

TEST_CASE("v_k are the eps-derivatives on common noise") {
    const std::vector<double> h{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
    const ProblemSpec det = samples::transport_problem(small_config(false, 3));
    CHECK(eps_derivative_check(det, 0.0, h, 1, nullptr).relative_error <= 1e-3);
    CHECK(eps_derivative_check(det, 0.0, h, 2, nullptr).relative_error <= 1e-2);

    const ProblemSpec sto = samples::transport_problem(small_config(true, 2));
    CHECK(eps_derivative_check(sto, 0.0, h, 1, incr_for(sto, 64, 5)).relative_error <= 1e-2);

    ProblemSpec zero = det;
    zero.u0 = GridFunction::zero(zero.grid());
    for (auto& a : zero.alpha) a = GridFunction::zero(zero.grid());
    CHECK(eps_derivative_check(zero, 0.0, h, 1, nullptr).relative_error == 0.0);
}

TEST_CASE("remainder modes") {
    const ProblemSpec sto = samples::transport_problem(small_config(true, 2));
    const auto incr = incr_for(sto, 8, 3);
    for (auto mode : {RemainderMode::Empirical, RemainderMode::ThreeTerm})
        for (const auto& path : compute_remainder(sto, 0.0, mode, incr).paths)
            for (const auto& r : path) CHECK(sup_norm(r) == 0.0);

    // Empirical mode is the algebraic identity.
    const double eps = 1.0 / 8.0;
    const Trajectory u = solve_mild_path(sto, 0.0, incr.get(), 2);
    const Trajectory ue = solve_mild_path(sto, eps, incr.get(), 2);
    const Trajectory v1 = CoefficientEngine(sto, 1).vk_path(1, incr.get(), 2);
    const Trajectory r = remainder_empirical(u, ue, {v1}, eps, 2);
    for (std::size_t j = 0; j < u.size(); ++j) {
        const GridFunction gap = ue[j] - u[j] - eps * v1[j] - r[j];
        CHECK(norm(gap, sto.sp) <= 1e-14 * (1.0 + norm(ue[j], sto.sp)));
    }

    // m = 1, noise-free: the three-term form matches u_eps - u.
    const ProblemSpec det1 = samples::transport_problem(small_config(false, 1));
    const ThreeTermRemainder tt(det1, eps, 1);
    const Trajectory d = remainder_empirical(solve_mild_path(det1, 0.0, nullptr, 0), solve_mild_path(det1, eps, nullptr, 0),
                                             {}, eps, 1);
    CHECK(max_gap(tt.path(nullptr, 0), d, det1.sp) <= 1e-3 * max_norm(d, det1.sp));

    // Full stochastic case on 8 paths.
    const RemainderStudy st = run_remainder_study(sto, {{1.0 / 8, 1.0 / 16}, {1, 2}, 8, 3, 8});
    for (const auto& row : st.mode_mismatch)
        for (double mm : row) CHECK(mm <= 1e-3);

    // The Fubini rewriting of R3 differs from the direct double sum by O(dt).
    auto fubini_gap = [](std::size_t steps, const WienerIncrements& w) {
        auto c = small_config(true, 2);
        c.n_steps = steps;
        const ProblemSpec ps = samples::transport_problem(c);
        const ThreeTermRemainder t(ps, 1.0 / 8.0, 2);
        double g = 0.0;
        for (std::size_t p = 0; p < w.n_paths(); ++p)
            g = std::max(g, max_gap(t.stochastic_part(w, p), t.stochastic_part_fubini(w, p), ps.sp));
        return g;
    };
    const auto fine = incr_for(sto, 8, 4);
    CHECK(fubini_gap(16, *fine) <= fubini_gap(8, fine->aggregate(2)) / 1.6);
}

TEST_CASE("product integration weights") {
    for (int m = 1; m <= 4; ++m) {
        const std::size_t N = 7;
        const auto w = product_weights(N, m);
        REQUIRE(w.size() == N + 1);
        double s0w = 0.0;
        double s1w = 0.0;
        for (std::size_t q = 0; q <= N; ++q) {
            s0w += w[q];
            s1w += w[q] * static_cast<double>(q);
        }
        // Exact for phi = 1 and phi = rho.
        const double n = static_cast<double>(N);
        CHECK(s0w == doctest::Approx(std::pow(n, m) / m).epsilon(1e-13));
        CHECK(s1w == doctest::Approx(std::pow(n, m + 1) / (m * (m + 1.0))).epsilon(1e-13));
    }
}

TEST_CASE("bound function f_eps") {
    CHECK(f_epsilon(0.7, 1, 0.0, 0.0, 0.5) == doctest::Approx(0.7));
    CHECK(f_epsilon(0.7, 2, 0.0, 0.0, 0.5) == doctest::Approx(0.245));
    CHECK(f_epsilon(1.0, 1, 1.0, -1.0, 0.5) == doctest::Approx(std::exp(1.0) * 2.0 * (1.0 - std::exp(-0.5))));
    // m = 2 against e^{a t} int_0^t (t - r) e^{b r} dr = e^{a t} (e^{b t} - 1 - b t) / b^2.
    const double a = 0.3;
    const double b = -0.4 * 0.5;
    CHECK(f_epsilon(2.0, 2, a, -0.4, 0.5) ==
          doctest::Approx(std::exp(2 * a) * (std::exp(2 * b) - 1 - 2 * b) / (b * b)).epsilon(1e-12));

    const std::vector<double> times{0.0, 0.5, 1.0, 1.5, 2.0};
    const auto fs = f_star(times, 1, -3.0, 0.0, 0.0);
    double running = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
        running = std::max(running, f_epsilon(times[j], 1, -3.0, 0.0, 0.0));
        CHECK(fs[j] == running);
        if (j > 0) CHECK(fs[j] >= fs[j - 1]);
    }
    // t e^{-3t} peaks at t = 1/3, so f* is flat after the first grid point past it.
    CHECK(fs[4] == fs[1]);
}

TEST_CASE("theoretical remainder bound") {
    ProblemSpec zero = free_problem(true);
    zero.u0 = GridFunction::zero(zero.grid());
    const RemainderBound b0 = theoretical_bound(zero, 0.25);
    for (double b : b0.bound_pointwise) CHECK(b == 0.0);
    CHECK(b0.bound_uniform == 0.0);

    // Noise-free: the bound dominates the measured remainder on the whole grid.
    const ProblemSpec det = samples::transport_problem(small_config(false, 2));
    for (double eps : {1.0 / 8, 1.0 / 32, 1.0 / 128}) {
        const RemainderBound b = theoretical_bound(det, eps);
        CHECK(b.rigorous);
        const Trajectory r = compute_remainder(det, eps, RemainderMode::Empirical, nullptr).paths.front();
        for (std::size_t j = 1; j < r.size(); ++j) CHECK(norm(r[j], det.sp) <= b.bound_pointwise[j]);
    }

    // m = 2: halving eps quarters the bound up to the slowly varying f factors.
    const double full = theoretical_bound(det, 0.25).bound_pointwise.back();
    const double half = theoretical_bound(det, 0.125).bound_pointwise.back();
    CHECK(half / full == doctest::Approx(0.25).epsilon(0.05));

    ProblemSpec p3 = det;
    p3.p = 3.0;
    const RemainderBound b3 = theoretical_bound(p3, 0.25);
    CHECK_FALSE(b3.rigorous);
    CHECK(b3.N_p == 1.0);
    CHECK_FALSE(b3.warning.empty());
}

TEST_CASE("log-log slopes") {
    const std::vector<double> x{0.5, 0.25, 0.125, 0.0625};
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 * v * v * v);
    CHECK(loglog_slope(x, y) == doctest::Approx(3.0).epsilon(1e-12));

    const std::vector<double> eps{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
    for (int m : {1, 2}) {
        const ProblemSpec det = samples::transport_problem(small_config(false, m));
        CHECK(std::abs(convergence_slope(det, eps, SlopeQuantity::Remainder, 1, 0) - m) <= 0.2);
    }
    const ProblemSpec sto = samples::transport_problem(small_config(true, 2));
    CHECK(std::abs(convergence_slope(sto, eps, SlopeQuantity::Difference, 8, 1) - 1.0) <= 0.2);

    ProblemSpec zero = free_problem(true);
    zero.u0 = GridFunction::zero(zero.grid());
    CHECK_THROWS((void)convergence_slope(zero, eps, SlopeQuantity::Remainder, 1, 0));
}
