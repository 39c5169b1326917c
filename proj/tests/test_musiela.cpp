#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "spde/errors.hpp"
#include "spde/expansion.hpp"
#include "spde/grid_space.hpp"
#include "spde/musiela.hpp"
#include "spde/samples.hpp"
#include "spde/semigroup.hpp"

using namespace spde;

namespace {

const GridSpec fine_half = GridSpec::with_spacing(0.0, 20.0, 1.0 / 512.0);

GridFunction on(const GridSpec& g, double (*f)(double), double limit) { return GridFunction::sample(g, f, limit); }

double exp_neg(double x) { return std::exp(-x); }

HJMModel quiet_model(double a1, double level) {
    const GridSpec half = GridSpec::with_spacing(0.0, 30.0, 1.0 / 16.0);
    HJMModel model;
    model.u0 = GridFunction::sample(half, [level](double x) { return level - 0.04 * std::exp(-x); }, level);
    if (a1 != 0.0) model.sigmas.push_back(GridFunction::sample(half, [a1](double x) { return a1 * std::exp(-x); }, 0.0));
    model.m = 2;
    model.w = 1.0;
    model.validate();
    return model;
}

const GridSpec full = samples::hjm_full_grid();
const TimeGrid tg = samples::hjm_time_grid();

}  // namespace

TEST_CASE("HJM drift") {
    const GridFunction z = GridFunction::zero(fine_half);
    CHECK(sup_norm(hjm_drift({z})) == 0.0);

    const GridFunction s = on(fine_half, exp_neg, 0.0);
    const GridFunction a = hjm_drift({s});
    const GridFunction exact =
        GridFunction::sample(fine_half, [](double x) { return std::exp(-x) * (1.0 - std::exp(-x)); }, 0.0);
    CHECK(sup_norm(a - exact) < 1e-6);

    const GridFunction s2 = GridFunction::sample(fine_half, [](double x) { return 0.5 * x * std::exp(-x); }, 0.0);
    const GridFunction both = hjm_drift({s, s2});
    const GridFunction sum = hjm_drift({s}) + hjm_drift({s2});
    for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == sum[i]);

    CHECK_THROWS_AS((void)hjm_drift({GridFunction::constant(fine_half, 1.0)}), DomainError);
    HJMModel bad = quiet_model(0.01, 0.05);
    bad.sigmas[0] = bad.sigmas[0] + GridFunction::constant(bad.grid(), 0.01);
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("product estimate") {
    const GridSpec g16 = GridSpec::with_spacing(0.0, 30.0, 1.0 / 16.0);
    const GridSpec g32 = GridSpec::with_spacing(0.0, 30.0, 1.0 / 32.0);
    CHECK_THROWS((void)product_estimate_check(GridFunction::zero(g16), 1, 1.0));
    const double r16 = product_estimate_check(on(g16, exp_neg, 0.0), 1, 1.0);
    const double r32 = product_estimate_check(on(g32, exp_neg, 0.0), 1, 1.0);
    CHECK(std::isfinite(r16));
    CHECK(r32 == doctest::Approx(r16).epsilon(0.02));
    CHECK(product_estimate_check(3.5 * on(g16, exp_neg, 0.0), 1, 1.0) == doctest::Approx(r16).epsilon(1e-12));
}

TEST_CASE("reflection coefficients and cutoff") {
    for (int order : {2, 4, 6, 8}) {
        const auto c = reflection_coefficients(order);
        REQUIRE(c.size() == static_cast<std::size_t>(order + 1));
        double scale = 0.0;
        for (double ci : c) scale += std::abs(ci);
        for (int j = 0; j <= order; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * std::pow(-1.0 / static_cast<double>(i + 1), j);
            CHECK(std::abs(s - 1.0) <= 1e-14 * scale);
        }
    }
    CHECK(cutoff(0.0) == 1.0);
    CHECK(cutoff(1.0) == 1.0);
    CHECK(cutoff(6.0) == 0.0);
    CHECK(cutoff(9.0) == 0.0);
    double prev = 1.0;
    for (double y = 1.0; y <= 6.0; y += 0.125) {
        CHECK(cutoff(y) <= prev);
        prev = cutoff(y);
    }
}

TEST_CASE("extension operator") {
    const GridSpec half = GridSpec::with_spacing(0.0, 30.0, 1.0 / 16.0);
    const GridFunction c = GridFunction::constant(half, 0.3);
    const GridFunction Lc = extend(c, 4, full, 1.0);
    CHECK(sup_norm(Lc - GridFunction::constant(full, 0.3)) < 1e-12);

    const GridFunction f = GridFunction::sample(half, [](double x) { return std::exp(-x) + 1.0; }, 1.0);
    const GridFunction r = restrict_to_halfline(extend(f, 4, full, 1.0));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(r[i] == f[i]);

    // Lf is C^2 across 0: the centred second difference sees f''(0) = 1.
    const GridFunction Lf = extend(f, 4, full, 1.0);
    const std::size_t i0 = *full.node_index(0.0);
    const double dx = full.dx;
    CHECK(std::abs((Lf[i0 - 1] - 2.0 * Lf[i0] + Lf[i0 + 1]) / (dx * dx) - 1.0) < 1e-2);

    // Norm ratios in the order-m graph norm are stable under refinement.
    const GridSpec half_f = GridSpec::with_spacing(0.0, 30.0, 1.0 / 32.0);
    const GridSpec full_f = GridSpec::with_spacing(full.x_min, 30.0, 1.0 / 32.0);
    const auto sc = samples::half_line_suite(half);
    const auto sf = samples::half_line_suite(half_f);
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const double rc = derivative_graph_norm(extend(sc[i].f, 4, full, 1.0), 2, 1.0) / derivative_graph_norm(sc[i].f, 2, 1.0);
        const double rf =
            derivative_graph_norm(extend(sf[i].f, 4, full_f, 1.0), 2, 1.0) / derivative_graph_norm(sf[i].f, 2, 1.0);
        CHECK(std::abs(rf - rc) / rc <= 0.2);
    }

    const GridSpec misaligned = GridSpec::with_spacing(-10.0, 30.0, 1.0 / 32.0);
    CHECK_THROWS((void)ExtensionOperator(half, misaligned, 4, 1.0));
    const GridSpec shallow = GridSpec::with_spacing(-2.0, 30.0, 1.0 / 16.0);
    CHECK_THROWS((void)ExtensionOperator(half, shallow, 4, 1.0));
}

TEST_CASE("forward-rate simulation") {
    // sigma = 0: pure transport of L u0.
    const HJMModel still = quiet_model(0.0, 0.05);
    const PathEnsemble e0 = simulate_forward_rates(still, 0.0, tg, full, 2, 1);
    const GridFunction Lu0 = extend(still.u0, 4, full, 1.0);
    for (std::size_t j : {0u, 8u, 16u}) CHECK(sup_norm(e0.paths[1][j] - shift_apply(Lu0, tg.t(j))) < 1e-14);

    // eps = 0 restricted to R+ is the half-line Musiela solution on common noise.
    const HJMModel model = samples::hjm_model();
    const std::size_t n = 4;
    const PathEnsemble ext = simulate_forward_rates(model, 0.0, tg, full, n, 7);
    const ProblemSpec hp = halfline_problem(model, tg);
    const auto incr = std::make_shared<const WienerIncrements>(sample_wiener_increments(model.sigmas.size(), tg, n, 7));
    const PathEnsemble direct = solve_mild(hp, 0.0, incr);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t j = 0; j <= tg.n_steps; ++j)
            CHECK(sup_norm(restrict_to_halfline(ext.paths[p][j]) - direct.paths[p][j]) < 1e-12);

    // The eps-expansion identity is inherited from the transport module.
    const ProblemSpec ep = extended_problem(model, tg, full);
    const double eps = 0.1;
    const Trajectory u = solve_mild_path(ep, 0.0, incr.get(), 0);
    const Trajectory ue = solve_mild_path(ep, eps, incr.get(), 0);
    const Trajectory v1 = CoefficientEngine(ep, 1).vk_path(1, incr.get(), 0);
    const Trajectory r = remainder_empirical(u, ue, {v1}, eps, 2);
    for (std::size_t j = 0; j < u.size(); ++j)
        CHECK(sup_norm(ue[j] - u[j] - eps * v1[j] - r[j]) <= 1e-14 * (1.0 + sup_norm(ue[j])));
}

TEST_CASE("bond prices") {
    const TimeGrid t4 = TimeGrid::make(1.0, 4);
    const BondPrice b0 = bond_price(Trajectory(5, GridFunction::zero(fine_half)), t4, 4, 3.0);
    CHECK(b0.discounted == 1.0);
    CHECK(b0.undiscounted == 1.0);

    const double rate = 0.03;
    const Trajectory flat(5, GridFunction::constant(fine_half, rate));
    for (std::size_t j : {0u, 2u, 4u}) {
        const BondPrice b = bond_price(flat, t4, j, 5.0);
        CHECK(b.discounted == doctest::Approx(std::exp(-rate * (5.0 + t4.t(j)))).epsilon(1e-13));
        CHECK(b.discounted == doctest::Approx(b.undiscounted / b.money_market).epsilon(1e-14));
    }

    const Trajectory ey(5, on(fine_half, exp_neg, 0.0));
    for (double x : {0.5, 2.0, 10.0}) CHECK(std::abs(bond_price(ey, t4, 3, x).undiscounted - std::exp(-(1.0 - std::exp(-x)))) < 1e-6);
}

TEST_CASE("scalar Taylor identity behind the pricing error") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-3.0, 3.0);
    for (int m = 1; m <= 6; ++m) {
        CHECK(taylor_J(0.0, m) == 0.0);
        CHECK(taylor_r(0.0, m) == 0.0);
        for (int trial = 0; trial < 50; ++trial) {
            const double d = U(rng);
            CHECK(std::abs(std::exp(-d) - 1.0 - taylor_J(d, m) - taylor_r(d, m)) <= 1e-14 * std::exp(std::abs(d)));
        }
    }
    CHECK(taylor_J(0.5, 3) == doctest::Approx(-0.5 + 0.125));
    // r_m(d) = O(d^m)
    CHECK(std::abs(taylor_r(1e-3, 3)) <= 1e-9);
}

TEST_CASE("pricing-error expansion on the reference model") {
    const HJMModel model = samples::hjm_model();
    const PricingErrorExpansion z = pricing_error_expansion(model, {0.0}, tg, full, tg.n_steps, 1.0, 4, 2);
    CHECK(z.relative_error_l1.front() == 0.0);
    CHECK(z.residual_l1.front() == 0.0);

    const std::vector<double> eps{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64};
    const PricingErrorExpansion pe = pricing_error_expansion(model, eps, tg, full, tg.n_steps, 1.0, 32, 2);
    CHECK(pe.identity_error <= 1e-14);
    CHECK(pe.residual_slope() >= model.m - 0.2);
    REQUIRE(pe.exponential_moment.size() == eps.size());
    for (double em : pe.exponential_moment) CHECK(std::isfinite(em));
}

TEST_CASE("martingale diagnostic without noise") {
    const GridSpec half = GridSpec::with_spacing(0.0, 30.0, 1.0 / 16.0);
    HJMModel zero;
    zero.u0 = GridFunction::zero(half);
    zero.m = 2;
    const auto res = martingale_diagnostic(zero, {0.0, 0.1}, tg, full, 8, 1, 1.0);
    for (const auto& r : res) {
        CHECK(r.drift_estimate == 0.0);
        for (double m : r.mean) CHECK(m == 1.0);
    }
}

TEST_CASE("positivity fraction") {
    PathEnsemble zeros;
    zeros.paths.assign(2, Trajectory(3, GridFunction::zero(full)));
    CHECK(positivity_fraction(zeros) == 1.0);

    const PathEnsemble calm = simulate_forward_rates(quiet_model(1e-4, 0.5), 0.0, tg, full, 16, 3);
    CHECK(positivity_fraction(calm, true) == 1.0);

    HJMModel noisy = quiet_model(0.5, 0.0);
    noisy.u0 = GridFunction::zero(noisy.grid());
    const PathEnsemble wild = simulate_forward_rates(noisy, 0.0, tg, full, 16, 3);
    CHECK(positivity_fraction(wild, true) < 1.0);
}
