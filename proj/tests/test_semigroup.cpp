#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "spde/errors.hpp"
#include "spde/grid_space.hpp"
#include "spde/samples.hpp"
#include "spde/semigroup.hpp"

using namespace spde;

namespace {

const GridSpec grid = GridSpec::with_spacing(-20.0, 40.0, 1.0 / 32.0);
const WeightedSpace sp(1.0, grid);

// Antiderivative of the Gaussian e^{-x^2 / (2 s^2)} with value 0 at +inf.
double gauss_integral(double x, double s) { return -s * std::sqrt(std::numbers::pi / 2.0) * std::erfc(x / (s * std::numbers::sqrt2)); }

GridFunction gaussian_f(double s) {
    return GridFunction::sample(grid, [s](double x) { return gauss_integral(x, s); }, 0.0);
}

double max_abs_diff(const GridFunction& a, const GridFunction& b) { return sup_norm(a - b); }

// 20-point Gauss-Legendre on [a, b], composite over `panels`.
double gauss_legendre(const std::function<double(double)>& f, double a, double b, int panels) {
    static const double xg[10] = {0.0765265211334973, 0.2277858511416451, 0.3737060887154195, 0.5108670019508271,
                                  0.6360536807265150, 0.7463319064601508, 0.8391169718222188, 0.9122344282513259,
                                  0.9639719272779138, 0.9931285991850949};
    static const double wg[10] = {0.1527533871307258, 0.1491729864726037, 0.1420961093183820, 0.1316886384491766,
                                  0.1181945319615184, 0.1019301198172404, 0.0832767415767048, 0.0626720483341091,
                                  0.0406014298003869, 0.0176140071391521};
    double total = 0.0;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double c = a + (p + 0.5) * h;
        for (int i = 0; i < 10; ++i) total += 0.5 * h * wg[i] * (f(c - 0.5 * h * xg[i]) + f(c + 0.5 * h * xg[i]));
    }
    return total;
}

}  // namespace

TEST_CASE("generator tags carry the growth constants") {
    CHECK(GeneratorTag::shift().M == 1.0);
    CHECK(GeneratorTag::shift().omega == 0.0);
    CHECK(GeneratorTag::second_derivative_shifted(1.0).omega == 0.0);
    CHECK(GeneratorTag::second_derivative(2.0).omega == doctest::Approx(2.0));
    CHECK(Perturbation::plain(1.0).growth() == doctest::Approx(0.5));
    CHECK(Perturbation::shifted(1.0).rate() == doctest::Approx(-0.5));
}

TEST_CASE("shift semigroup") {
    const GridFunction f = gaussian_f(1.0 / std::numbers::sqrt2);
    CHECK(max_abs_diff(shift_apply(f, 0.0), f) == 0.0);
    const GridFunction c = GridFunction::constant(grid, 2.0);
    CHECK(max_abs_diff(shift_apply(c, 1.0), c) == 0.0);
    // int |f'(t + x)|^2 e^{wx} dx = e^{-wt} int |f'|^2 e^{wx} dx
    CHECK(weighted_seminorm_sq(shift_apply(f, 1.0), sp) ==
          doctest::Approx(std::exp(-1.0) * weighted_seminorm_sq(f, sp)).epsilon(1e-10));
    CHECK_THROWS_AS((void)shift_apply(f, 0.01), AlignmentError);
    CHECK_THROWS_AS((void)aligned_steps(0.3, 1.0 / 32.0), AlignmentError);
    CHECK(aligned_steps(0.5, 1.0 / 32.0) == 16);
}

TEST_CASE("heat semigroup against Gaussian closed forms") {
    const double s = 1.5;
    const GridFunction f = gaussian_f(s);
    CHECK(max_abs_diff(heat_apply(f, 0.0, false, 1.0), f) < 1e-14);
    const GridFunction c = GridFunction::constant(grid, 0.7);
    CHECK(max_abs_diff(heat_apply(c, 0.8, false, 1.0), c) < 1e-14);
    // Shifted: the whole function, limit included, decays by e^{-w^2 t / 2}.
    const GridFunction cs = heat_apply(c, 0.8, true, 1.0);
    CHECK(cs.limit() == doctest::Approx(0.7 * std::exp(-0.4)));
    CHECK(max_abs_diff(cs, GridFunction::constant(grid, 0.7 * std::exp(-0.4))) < 1e-14);

    for (double t : {0.25, 1.0}) {
        const double sigma = std::sqrt(s * s + 2.0 * t);
        const GridFunction exact =
            GridFunction::sample(grid, [s, sigma](double x) { return s / sigma * gauss_integral(x, sigma); }, 0.0);
        CHECK(max_abs_diff(heat_apply(f, t, false, 1.0), exact) < 1e-5);
        CHECK(max_abs_diff(heat_apply(f, t, true, 1.0), std::exp(-0.5 * t) * exact) < 1e-5);
    }
}

TEST_CASE("product semigroup") {
    const double s = 1.5;
    const GridFunction f = gaussian_f(s);
    const auto P = Perturbation::plain(1.0);
    CHECK(max_abs_diff(product_apply(f, 1.0, 0.0, P), shift_apply(f, 1.0)) < 1e-15);
    CHECK(max_abs_diff(product_apply(f, 0.0, 0.5, P), f) < 1e-15);
    const double sigma = std::sqrt(s * s + 2.0 * 0.25);
    const GridFunction exact = GridFunction::sample(
        grid, [s, sigma](double x) { return s / sigma * gauss_integral(x + 1.0, sigma); }, 0.0);
    CHECK(max_abs_diff(product_apply(f, 1.0, 0.25, P), exact) < 1e-4);
}

TEST_CASE("semigroup law on aligned times") {
    const GridFunction f = gaussian_f(1.5);
    CHECK(max_abs_diff(shift_apply(shift_apply(f, 0.5), 0.25), shift_apply(f, 0.75)) < 1e-10);
    for (bool shifted : {false, true}) {
        const GridFunction two = heat_apply(heat_apply(f, 0.3, shifted, 1.0), 0.2, shifted, 1.0);
        CHECK(max_abs_diff(two, heat_apply(f, 0.5, shifted, 1.0)) < 1e-6);
    }
}

TEST_CASE("contraction of S_A and of the shifted heat semigroup") {
    for (const auto& s : samples::full_line_suite(grid)) {
        const double n = norm(s.f, sp);
        for (double t : {0.25, 1.0, 3.0}) {
            CHECK(norm(shift_apply(s.f, t), sp) <= n * (1.0 + 1e-12));
            CHECK(norm(heat_apply(s.f, t, true, 1.0), sp) <= n * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("Taylor-like expansion of the heat semigroup") {
    const auto S = Perturbation::shifted(1.0);
    const GridFunction f = gaussian_f(1.5);
    const TaylorExpansion t0 = taylor_expand_semigroup(f, 0.0, 0.5, 1, S, sp);
    CHECK(max_abs_diff(t0.partial_sum, f) == 0.0);
    CHECK(sup_norm(t0.remainder) == 0.0);

    // Scalar oracle: S_G(tau) c = e^{-tau/2} c.
    const double c = 1.3;
    const double tau = 0.5 * 0.8;
    const TaylorExpansion tc = taylor_expand_semigroup(GridFunction::constant(grid, c), 0.8, 0.5, 2, S, sp);
    CHECK(tc.partial_sum.limit() == doctest::Approx(c * (1.0 - tau / 2.0)));
    CHECK(tc.remainder.limit() == doctest::Approx(c * (std::exp(-tau / 2.0) - 1.0 + tau / 2.0)).epsilon(1e-8));

    for (int m = 1; m <= 4; ++m) {
        for (const auto& P : {S, Perturbation::plain(1.0)}) {
            const TaylorExpansion te = taylor_expand_semigroup(f, 1.0, 0.5, m, P, sp);
            const GridFunction direct = heat_apply(f, 0.5, P);
            const double gap = norm(te.partial_sum + te.remainder - direct, sp);
            CHECK(gap <= 10.0 * te.quadrature_tolerance + 1e-14);
            // For m >= 3 rounding in G^m f reaches stiff modes the 64-cell rule cannot resolve.
            if (m <= 2) CHECK(gap <= 1e-6);
        }
    }
}

TEST_CASE("resolvent of the shifted transport") {
    const auto S = Perturbation::shifted(1.0);
    const GridFunction c = GridFunction::constant(grid, 2.0);
    // Only the Laplace quadrature error at lambda dx = 1/8 remains.
    CHECK(max_abs_diff(resolvent_shift(4.0, c, 0.0, S), GridFunction::constant(grid, 0.5)) < 1e-5 * 0.5);
    CHECK_THROWS_AS((void)resolvent_shift(0.0, c, 0.0, S), DomainError);

    // lambda y - y' = f solved by y(x) = int_0^inf e^{-lambda t} f(x + t) dt.
    const double s = 1.5;
    const GridFunction f = gaussian_f(s);
    const GridFunction y = resolvent_shift(1.0, f, 0.0, S);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.n; i += 37) {
        const double x = grid.x(i);
        if (x > 15.0) break;
        const double ref = gauss_legendre([x, s](double t) { return std::exp(-t) * gauss_integral(x + t, s); }, 0.0,
                                          25.0, 50);
        worst = std::max(worst, std::abs(y[i] - ref));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("strong resolvent convergence is monotone along eps = 2^-j") {
    const auto P = Perturbation::plain(1.0);
    const GridFunction f = samples::broad_suite(grid).front().f;
    const GridFunction r0 = resolvent_shift(5.0, f, 0.0, P);
    double prev = INFINITY;
    for (int j = 1; j <= 6; ++j) {
        const double d = norm(resolvent_shift(5.0, f, std::ldexp(1.0, -j), P) - r0, sp);
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("resolvent of G by the conjugated solve") {
    const auto S = Perturbation::shifted(1.0);
    const double c = 3.0;
    const ResolventSolution rc = solve_resolvent_G(2.0, GridFunction::constant(grid, c), S);
    CHECK(max_abs_diff(rc.y, GridFunction::constant(grid, c / 2.5)) < 1e-12);
    const ResolventSolution r0 = solve_resolvent_G(2.0, GridFunction::zero(grid), S);
    CHECK(sup_norm(r0.y) == 0.0);
    CHECK_THROWS_AS((void)solve_resolvent_G(0.25, GridFunction::zero(grid), S), CoercivityError);

    for (const auto& s : samples::full_line_suite(grid)) {
        const double nf = norm(s.f, sp);
        const ResolventSolution r = solve_resolvent_G(1.0, s.f, S);
        CHECK(r.residual <= 1e-6 * nf);
        // The stencil residual sees the second-order conjugated discretization.
        CHECK(resolvent_stencil_residual(1.0, r.y, s.f, S, sp) <= 1e-3 * nf);
    }
}

TEST_CASE("dissipativity and integration by parts") {
    CHECK(std::abs(dissipativity_check(GeneratorTag::shift(), GridFunction::constant(grid, 1.0), sp)) < 1e-10);
    const GridFunction f = gaussian_f(1.0 / std::numbers::sqrt2);
    // <A f, f> = -(w/2) int |f'|^2 e^{wx} dx
    CHECK(dissipativity_check(GeneratorTag::shift(), f, sp) ==
          doctest::Approx(-0.5 * weighted_seminorm_sq(f, sp)).epsilon(1e-6));
    for (const auto& s : samples::full_line_suite(grid)) {
        const double n = norm(s.f, sp);
        CHECK(std::abs(integration_by_parts_residual(s.f, sp)) <= 1e-6 * n * n);
        CHECK(dissipativity_check(GeneratorTag::shift(), s.f, sp) <= 0.0);
        CHECK(dissipativity_check(GeneratorTag::second_derivative_shifted(1.0), s.f, sp) <= 0.0);
        CHECK(dissipativity_check(GeneratorTag::sum(0.3, Perturbation::shifted(1.0)), s.f, sp) <= 0.0);
    }
}

TEST_CASE("S_A and S_G commute") {
    const auto S = Perturbation::shifted(1.0);
    const GridFunction f = gaussian_f(1.5);
    CHECK(commutator_residual(f, 0.0, 0.5, S, sp) == 0.0);
    CHECK(commutator_residual(f, 1.0, 0.0, S, sp) == 0.0);
    CHECK(commutator_residual(f, 1.0, 0.5, S, sp) <= 1e-6);
}

TEST_CASE("propagator matches the product semigroup") {
    const auto S = Perturbation::shifted(1.0);
    const GridFunction f = gaussian_f(1.5);
    const Propagator prop(grid, 1.0 / 32.0, {0.2, S, false});
    CHECK(max_abs_diff(prop.apply_n(f, 8), product_apply(f, 0.25, 0.2, S)) < 1e-12);
    const Propagator id(grid, 1.0 / 32.0, {0.0, S, true});
    CHECK(max_abs_diff(id.apply(f), f) == 0.0);
}
