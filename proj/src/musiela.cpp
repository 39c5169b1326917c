#include "spde/musiela.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "spde/errors.hpp"
#include "spde/functionals.hpp"
#include "spde/parallel.hpp"

namespace spde {

namespace {

constexpr double cutoff_inner = 1.0;
constexpr double cutoff_outer = 6.0;
constexpr std::size_t interp_points = 8;

GridFunction pointwise_product(const GridFunction& a, const GridFunction& b) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    return {a.spec(), std::move(v), a.limit() * b.limit()};
}

std::vector<GridFunction> repeated(const GridFunction& f, std::size_t n) { return std::vector<GridFunction>(n, f); }

}  // namespace

void HJMModel::validate() const {
    if (!grid().is_half_line()) throw StructuralError("Musiela data must live on a half-line grid");
    if (m < 1) throw DomainError("regularity order m must be at least 1");
    if (!(w > 0.0)) throw DomainError("weight w must be positive");
    const WeightedSpace sp(w, grid());
    require_admissible(u0, sp, "initial curve");
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
        if (!(sigmas[k].spec() == grid())) throw StructuralError("volatility curve is not on the model grid");
        if (sigmas[k].limit() != 0.0) throw DomainError(fmt::format("sigma_{} has nonzero limit at infinity", k));
        require_admissible(sigmas[k], sp, "volatility curve");
    }
}

GridFunction hjm_drift(const std::vector<GridFunction>& sigmas) {
    if (sigmas.empty()) throw StructuralError("drift needs at least one volatility curve");
    GridFunction acc = GridFunction::zero(sigmas.front().spec());
    for (const auto& s : sigmas) acc += pointwise_product(s, integrate_from_zero(s));
    return acc;
}

GridFunction hjm_drift(const HJMModel& model) {
    if (model.sigmas.empty()) return GridFunction::zero(model.grid());
    return hjm_drift(model.sigmas);
}

double derivative_graph_norm(const GridFunction& f, int k, double w) {
    if (k < 0 || k > max_derivative_order) throw RegularityError(fmt::format("derivative order {} unsupported", k));
    const WeightedSpace sp(w, f.spec());
    double acc = 0.0;
    for (int j = 0; j <= k; ++j) {
        const double nj = j == 0 ? norm(f, sp) : norm(derivative(f, j), sp);
        acc += nj * nj;
    }
    if (!std::isfinite(acc)) throw RegularityError("derivative norms are not finite");
    return std::sqrt(acc);
}

double product_estimate_check(const GridFunction& f, int m, double w) {
    if (std::abs(f.limit()) > 1e-12) throw DomainError("product estimate needs f(+inf) = 0");
    const double den = derivative_graph_norm(f, m, w);
    if (den == 0.0) throw NumericError("product estimate undefined for f = 0");
    return derivative_graph_norm(pointwise_product(f, integrate_from_zero(f)), m, w) / (den * den);
}

double cutoff(double y, double inner, double outer) noexcept {
    auto psi = [](double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; };
    if (y <= inner) return 1.0;
    if (y >= outer) return 0.0;
    const double a = psi(outer - y);
    return a / (a + psi(y - inner));
}

std::vector<double> reflection_coefficients(int order) {
    if (order < 0) throw DomainError("reflection order must be nonnegative");
    const int K = order + 1;
    std::vector<double> c(static_cast<std::size_t>(K));
    for (int i = 1; i <= K; ++i) {
        const double mi = -1.0 / i;
        double num = 1.0;
        double den = 1.0;
        for (int l = 1; l <= K; ++l) {
            if (l == i) continue;
            const double ml = -1.0 / l;
            num *= 1.0 - ml;
            den *= mi - ml;
        }
        c[static_cast<std::size_t>(i - 1)] = num / den;
    }
    return c;
}

ExtensionOperator::ExtensionOperator(const GridSpec& half, const GridSpec& full, int order, double w)
    : half_(half), full_(full), order_(order), w_(w), c_(reflection_coefficients(order)) {
    if (!half.is_half_line()) throw StructuralError("extension source must be a half-line grid");
    if (!(half_line_of(full) == half)) throw StructuralError("full grid does not continue the half-line grid");
    if (order < 1 || order > max_derivative_order) throw RegularityError(fmt::format("extension order {} unsupported", order));
    if (full.x_min > -cutoff_outer) {
        throw StructuralError(fmt::format("full grid must reach x <= {} for the extension cutoff", -cutoff_outer));
    }
    offset_ = full.n - half.n;
    taps_.resize(offset_);
    const double dx = half.dx;
    for (std::size_t k = 0; k < offset_; ++k) {
        const double y = -full.x(k);
        const double chi = cutoff(y, cutoff_inner, cutoff_outer);
        if (chi == 0.0) continue;
        for (std::size_t i = 1; i <= c_.size(); ++i) {
            const double s = y / static_cast<double>(i);
            if (s > half.x_max) throw StructuralError("half-line grid too short for the reflection");
            const double scale = std::exp(0.5 * w * y) * chi * c_[i - 1] * std::exp(0.5 * w * s);
            const double u = s / dx;
            const auto raw = static_cast<std::ptrdiff_t>(std::floor(u)) - 3;
            const auto base = static_cast<std::size_t>(
                std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(half.n - interp_points)));
            const double uu = u - static_cast<double>(base);
            for (std::size_t a = 0; a < interp_points; ++a) {
                double lw = 1.0;
                for (std::size_t b = 0; b < interp_points; ++b) {
                    if (b == a) continue;
                    lw *= (uu - static_cast<double>(b)) / (static_cast<double>(a) - static_cast<double>(b));
                }
                if (lw != 0.0) taps_[k].emplace_back(base + a, scale * lw);
            }
        }
    }
}

GridFunction ExtensionOperator::apply(const GridFunction& f) const {
    if (!(f.spec() == half_)) throw StructuralError("curve is not on the extension's half-line grid");
    const GridFunction df = derivative(f, 1);
    std::vector<double> h(full_.n, 0.0);
    for (std::size_t i = 0; i < half_.n; ++i) h[offset_ + i] = df[i];
    for (std::size_t k = 0; k < offset_; ++k) {
        double s = 0.0;
        for (const auto& [idx, wt] : taps_[k]) s += wt * df[idx];
        h[k] = s;
    }
    const GridFunction hg(full_, h, 0.0);
    const GridFunction dh = derivative(hg, 1);
    std::vector<double> out(full_.n, 0.0);
    for (std::size_t i = 0; i < half_.n; ++i) out[offset_ + i] = f[i];
    const double dx = full_.dx;
    for (std::size_t k = offset_; k-- > 0;) {
        const double integral = 0.5 * dx * (h[k] + h[k + 1]) - dx * dx / 12.0 * (dh[k + 1] - dh[k]);
        out[k] = out[k + 1] - integral;
    }
    for (double v : out) {
        if (!std::isfinite(v)) throw RegularityError("extension produced non-finite values");
    }
    return {full_, std::move(out), f.limit()};
}

GridFunction extend(const GridFunction& f, int order, const GridSpec& full, double w) {
    return ExtensionOperator(f.spec(), full, order, w).apply(f);
}

ProblemSpec halfline_problem(const HJMModel& model, const TimeGrid& tg) {
    model.validate();
    const WeightedSpace sp(model.w, model.grid());
    NoiseModel noise = model.sigmas.empty() ? NoiseModel{} : NoiseModel::constant(model.sigmas, sp);
    ProblemSpec ps{model.u0, repeated(hjm_drift(model), tg.n_steps), std::move(noise), model.m, 2.0, tg, sp,
                   Perturbation::plain(model.w), std::nullopt};
    ps.validate();
    return ps;
}

ProblemSpec extended_problem(const HJMModel& model, const TimeGrid& tg, const GridSpec& full) {
    model.validate();
    const ExtensionOperator L(model.grid(), full, 2 * model.m, model.w);
    const WeightedSpace sp(model.w, full);
    std::vector<GridFunction> sig;
    for (const auto& s : model.sigmas) sig.push_back(L.apply(s));
    NoiseModel noise = sig.empty() ? NoiseModel{} : NoiseModel::constant(std::move(sig), sp);
    ProblemSpec ps{L.apply(model.u0), repeated(L.apply(hjm_drift(model)), tg.n_steps), std::move(noise), model.m, 2.0,
                   tg, sp, Perturbation::plain(model.w), std::nullopt};
    ps.validate();
    return ps;
}

namespace {

std::shared_ptr<const WienerIncrements> increments_for(const ProblemSpec& ps, std::size_t n_paths,
                                                       std::uint64_t seed) {
    const std::size_t factors = std::max<std::size_t>(ps.noise.factors(), 1);
    return std::make_shared<WienerIncrements>(sample_wiener_increments(factors, ps.tg, n_paths, seed));
}

}  // namespace

PathEnsemble simulate_forward_rates(const HJMModel& model, double eps, const TimeGrid& tg, const GridSpec& full,
                                    std::size_t n_paths, std::uint64_t seed) {
    const ProblemSpec ps = extended_problem(model, tg, full);
    if (ps.deterministic()) {
        PathEnsemble ens;
        const Trajectory path = solve_mild_path(ps, eps, nullptr, 0);
        ens.paths.assign(n_paths, path);
        ens.increments = increments_for(ps, n_paths, seed);
        return ens;
    }
    return solve_mild(ps, eps, increments_for(ps, n_paths, seed));
}

BondPrice bond_price(const Trajectory& v, const TimeGrid& tg, std::size_t j, double x) {
    const double total = F_tx(v, tg, j, x);
    const double time = F_tx(v, tg, j, 0.0);
    return {std::exp(-total), std::exp(-(total - time)), std::exp(time)};
}

double taylor_J(double d, int m) {
    if (m < 1) throw DomainError("Taylor order m must be at least 1");
    double acc = 0.0;
    double term = 1.0;
    for (int j = 1; j <= m - 1; ++j) {
        term *= -d / j;
        acc += term;
    }
    return acc;
}

double taylor_r(double d, int m) {
    if (m < 1) throw DomainError("Taylor order m must be at least 1");
    if (std::abs(d) >= 0.5) return std::expm1(-d) - taylor_J(d, m);
    // sum_{j>=m} (-d)^j / j!
    double term = 1.0;
    for (int j = 1; j <= m; ++j) term *= -d / j;
    double acc = 0.0;
    for (int j = m; j < m + 60; ++j) {
        acc += term;
        term *= -d / (j + 1);
    }
    return acc;
}

double PricingErrorExpansion::residual_slope() const { return loglog_slope(eps_list, residual_l1); }

PricingErrorExpansion pricing_error_expansion(const HJMModel& model, const std::vector<double>& eps_list,
                                              const TimeGrid& tg, const GridSpec& full, std::size_t j, double x,
                                              std::size_t n_paths, std::uint64_t seed) {
    const ProblemSpec ps = extended_problem(model, tg, full);
    const int m = model.m;
    const auto incr = ps.deterministic() ? nullptr : increments_for(ps, n_paths, seed);
    if (ps.deterministic()) n_paths = 1;
    const CoefficientEngine engine(ps, m - 1);
    const FunctionalSpec<double> phi = compose_with_linear<double>(
        [](const double& d) { return d; },
        [](int k, double d) { return k == 0 ? std::expm1(-d) : ((k % 2 == 0) ? 1.0 : -1.0) * std::exp(-d); },
        std::max(m - 1, 1));
    const std::size_t ne = eps_list.size();
    const auto nterms = static_cast<std::size_t>(m - 1);

    struct PathOut {
        std::vector<double> terms;
        std::vector<double> rel;
        std::vector<double> res;
        std::vector<double> expm;
        double identity = 0.0;
    };
    std::vector<PathOut> out(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        PathOut& po = out[p];
        const Trajectory u = solve_mild_path(ps, 0.0, incr.get(), p);
        const double Fu = F_tx(u, tg, j, x);
        std::vector<double> a;
        for (int k = 1; k < m; ++k) a.push_back(F_tx(engine.vk_path(k, incr.get(), p), tg, j, x));
        double fact = 1.0;
        for (std::size_t n = 1; n <= nterms; ++n) {
            fact *= static_cast<double>(n);
            po.terms.push_back(faa_di_bruno_wn<double>(static_cast<int>(n), phi, 0.0, a) / fact);
        }
        for (double e : eps_list) {
            const double d = F_tx(solve_mild_path(ps, e, incr.get(), p), tg, j, x) - Fu;
            const double rel = std::expm1(-d);
            double series = 0.0;
            for (std::size_t n = 1; n <= nterms; ++n) series += std::pow(e, static_cast<double>(n)) * po.terms[n - 1];
            po.rel.push_back(rel);
            po.res.push_back(rel - series);
            po.expm.push_back(std::exp(-2.0 * d));
            po.identity = std::max(po.identity, std::abs(rel - taylor_J(d, m) - taylor_r(d, m)));
        }
    });

    PricingErrorExpansion r;
    r.eps_list = eps_list;
    r.m = m;
    r.t = tg.t(j);
    r.x = x;
    const auto np = static_cast<double>(n_paths);
    r.mean_terms.assign(nterms, 0.0);
    r.relative_error_l1.assign(ne, 0.0);
    r.residual_l1.assign(ne, 0.0);
    r.exponential_moment.assign(ne, 0.0);
    for (const auto& po : out) {
        for (std::size_t n = 0; n < nterms; ++n) r.mean_terms[n] += po.terms[n] / np;
        for (std::size_t e = 0; e < ne; ++e) {
            r.relative_error_l1[e] += std::abs(po.rel[e]) / np;
            r.residual_l1[e] += std::abs(po.res[e]) / np;
            r.exponential_moment[e] += po.expm[e] / np;
        }
        r.identity_error = std::max(r.identity_error, po.identity);
    }
    return r;
}

std::vector<MartingaleResult> martingale_diagnostic(const HJMModel& model, const std::vector<double>& eps_list,
                                                    const TimeGrid& tg, const GridSpec& full, std::size_t n_paths,
                                                    std::uint64_t seed, double x0) {
    if (n_paths < 2) throw DomainError("martingale diagnostic needs at least two paths");
    const ProblemSpec ps = extended_problem(model, tg, full);
    const auto incr = ps.deterministic() ? nullptr : increments_for(ps, n_paths, seed);
    const std::size_t nt = tg.n_steps + 1;
    const std::size_t ne = eps_list.size();

    Trajectory transported;
    for (std::size_t j = 0; j < nt; ++j) transported.push_back(shift_apply(ps.u0, tg.t(j)));
    std::vector<double> reference(nt);
    for (std::size_t j = 0; j < nt; ++j) reference[j] = std::exp(-F_tx(transported, tg, j, x0));

    // prices[p][e * nt + j]
    std::vector<std::vector<double>> prices(n_paths, std::vector<double>(ne * nt, 0.0));
    parallel_for(n_paths, [&](std::size_t p) {
        for (std::size_t e = 0; e < ne; ++e) {
            const Trajectory v = solve_mild_path(ps, eps_list[e], incr.get(), p);
            for (std::size_t j = 0; j < nt; ++j) prices[p][e * nt + j] = std::exp(-F_tx(v, tg, j, x0));
        }
    });

    std::vector<MartingaleResult> res;
    const auto np = static_cast<double>(n_paths);
    for (std::size_t e = 0; e < ne; ++e) {
        MartingaleResult mr;
        mr.eps = eps_list[e];
        mr.reference = reference;
        for (std::size_t j = 0; j < nt; ++j) {
            double s1 = 0.0;
            for (std::size_t p = 0; p < n_paths; ++p) s1 += prices[p][e * nt + j];
            const double mean = s1 / np;
            double s2 = 0.0;
            for (std::size_t p = 0; p < n_paths; ++p) {
                const double d = prices[p][e * nt + j] - mean;
                s2 += d * d;
            }
            const double sd = std::sqrt(s2 / (np - 1.0));
            mr.mean.push_back(mean);
            mr.sd.push_back(sd);
            mr.drift_estimate = std::max(mr.drift_estimate, std::abs(mean - reference[j]));
            mr.ci = std::max(mr.ci, 3.0 * sd / std::sqrt(np));
        }
        res.push_back(std::move(mr));
    }
    return res;
}

double positivity_fraction(const PathEnsemble& ens, bool half_line_only) {
    std::size_t total = 0;
    std::size_t good = 0;
    for (const auto& traj : ens.paths) {
        for (const auto& f : traj) {
            std::size_t start = 0;
            if (half_line_only) {
                const auto i0 = f.spec().node_index(0.0);
                if (!i0) throw StructuralError("grid has no node at x = 0");
                start = *i0;
            }
            for (std::size_t i = start; i < f.size(); ++i) {
                ++total;
                if (f[i] >= -1e-10) ++good;
            }
        }
    }
    return total == 0 ? 1.0 : static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace spde
