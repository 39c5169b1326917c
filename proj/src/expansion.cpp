#include "spde/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "spde/errors.hpp"
#include "spde/parallel.hpp"

namespace spde {

namespace {

double factorial(int n) {
    double r = 1.0;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

void require_eps(double eps) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw DomainError(fmt::format("eps = {} outside [0, 1]", eps));
}

void require_finite(const GridFunction& f, const char* what) {
    if (!std::isfinite(f.limit())) throw NumericError(fmt::format("{} blew up", what));
    for (double v : f.values()) {
        if (!std::isfinite(v)) throw NumericError(fmt::format("{} blew up", what));
    }
}

const WienerIncrements* checked_increments(const ProblemSpec& ps, const WienerIncrements* incr) {
    if (ps.deterministic()) return nullptr;
    if (incr == nullptr) throw StructuralError("stochastic problem needs noise increments");
    if (incr->factors() != ps.noise.factors() || incr->n_steps() != ps.tg.n_steps) {
        throw StructuralError("increments do not match the noise model and time grid");
    }
    return incr;
}

std::size_t ensemble_paths(const ProblemSpec& ps, const std::shared_ptr<const WienerIncrements>& incr) {
    if (ps.deterministic()) return incr ? std::max<std::size_t>(incr->n_paths(), 1) : 1;
    if (!incr) throw StructuralError("stochastic problem needs noise increments");
    return incr->n_paths();
}

}  // namespace

void ProblemSpec::validate() const {
    const GridSpec& g = grid();
    if (!(u0.spec() == g)) throw StructuralError("u0 is not on the space grid");
    if (m < 1) throw DomainError("expansion order m must be at least 1");
    if (!(p >= 1.0)) throw DomainError("moment exponent p must be at least 1");
    tg.require_aligned(g);
    if (!alpha.empty() && alpha.size() < tg.n_steps) throw StructuralError("alpha shorter than the time grid");
    require_admissible(u0, sp, "u0");
    (void)graph_norm(u0, m, perturbation, sp);
    for (const auto& a : alpha) {
        if (!(a.spec() == g)) throw StructuralError("alpha is not on the space grid");
        (void)graph_norm(a, m, perturbation, sp);
    }
    for (std::size_t f = 0; f < noise.factors(); ++f) {
        const std::size_t steps = noise.is_time_dependent() ? tg.n_steps : 1;
        for (std::size_t j = 0; j < steps; ++j) {
            const auto& s = noise.sigma(f, j);
            if (!(s.spec() == g)) throw StructuralError("volatility curve is not on the space grid");
            (void)graph_norm(s, m, perturbation, sp);
        }
    }
}

GridFunction ProblemSpec::u0_power(int k) const {
    if (u0_generator_powers && static_cast<std::size_t>(k) < u0_generator_powers->size()) {
        return (*u0_generator_powers)[static_cast<std::size_t>(k)];
    }
    return generator_power(u0, k, perturbation);
}

ProblemSpec ProblemSpec::without_noise() const {
    ProblemSpec d = *this;
    d.noise = NoiseModel{};
    return d;
}

Trajectory solve_mild_path(const ProblemSpec& ps, double eps, const WienerIncrements* incr, std::size_t path) {
    require_eps(eps);
    incr = checked_increments(ps, incr);
    const GridSpec& g = ps.grid();
    const Propagator prop(g, ps.tg.dt, {eps, ps.perturbation, false});
    Trajectory out;
    out.reserve(ps.tg.n_steps + 1);
    out.push_back(ps.u0);
    for (std::size_t j = 0; j < ps.tg.n_steps; ++j) {
        GridFunction s = out.back();
        if (!ps.alpha.empty()) s.axpy(ps.tg.dt, ps.alpha[j]);
        if (incr) s += ps.noise.source(*incr, path, j, g);
        out.push_back(prop.apply(s));
        require_finite(out.back(), "mild solution");
    }
    return out;
}

PathEnsemble solve_mild(const ProblemSpec& ps, double eps, std::shared_ptr<const WienerIncrements> incr) {
    PathEnsemble ens;
    ens.paths.resize(ensemble_paths(ps, incr));
    parallel_for(ens.paths.size(), [&](std::size_t p) { ens.paths[p] = solve_mild_path(ps, eps, incr.get(), p); });
    ens.increments = std::move(incr);
    return ens;
}

CoefficientEngine::CoefficientEngine(const ProblemSpec& ps, int k_max) : ps_(&ps), k_max_(k_max) {
    if (k_max < 0) throw DomainError("coefficient order must be nonnegative");
    for (int k = 0; k <= k_max; ++k) {
        gk_u0_.push_back(ps.u0_power(k));
        std::vector<GridFunction> ga;
        for (const auto& a : ps.alpha) ga.push_back(generator_power(a, k, ps.perturbation));
        gk_alpha_.push_back(std::move(ga));
        const Perturbation pert = ps.perturbation;
        gk_noise_.push_back(ps.noise.mapped([k, pert](const GridFunction& s) { return generator_power(s, k, pert); }));
    }
}

Trajectory CoefficientEngine::vk_path(int k, const WienerIncrements* incr, std::size_t path) const {
    if (k < 0 || k > k_max_) throw DomainError(fmt::format("coefficient order {} outside [0, {}]", k, k_max_));
    const ProblemSpec& ps = *ps_;
    incr = checked_increments(ps, incr);
    const GridSpec& g = ps.grid();
    const auto ku = static_cast<std::size_t>(k);
    const Propagator shift(g, ps.tg.dt, {0.0, ps.perturbation, false});
    const bool has_alpha = !ps.alpha.empty();
    Trajectory out;
    if (has_alpha || incr) {
        out = weighted_convolution(shift, ps.tg.n_steps, k, [&](std::size_t i) {
            GridFunction s = has_alpha ? ps.tg.dt * gk_alpha_[ku][i] : GridFunction::zero(g);
            if (incr) s += gk_noise_[ku].source(*incr, path, i, g);
            return s;
        });
    } else {
        out.assign(ps.tg.n_steps + 1, GridFunction::zero(g));
    }
    for (std::size_t j = 0; j <= ps.tg.n_steps; ++j) {
        const double t = ps.tg.t(j);
        out[j].axpy(std::pow(t, k), shift_apply(gk_u0_[ku], t));
        require_finite(out[j], "expansion coefficient");
    }
    return out;
}

PathEnsemble compute_vk(const ProblemSpec& ps, int k, std::shared_ptr<const WienerIncrements> incr) {
    if (k < 1 || k > ps.m - 1) throw DomainError(fmt::format("coefficient order {} outside [1, {}]", k, ps.m - 1));
    const CoefficientEngine engine(ps, k);
    PathEnsemble ens;
    ens.paths.resize(ensemble_paths(ps, incr));
    parallel_for(ens.paths.size(), [&](std::size_t p) { ens.paths[p] = engine.vk_path(k, incr.get(), p); });
    ens.increments = std::move(incr);
    return ens;
}

Trajectory remainder_empirical(const Trajectory& u, const Trajectory& u_eps, const std::vector<Trajectory>& v,
                               double eps, int m) {
    if (u.size() != u_eps.size()) throw StructuralError("trajectories differ in length");
    if (static_cast<int>(v.size()) < m - 1) throw StructuralError("not enough expansion coefficients");
    Trajectory r;
    r.reserve(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
        GridFunction d = u_eps[j];
        d -= u[j];
        for (int k = 1; k < m; ++k) d.axpy(-std::pow(eps, k) / factorial(k), v[static_cast<std::size_t>(k - 1)][j]);
        r.push_back(std::move(d));
    }
    return r;
}

std::vector<double> product_weights(std::size_t N, int m) {
    if (m < 1) throw DomainError("product weights need m >= 1");
    // On [q, q+1] with d = N - q: phi_q gets int_{d-1}^{d} u^{m-1} (u-d+1) du,
    // phi_{q+1} gets int_{d-1}^{d} u^{m-1} (d-u) du.
    auto mom = [](double lo, double hi, int k) { return (std::pow(hi, k + 1) - std::pow(lo, k + 1)) / (k + 1); };
    auto a = [&](double d) { return mom(d - 1, d, m) - (d - 1) * mom(d - 1, d, m - 1); };
    auto b = [&](double d) { return d * mom(d - 1, d, m - 1) - mom(d - 1, d, m); };
    std::vector<double> w(N + 1, 0.0);
    for (std::size_t q = 0; q < N; ++q) {
        const auto d = static_cast<double>(N - q);
        w[q] += a(d);
        w[q + 1] += b(d);
    }
    return w;
}

ThreeTermRemainder::ThreeTermRemainder(const ProblemSpec& ps, double eps, int m)
    : ps_(&ps), eps_(eps), m_(m), prefactor_(std::pow(eps, m) / factorial(m - 1)) {
    require_eps(eps);
    if (m < 1) throw DomainError("expansion order m must be at least 1");
    const GridSpec& g = ps.grid();
    const std::size_t n = ps.tg.n_steps;
    const double dt = ps.tg.dt;
    const double dtm = std::pow(dt, m);
    std::vector<std::vector<double>> weights(n + 1);
    for (std::size_t N = 0; N <= n; ++N) weights[N] = product_weights(N, m);

    // Y_M[h] = dt^m sum_q W_q^(M) S_{eps G}(q dt) h for M = 0..len.
    auto y_table = [&](const GridFunction& h, std::size_t len) {
        std::vector<GridFunction> z;
        z.reserve(len + 1);
        z.push_back(h);
        for (std::size_t q = 1; q <= len; ++q) z.push_back(heat_apply(z.back(), eps * dt, ps.perturbation));
        std::vector<GridFunction> y;
        y.reserve(len + 1);
        for (std::size_t M = 0; M <= len; ++M) {
            GridFunction acc = GridFunction::zero(g);
            for (std::size_t q = 0; q <= M; ++q) acc.axpy(dtm * weights[M][q], z[q]);
            y.push_back(std::move(acc));
        }
        return y;
    };

    det_.assign(n + 1, GridFunction::zero(g));
    const auto y_u0 = y_table(ps.u0_power(m), n);
    for (std::size_t N = 0; N <= n; ++N) det_[N].axpy(prefactor_, shift_apply(y_u0[N], ps.tg.t(N)));
    for (std::size_t i = 0; i < ps.alpha.size() && i < n; ++i) {
        const auto y_a = y_table(generator_power(ps.alpha[i], m, ps.perturbation), n - i);
        for (std::size_t N = i + 1; N <= n; ++N) {
            det_[N].axpy(prefactor_ * dt, shift_apply(y_a[N - i], ps.tg.t(N - i)));
        }
    }

    y_.resize(ps.noise.factors());
    const std::size_t stored = ps.noise.is_time_dependent() ? n : 1;
    for (std::size_t f = 0; f < ps.noise.factors(); ++f) {
        for (std::size_t i = 0; i < stored; ++i) {
            y_[f].push_back(y_table(generator_power(ps.noise.sigma(f, i), m, ps.perturbation), n - i));
        }
    }
}

Trajectory ThreeTermRemainder::stochastic_part(const WienerIncrements& incr, std::size_t path) const {
    const ProblemSpec& ps = *ps_;
    (void)checked_increments(ps, &incr);
    const GridSpec& g = ps.grid();
    const std::size_t n = ps.tg.n_steps;
    const bool td = ps.noise.is_time_dependent();
    Trajectory out(n + 1, GridFunction::zero(g));
    for (std::size_t N = 1; N <= n; ++N) {
        GridFunction acc = GridFunction::zero(g);
        for (std::size_t i = 0; i < N; ++i) {
            GridFunction term = GridFunction::zero(g);
            for (std::size_t f = 0; f < y_.size(); ++f) {
                const auto& tab = y_[f][td ? i : 0];
                term.axpy(incr(path, i, f), tab[N - i]);
            }
            acc += shift_apply(term, ps.tg.t(N - i));
        }
        out[N].axpy(prefactor_, acc);
    }
    return out;
}

Trajectory ThreeTermRemainder::stochastic_part_fubini(const WienerIncrements& incr, std::size_t path) const {
    const ProblemSpec& ps = *ps_;
    (void)checked_increments(ps, &incr);
    const GridSpec& g = ps.grid();
    const Perturbation pert = ps.perturbation;
    const int m = m_;
    const NoiseModel gm = ps.noise.mapped([m, pert](const GridFunction& s) { return generator_power(s, m, pert); });
    const Propagator shift(g, ps.tg.dt, {0.0, pert, false});
    const Trajectory phi =
        weighted_convolution(shift, ps.tg.n_steps, m - 1, [&](std::size_t i) { return gm.source(incr, path, i, g); });
    Trajectory r3 = det_convolution({eps_, pert, false}, phi, ps.tg);
    for (auto& f : r3) f *= prefactor_;
    return r3;
}

Trajectory ThreeTermRemainder::path(const WienerIncrements* incr, std::size_t p) const {
    Trajectory out = det_;
    if (!ps_->deterministic()) {
        if (incr == nullptr) throw StructuralError("stochastic problem needs noise increments");
        const Trajectory r3 = stochastic_part(*incr, p);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += r3[j];
    }
    return out;
}

PathEnsemble compute_remainder(const ProblemSpec& ps, double eps, RemainderMode mode,
                               std::shared_ptr<const WienerIncrements> incr) {
    PathEnsemble ens;
    ens.paths.resize(ensemble_paths(ps, incr));
    if (mode == RemainderMode::ThreeTerm) {
        const ThreeTermRemainder ttr(ps, eps, ps.m);
        parallel_for(ens.paths.size(), [&](std::size_t p) { ens.paths[p] = ttr.path(incr.get(), p); });
    } else {
        const CoefficientEngine engine(ps, ps.m - 1);
        parallel_for(ens.paths.size(), [&](std::size_t p) {
            const Trajectory u = solve_mild_path(ps, 0.0, incr.get(), p);
            const Trajectory ue = solve_mild_path(ps, eps, incr.get(), p);
            std::vector<Trajectory> v;
            for (int k = 1; k < ps.m; ++k) v.push_back(engine.vk_path(k, incr.get(), p));
            ens.paths[p] = remainder_empirical(u, ue, v, eps, ps.m);
        });
    }
    ens.increments = std::move(incr);
    return ens;
}

ExpansionResult compute_expansion(const ProblemSpec& ps, const std::vector<double>& eps_list,
                                  std::shared_ptr<const WienerIncrements> incr, bool threeterm) {
    for (double e : eps_list) require_eps(e);
    const std::size_t n_paths = ensemble_paths(ps, incr);
    const CoefficientEngine engine(ps, ps.m - 1);
    ExpansionResult res;
    auto blank = [&] {
        PathEnsemble e;
        e.paths.resize(n_paths);
        e.increments = incr;
        return e;
    };
    res.u = blank();
    for (int k = 1; k < ps.m; ++k) res.v.push_back(blank());
    for (double e : eps_list) {
        res.u_eps[e] = blank();
        res.R_empirical[e] = blank();
        if (threeterm) res.R_threeterm[e] = blank();
    }
    std::vector<std::unique_ptr<ThreeTermRemainder>> ttr;
    if (threeterm) {
        for (double e : eps_list) ttr.push_back(std::make_unique<ThreeTermRemainder>(ps, e, ps.m));
    }
    parallel_for(n_paths, [&](std::size_t p) {
        res.u.paths[p] = solve_mild_path(ps, 0.0, incr.get(), p);
        std::vector<Trajectory> v;
        for (int k = 1; k < ps.m; ++k) {
            v.push_back(engine.vk_path(k, incr.get(), p));
            res.v[static_cast<std::size_t>(k - 1)].paths[p] = v.back();
        }
        for (std::size_t ei = 0; ei < eps_list.size(); ++ei) {
            const double e = eps_list[ei];
            Trajectory ue = solve_mild_path(ps, e, incr.get(), p);
            res.R_empirical.at(e).paths[p] = remainder_empirical(res.u.paths[p], ue, v, e, ps.m);
            res.u_eps.at(e).paths[p] = std::move(ue);
            if (threeterm) res.R_threeterm.at(e).paths[p] = ttr[ei]->path(incr.get(), p);
        }
    });
    return res;
}

double f_epsilon(double t, int m, double w_A, double w_G, double eps) {
    if (!(t >= 0.0)) throw DomainError("f_epsilon needs t >= 0");
    if (m < 1) throw DomainError("f_epsilon needs m >= 1");
    const double a = eps * w_G;
    const double at = a * t;
    // int_0^t (t-r)^{m-1} e^{a r} dr = (m-1)! sum_n a^n t^{m+n} / (m+n)!
    double integral = 0.0;
    if (std::abs(at) <= 4.0) {
        double term = std::pow(t, m) / factorial(m);
        for (int n = 0; n < 80; ++n) {
            integral += term;
            term *= at / (m + n + 1);
        }
        integral *= factorial(m - 1);
    } else {
        double partial = 0.0;
        double term = 1.0;
        for (int n = 0; n < m; ++n) {
            partial += term;
            term *= at / (n + 1);
        }
        integral = factorial(m - 1) / std::pow(a, m) * (std::exp(at) - partial);
    }
    return std::exp(w_A * t) * integral;
}

std::vector<double> f_star(const std::vector<double>& times, int m, double w_A, double w_G, double eps) {
    std::vector<double> out;
    out.reserve(times.size());
    double run = 0.0;
    for (double t : times) {
        run = std::max(run, f_epsilon(t, m, w_A, w_G, eps));
        out.push_back(run);
    }
    return out;
}

RemainderBound theoretical_bound(const ProblemSpec& ps, double eps) {
    require_eps(eps);
    RemainderBound b;
    b.w_G = ps.perturbation.growth();
    if (ps.p != 2.0) {
        b.N_p = 1.0;
        b.rigorous = false;
        b.warning = fmt::format("no certified moment constant for p = {}; N_p set to 1", ps.p);
    }
    const int m = ps.m;
    const std::size_t n = ps.tg.n_steps;
    const double dt = ps.tg.dt;
    for (std::size_t j = 0; j <= n; ++j) b.times.push_back(ps.tg.t(j));
    for (double t : b.times) b.f_eps_values.push_back(f_epsilon(t, m, b.w_A, b.w_G, eps));
    b.f_star_values = f_star(b.times, m, b.w_A, b.w_G, eps);

    b.u0_norm = graph_norm(ps.u0, m, ps.perturbation, ps.sp);
    auto gsq = [&](const GridFunction& f) {
        const double g = graph_norm(f, m, ps.perturbation, ps.sp);
        return g * g;
    };
    b.alpha_norms.assign(n + 1, 0.0);
    b.noise_norms.assign(n + 1, 0.0);
    double a_acc = 0.0;
    double n_acc = 0.0;
    const std::size_t const_steps = ps.noise.is_time_dependent() ? n : std::min<std::size_t>(n, 1);
    std::vector<double> hs(const_steps, 0.0);
    for (std::size_t i = 0; i < const_steps; ++i) hs[i] = ps.noise.hilbert_schmidt_sq(i, gsq);
    for (std::size_t i = 0; i < n; ++i) {
        if (!ps.alpha.empty()) a_acc += dt * graph_norm(ps.alpha[i], m, ps.perturbation, ps.sp);
        if (!ps.noise.empty()) n_acc += dt * hs[ps.noise.is_time_dependent() ? i : 0];
        b.alpha_norms[i + 1] = a_acc;
        b.noise_norms[i + 1] = std::sqrt(n_acc);
    }
    const double pref = std::pow(eps, m) / factorial(m - 1) * b.M_A * b.M_G;
    for (std::size_t j = 0; j <= n; ++j) {
        b.bound_pointwise.push_back(pref * (b.f_eps_values[j] * b.u0_norm + b.f_star_values[j] * b.alpha_norms[j] +
                                            b.N_p * b.f_star_values[j] * b.noise_norms[j]));
    }
    const double T = ps.tg.T;
    const double fT = b.f_star_values.back();
    b.bound_uniform =
        pref * (fT * b.u0_norm + fT * b.alpha_norms.back() +
                b.N_p * std::pow(T, m) / m * b.M_A * std::max(std::exp(b.w_A * T), 1.0) *
                    std::max(std::exp((b.w_A + eps * b.w_G) * T), 1.0) * b.noise_norms.back());
    return b;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("slope needs at least two matching points");
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(y[i])) {
            throw NumericError("slope undefined: nonpositive or non-finite norm");
        }
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    const double n = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx == 0.0) throw NumericError("slope undefined: all abscissae equal");
    return sxy / sxx;
}

double RemainderStudy::l2_norm(std::size_t mi, std::size_t ei, std::size_t j) const {
    return std::sqrt(mean_sq.at(mi).at(ei).at(j));
}

double RemainderStudy::l2_norm_se(std::size_t mi, std::size_t ei, std::size_t j) const {
    const double l = l2_norm(mi, ei, j);
    return l > 0.0 ? se_mean_sq[mi][ei][j] / (2.0 * l) : 0.0;
}

double RemainderStudy::slope(std::size_t mi) const { return loglog_slope(eps_list, cp_norm.at(mi)); }

double RemainderStudy::difference_slope() const { return loglog_slope(eps_list, difference_norm); }

RemainderStudy run_remainder_study(const ProblemSpec& ps, const StudyOptions& opt) {
    if (opt.eps_list.empty() || opt.m_list.empty()) throw DomainError("study needs eps and m values");
    for (double e : opt.eps_list) require_eps(e);
    const int m_max = *std::max_element(opt.m_list.begin(), opt.m_list.end());
    if (*std::min_element(opt.m_list.begin(), opt.m_list.end()) < 1) throw DomainError("m must be at least 1");

    const std::size_t n_paths = ps.deterministic() ? 1 : opt.n_paths;
    std::shared_ptr<const WienerIncrements> incr;
    if (!ps.deterministic()) {
        incr = std::make_shared<WienerIncrements>(
            sample_wiener_increments(ps.noise.factors(), ps.tg, n_paths, opt.seed));
    }
    const CoefficientEngine engine(ps, std::max(m_max - 1, 0));
    const std::size_t nm = opt.m_list.size();
    const std::size_t ne = opt.eps_list.size();
    const std::size_t nt = ps.tg.n_steps + 1;
    const std::size_t tt_paths = std::min(opt.threeterm_paths, n_paths);

    std::vector<std::vector<std::unique_ptr<ThreeTermRemainder>>> ttr(nm);
    if (tt_paths > 0) {
        for (std::size_t mi = 0; mi < nm; ++mi) {
            for (double e : opt.eps_list) ttr[mi].push_back(std::make_unique<ThreeTermRemainder>(ps, e, opt.m_list[mi]));
        }
    }

    struct PathStats {
        std::vector<double> norms;     // [m][eps][t]
        std::vector<double> sups;      // [m][eps]
        std::vector<double> diff_sup;  // [eps]
        std::vector<double> mis_num;   // [m][eps][t]
        std::vector<double> tt_sq;     // [m][eps][t]
    };
    std::vector<PathStats> stats(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        PathStats& st = stats[p];
        st.norms.assign(nm * ne * nt, 0.0);
        st.sups.assign(nm * ne, 0.0);
        st.diff_sup.assign(ne, 0.0);
        if (p < tt_paths) {
            st.mis_num.assign(nm * ne * nt, 0.0);
            st.tt_sq.assign(nm * ne * nt, 0.0);
        }
        const Trajectory u = solve_mild_path(ps, 0.0, incr.get(), p);
        std::vector<Trajectory> v;
        for (int k = 1; k < m_max; ++k) v.push_back(engine.vk_path(k, incr.get(), p));
        for (std::size_t ei = 0; ei < ne; ++ei) {
            const double e = opt.eps_list[ei];
            const Trajectory ue = solve_mild_path(ps, e, incr.get(), p);
            for (std::size_t j = 0; j < nt; ++j) st.diff_sup[ei] = std::max(st.diff_sup[ei], norm(ue[j] - u[j], ps.sp));
            for (std::size_t mi = 0; mi < nm; ++mi) {
                const Trajectory r = remainder_empirical(u, ue, v, e, opt.m_list[mi]);
                Trajectory r3;
                if (p < tt_paths) r3 = ttr[mi][ei]->path(incr.get(), p);
                for (std::size_t j = 0; j < nt; ++j) {
                    const double nr = norm(r[j], ps.sp);
                    st.norms[(mi * ne + ei) * nt + j] = nr;
                    st.sups[mi * ne + ei] = std::max(st.sups[mi * ne + ei], nr);
                    if (p < tt_paths) {
                        const double d = norm(r3[j] - r[j], ps.sp);
                        st.mis_num[(mi * ne + ei) * nt + j] = d * d;
                        const double n3 = norm(r3[j], ps.sp);
                        st.tt_sq[(mi * ne + ei) * nt + j] = n3 * n3;
                    }
                }
            }
        }
    });

    RemainderStudy out;
    out.eps_list = opt.eps_list;
    out.m_list = opt.m_list;
    for (std::size_t j = 0; j < nt; ++j) out.times.push_back(ps.tg.t(j));
    out.n_paths = n_paths;
    out.mean_sq.assign(nm, std::vector<std::vector<double>>(ne, std::vector<double>(nt, 0.0)));
    out.se_mean_sq = out.mean_sq;
    out.cp_norm.assign(nm, std::vector<double>(ne, 0.0));
    out.mode_mismatch.assign(nm, std::vector<double>(ne, 0.0));
    if (tt_paths > 0) out.threeterm_mean_sq = out.mean_sq;
    const auto np = static_cast<double>(n_paths);
    for (std::size_t mi = 0; mi < nm; ++mi) {
        for (std::size_t ei = 0; ei < ne; ++ei) {
            std::vector<double> sups(n_paths);
            for (std::size_t p = 0; p < n_paths; ++p) sups[p] = stats[p].sups[mi * ne + ei];
            out.cp_norm[mi][ei] = lp_norm_from_sups(sups, ps.p);
            double worst = 0.0;
            for (std::size_t j = 0; j < nt; ++j) {
                double s1 = 0.0;
                double s2 = 0.0;
                for (std::size_t p = 0; p < n_paths; ++p) {
                    const double x = stats[p].norms[(mi * ne + ei) * nt + j];
                    s1 += x * x;
                    s2 += x * x * x * x;
                }
                const double mean = s1 / np;
                out.mean_sq[mi][ei][j] = mean;
                const double var = n_paths > 1 ? std::max(s2 / np - mean * mean, 0.0) * np / (np - 1.0) : 0.0;
                out.se_mean_sq[mi][ei][j] = std::sqrt(var / np);
                if (tt_paths > 0) {
                    double num = 0.0;
                    double den = 0.0;
                    double tt = 0.0;
                    for (std::size_t p = 0; p < tt_paths; ++p) {
                        num += stats[p].mis_num[(mi * ne + ei) * nt + j];
                        tt += stats[p].tt_sq[(mi * ne + ei) * nt + j];
                        const double x = stats[p].norms[(mi * ne + ei) * nt + j];
                        den += x * x;
                    }
                    if (den > 0.0) worst = std::max(worst, std::sqrt(num / den));
                    out.threeterm_mean_sq[mi][ei][j] = tt / static_cast<double>(tt_paths);
                }
            }
            out.mode_mismatch[mi][ei] = worst;
        }
    }
    for (std::size_t ei = 0; ei < ne; ++ei) {
        std::vector<double> sups(n_paths);
        for (std::size_t p = 0; p < n_paths; ++p) sups[p] = stats[p].diff_sup[ei];
        out.difference_norm.push_back(lp_norm_from_sups(sups, ps.p));
    }
    return out;
}

double convergence_slope(const ProblemSpec& ps, const std::vector<double>& eps_list, SlopeQuantity quantity,
                         std::size_t n_paths, std::uint64_t seed) {
    if (eps_list.size() < 4) throw DomainError("slope fit needs at least four eps values");
    StudyOptions opt;
    opt.eps_list = eps_list;
    opt.m_list = {ps.m};
    opt.n_paths = n_paths;
    opt.seed = seed;
    const RemainderStudy st = run_remainder_study(ps, opt);
    return quantity == SlopeQuantity::Remainder ? st.slope(0) : st.difference_slope();
}

DerivativeCheck eps_derivative_check(const ProblemSpec& ps, double eps0, const std::vector<double>& h_list, int k,
                                     std::shared_ptr<const WienerIncrements> incr) {
    if (k < 1 || k > std::max(ps.m - 1, 1)) throw DomainError(fmt::format("derivative order {} out of range", k));
    if (h_list.empty()) throw DomainError("need at least one step h");
    for (std::size_t i = 1; i < h_list.size(); ++i) {
        if (std::abs(h_list[i] / h_list[i - 1] - 0.5) > 1e-12) throw DomainError("h list must halve at each entry");
    }
    if (eps0 != 0.0) throw UnsupportedError("derivatives are compared with v_k, which lives at eps0 = 0");
    require_eps(eps0 + k * h_list.front());

    const std::size_t n_paths = ensemble_paths(ps, incr);
    const std::size_t nt = ps.tg.n_steps + 1;
    const std::size_t nh = h_list.size();
    const CoefficientEngine engine(ps, k);
    // Per path and time: squared error and squared reference, before and after extrapolation.
    std::vector<std::vector<double>> err_sq(n_paths, std::vector<double>(nt, 0.0));
    std::vector<std::vector<double>> raw_sq(n_paths, std::vector<double>(nt, 0.0));
    std::vector<std::vector<double>> ref_sq(n_paths, std::vector<double>(nt, 0.0));
    parallel_for(n_paths, [&](std::size_t p) {
        const Trajectory vk = engine.vk_path(k, incr.get(), p);
        std::vector<Trajectory> dq;
        for (double h : h_list) {
            Trajectory acc(nt, GridFunction::zero(ps.grid()));
            for (int i = 0; i <= k; ++i) {
                const Trajectory ui = solve_mild_path(ps, eps0 + i * h, incr.get(), p);
                const double c = ((k - i) % 2 == 0 ? 1.0 : -1.0) * binomial(k, i) / std::pow(h, k);
                for (std::size_t j = 0; j < nt; ++j) acc[j].axpy(c, ui[j]);
            }
            dq.push_back(std::move(acc));
        }
        const Trajectory raw = dq.back();
        // Neville table for errors c1 h + c2 h^2 + ...
        for (std::size_t level = 1; level < nh; ++level) {
            const double f = std::pow(2.0, static_cast<double>(level));
            for (std::size_t i = nh - 1; i >= level; --i) {
                for (std::size_t j = 0; j < nt; ++j) {
                    GridFunction t = f * dq[i][j];
                    t -= dq[i - 1][j];
                    dq[i][j] = (1.0 / (f - 1.0)) * std::move(t);
                }
            }
        }
        const Trajectory& best = dq.back();
        const Trajectory& ref = vk;
        for (std::size_t j = 0; j < nt; ++j) {
            const double e = norm(best[j] - ref[j], ps.sp);
            const double r = norm(raw[j] - ref[j], ps.sp);
            const double d = norm(ref[j], ps.sp);
            err_sq[p][j] = e * e;
            raw_sq[p][j] = r * r;
            ref_sq[p][j] = d * d;
        }
    });
    double num = 0.0;
    double raw = 0.0;
    double den = 0.0;
    for (std::size_t j = 0; j < nt; ++j) {
        double a = 0.0;
        double b = 0.0;
        double c = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) {
            a += err_sq[p][j];
            b += raw_sq[p][j];
            c += ref_sq[p][j];
        }
        num = std::max(num, std::sqrt(a / n_paths));
        raw = std::max(raw, std::sqrt(b / n_paths));
        den = std::max(den, std::sqrt(c / n_paths));
    }
    DerivativeCheck out;
    out.relative_error = den > 0.0 ? num / den : num;
    out.raw_error = den > 0.0 ? raw / den : raw;
    out.conditioning_warning = std::pow(h_list.back(), k) < 1e-8;
    return out;
}

}  // namespace spde
