#include "spde/stochastic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "spde/errors.hpp"
#include "spde/parallel.hpp"
#include "spde/rng.hpp"

namespace spde {

TimeGrid TimeGrid::make(double T, std::size_t n_steps) {
    if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("horizon T must be positive");
    if (n_steps == 0) throw DomainError("time grid needs at least one step");
    return {T, n_steps, T / static_cast<double>(n_steps)};
}

void TimeGrid::require_aligned(const GridSpec& grid) const { (void)aligned_steps(dt, grid.dx); }

WienerIncrements::WienerIncrements(std::size_t n_paths, std::size_t n_steps, std::size_t factors, double dt,
                                   std::uint64_t seed, std::vector<double> data)
    : n_paths_(n_paths), n_steps_(n_steps), factors_(factors), dt_(dt), seed_(seed), data_(std::move(data)) {
    if (data_.size() != n_paths * n_steps * factors) throw StructuralError("increment array has the wrong size");
}

WienerIncrements WienerIncrements::aggregate(std::size_t r) const {
    if (r == 0 || n_steps_ % r != 0) throw StructuralError("aggregation factor must divide the step count");
    const std::size_t coarse = n_steps_ / r;
    std::vector<double> out(n_paths_ * coarse * factors_, 0.0);
    for (std::size_t p = 0; p < n_paths_; ++p) {
        for (std::size_t j = 0; j < coarse; ++j) {
            for (std::size_t f = 0; f < factors_; ++f) {
                double s = 0.0;
                for (std::size_t q = 0; q < r; ++q) s += (*this)(p, j * r + q, f);
                out[(p * coarse + j) * factors_ + f] = s;
            }
        }
    }
    return {n_paths_, coarse, factors_, dt_ * static_cast<double>(r), seed_, std::move(out)};
}

WienerIncrements WienerIncrements::head(std::size_t count) const {
    count = std::min(count, n_paths_);
    std::vector<double> out(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(count * n_steps_ * factors_));
    return {count, n_steps_, factors_, dt_, seed_, std::move(out)};
}

double wiener_increment(std::uint64_t seed, std::size_t path, std::size_t step, std::size_t factor,
                        double dt) noexcept {
    return std::sqrt(dt) *
           standard_normal(seed, path, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(factor));
}

WienerIncrements sample_wiener_increments(std::size_t factors, const TimeGrid& tg, std::size_t n_paths,
                                          std::uint64_t seed) {
    std::vector<double> data(n_paths * tg.n_steps * factors);
    std::size_t idx = 0;
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t j = 0; j < tg.n_steps; ++j) {
            for (std::size_t f = 0; f < factors; ++f) data[idx++] = wiener_increment(seed, p, j, f, tg.dt);
        }
    }
    return {n_paths, tg.n_steps, factors, tg.dt, seed, std::move(data)};
}

NoiseModel NoiseModel::constant(std::vector<GridFunction> sigmas, const WeightedSpace& sp, std::uint64_t seed) {
    std::vector<std::vector<GridFunction>> s;
    for (auto& g : sigmas) s.push_back({std::move(g)});
    NoiseModel m;
    m.sigmas_ = std::move(s);
    m.seed_ = seed;
    for (std::size_t f = 0; f < m.sigmas_.size(); ++f) {
        const auto& g = m.sigmas_[f][0];
        if (g.limit() != 0.0) throw DomainError(fmt::format("sigma_{} has nonzero limit at infinity", f));
        require_admissible(g, sp, "volatility curve");
    }
    return m;
}

NoiseModel NoiseModel::time_dependent(std::vector<std::vector<GridFunction>> sigmas, const WeightedSpace& sp,
                                      std::uint64_t seed) {
    NoiseModel m;
    m.sigmas_ = std::move(sigmas);
    m.time_dependent_ = true;
    m.seed_ = seed;
    for (std::size_t f = 0; f < m.sigmas_.size(); ++f) {
        for (const auto& g : m.sigmas_[f]) {
            if (g.limit() != 0.0) throw DomainError(fmt::format("sigma_{} has nonzero limit at infinity", f));
            require_admissible(g, sp, "volatility curve");
        }
    }
    return m;
}

NoiseModel NoiseModel::unchecked(std::vector<GridFunction> sigmas, std::uint64_t seed) {
    NoiseModel m;
    for (auto& g : sigmas) m.sigmas_.push_back({std::move(g)});
    m.seed_ = seed;
    return m;
}

const GridFunction& NoiseModel::sigma(std::size_t factor, std::size_t step) const {
    const auto& fam = sigmas_.at(factor);
    if (!time_dependent_) return fam[0];
    if (step >= fam.size()) throw StructuralError("volatility family shorter than the time grid");
    return fam[step];
}

NoiseModel NoiseModel::mapped(const std::function<GridFunction(const GridFunction&)>& op) const {
    NoiseModel m = *this;
    for (auto& fam : m.sigmas_) {
        for (auto& g : fam) g = op(g);
    }
    return m;
}

NoiseModel NoiseModel::scaled(double a) const {
    return mapped([a](const GridFunction& g) { return a * g; });
}

double NoiseModel::hilbert_schmidt_sq(std::size_t step,
                                      const std::function<double(const GridFunction&)>& norm_sq) const {
    double acc = 0.0;
    for (std::size_t f = 0; f < factors(); ++f) acc += norm_sq(sigma(f, step));
    return acc;
}

GridFunction NoiseModel::source(const WienerIncrements& incr, std::size_t path, std::size_t step,
                                const GridSpec& grid) const {
    GridFunction xi = GridFunction::zero(grid);
    for (std::size_t f = 0; f < factors(); ++f) xi.axpy(incr(path, step, f), sigma(f, step));
    return xi;
}

namespace {

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

Trajectory weighted_convolution(const Propagator& prop, std::size_t n_steps, int k,
                                const std::function<GridFunction(std::size_t)>& source) {
    if (k < 0) throw DomainError("weight power must be nonnegative");
    const GridSpec& grid = prop.grid();
    const double dt = prop.dt();
    std::vector<GridFunction> a(static_cast<std::size_t>(k) + 1, GridFunction::zero(grid));
    Trajectory out;
    out.reserve(n_steps + 1);
    out.push_back(GridFunction::zero(grid));
    const double scale = std::pow(dt, k);
    for (std::size_t j = 0; j < n_steps; ++j) {
        const GridFunction xi = source(j);
        std::vector<GridFunction> next;
        next.reserve(a.size());
        for (int l = 0; l <= k; ++l) {
            GridFunction s = xi;
            for (int q = 0; q <= l; ++q) s.axpy(binomial(l, q), a[static_cast<std::size_t>(q)]);
            next.push_back(prop.apply(s));
        }
        a = std::move(next);
        out.push_back(scale * a.back());
    }
    return out;
}

Trajectory det_convolution(const SemigroupParams& params, const std::vector<GridFunction>& f, const TimeGrid& tg) {
    if (f.size() < tg.n_steps) throw StructuralError("integrand shorter than the time grid");
    if (f.empty()) return {};
    const Propagator prop(f.front().spec(), tg.dt, params);
    return weighted_convolution(prop, tg.n_steps, 0, [&](std::size_t i) { return tg.dt * f[i]; });
}

Trajectory stoch_convolution_path(const SemigroupParams& params, const NoiseModel& noise, const TimeGrid& tg,
                                  const WienerIncrements& incr, std::size_t path, int k) {
    if (noise.empty()) throw StructuralError("noise model has no factors");
    if (incr.factors() != noise.factors() || incr.n_steps() != tg.n_steps) {
        throw StructuralError("increments do not match the noise model and time grid");
    }
    const GridSpec grid = noise.sigma(0, 0).spec();
    const Propagator prop(grid, tg.dt, params);
    return weighted_convolution(prop, tg.n_steps, k,
                                [&](std::size_t i) { return noise.source(incr, path, i, grid); });
}

PathEnsemble stoch_convolution(const SemigroupParams& params, const NoiseModel& noise, const TimeGrid& tg,
                               std::shared_ptr<const WienerIncrements> incr, int k) {
    PathEnsemble ens;
    ens.paths.resize(incr->n_paths());
    parallel_for(incr->n_paths(), [&](std::size_t p) {
        ens.paths[p] = stoch_convolution_path(params, noise, tg, *incr, p, k);
    });
    ens.increments = std::move(incr);
    return ens;
}

double verify_recursion(int k, const SemigroupParams& params, const NoiseModel& noise, const TimeGrid& tg,
                        const WienerIncrements& incr, const WeightedSpace& sp) {
    std::vector<double> worst(incr.n_paths(), 0.0);
    parallel_for(incr.n_paths(), [&](std::size_t p) {
        const Trajectory sk = stoch_convolution_path(params, noise, tg, incr, p, k);
        const Trajectory sk1 = stoch_convolution_path(params, noise, tg, incr, p, k + 1);
        const Trajectory conv = det_convolution(params, sk, tg);
        double e = 0.0;
        for (std::size_t j = 0; j <= tg.n_steps; ++j) {
            GridFunction diff = sk1[j];
            diff.axpy(-(k + 1.0), conv[j]);
            e = std::max(e, norm(diff, sp) / (1.0 + norm(sk1[j], sp)));
        }
        worst[p] = e;
    });
    return worst.empty() ? 0.0 : *std::max_element(worst.begin(), worst.end());
}

double lp_norm_from_sups(std::span<const double> sups, double p) {
    if (!(p > 0.0)) throw DomainError("Lp exponent must be positive");
    if (sups.empty()) return 0.0;
    double acc = 0.0;
    for (double s : sups) acc += std::pow(s, p);
    return std::pow(acc / static_cast<double>(sups.size()), 1.0 / p);
}

double lp_norm_estimate(const PathEnsemble& ens, double p, const WeightedSpace& sp) {
    std::vector<double> sups(ens.n_paths(), 0.0);
    parallel_for(ens.n_paths(), [&](std::size_t i) {
        double s = 0.0;
        for (const auto& g : ens.paths[i]) s = std::max(s, norm(g, sp));
        sups[i] = s;
    });
    return lp_norm_from_sups(sups, p);
}

namespace {

double quantile(std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(hi), v.end());
    const double b = v[hi];
    return a + (pos - static_cast<double>(lo)) * (b - a);
}

template <class T>
void put(std::ofstream& out, T v) {
    static_assert(std::endian::native == std::endian::little, "binary layout assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw StructuralError("truncated ensemble file");
    return v;
}

}  // namespace

void write_ensemble_summary_csv(const PathEnsemble& ens, const TimeGrid& tg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string());
    out << "t,x,mean,q05,q50,q95\n";
    if (ens.paths.empty()) return;
    const GridSpec& g = ens.paths[0][0].spec();
    std::vector<double> col(ens.n_paths());
    for (std::size_t j = 0; j < ens.n_times(); ++j) {
        for (std::size_t i = 0; i < g.n; ++i) {
            double mean = 0.0;
            for (std::size_t p = 0; p < ens.n_paths(); ++p) {
                col[p] = ens.paths[p][j][i];
                mean += col[p];
            }
            mean /= static_cast<double>(ens.n_paths());
            out << fmt::format("{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", tg.t(j), g.x(i), mean,
                               quantile(col, 0.05), quantile(col, 0.5), quantile(col, 0.95));
        }
    }
}

void write_ensemble_binary(const PathEnsemble& ens, const std::filesystem::path& path) {
    if (ens.paths.empty() || !ens.increments) throw StructuralError("cannot serialize an empty ensemble");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string());
    const auto& incr = *ens.increments;
    const GridSpec& g = ens.paths[0][0].spec();
    put<std::uint64_t>(out, incr.factors());
    put<std::uint64_t>(out, incr.n_steps());
    put<std::uint64_t>(out, ens.n_paths());
    put<std::uint64_t>(out, g.n);
    put<double>(out, g.dx);
    put<double>(out, g.x_min);
    put<double>(out, incr.dt());
    put<std::uint64_t>(out, incr.seed());
    for (const auto& traj : ens.paths) {
        if (traj.size() != incr.n_steps() + 1) throw StructuralError("trajectory length does not match increments");
        for (const auto& f : traj) {
            put<double>(out, f.limit());
            for (double v : f.values()) put<double>(out, v);
        }
    }
    for (double v : incr.raw()) put<double>(out, v);
}

PathEnsemble read_ensemble_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const auto K = get<std::uint64_t>(in);
    const auto n_steps = get<std::uint64_t>(in);
    const auto n_paths = get<std::uint64_t>(in);
    const auto n = get<std::uint64_t>(in);
    const auto dx = get<double>(in);
    const auto x_min = get<double>(in);
    const auto dt = get<double>(in);
    const auto seed = get<std::uint64_t>(in);
    GridSpec g = GridSpec::uniform(x_min, x_min + dx * static_cast<double>(n - 1), n);
    g.dx = dx;
    PathEnsemble ens;
    ens.paths.resize(n_paths);
    for (auto& traj : ens.paths) {
        for (std::uint64_t j = 0; j <= n_steps; ++j) {
            const double lim = get<double>(in);
            std::vector<double> v(n);
            for (auto& x : v) x = get<double>(in);
            traj.emplace_back(g, std::move(v), lim);
        }
    }
    std::vector<double> data(K * n_steps * n_paths);
    for (auto& x : data) x = get<double>(in);
    ens.increments = std::make_shared<WienerIncrements>(n_paths, n_steps, K, dt, seed, std::move(data));
    return ens;
}

}  // namespace spde
