#include "spde/functionals.hpp"

#include <cmath>

#include <fmt/format.h>

#include "spde/parallel.hpp"

namespace spde {

namespace {

std::uint64_t ufactorial(int n) {
    std::uint64_t r = 1;
    for (int i = 2; i <= n; ++i) r *= static_cast<std::uint64_t>(i);
    return r;
}

void require_order(int n) {
    if (n < 1 || n > max_fdb_order) throw DomainError(fmt::format("partition order {} outside [1, {}]", n, max_fdb_order));
}

FdbPartition finish(int n, std::vector<int> k) {
    FdbPartition p;
    std::uint64_t denom = 1;
    for (int i = 1; i <= n; ++i) {
        const int ki = k[static_cast<std::size_t>(i - 1)];
        p.j += ki;
        const std::uint64_t fi = ufactorial(i);
        denom *= ufactorial(ki);
        for (int c = 0; c < ki; ++c) denom *= fi;
    }
    p.coefficient = ufactorial(n) / denom;
    p.k = std::move(k);
    return p;
}

// Assigns k_i for i = idx+1..n given the remaining weight; emits in lexicographic order of k.
void enumerate(int n, int idx, int remaining, std::vector<int>& k, std::vector<FdbPartition>& out) {
    if (idx == n) {
        if (remaining == 0) out.push_back(finish(n, k));
        return;
    }
    const int part = idx + 1;
    for (int c = 0; c * part <= remaining; ++c) {
        k[static_cast<std::size_t>(idx)] = c;
        enumerate(n, idx + 1, remaining - c * part, k, out);
    }
    k[static_cast<std::size_t>(idx)] = 0;
}

}  // namespace

std::vector<FdbPartition> faa_di_bruno_partitions(int n) {
    require_order(n);
    std::vector<FdbPartition> out;
    std::vector<int> k(static_cast<std::size_t>(n), 0);
    enumerate(n, 0, n, k, out);
    return out;
}

std::vector<FdbPartition> brute_force_partitions(int n) {
    require_order(n);
    if (n > 8) throw DomainError("brute-force enumeration is limited to n <= 8");
    std::vector<FdbPartition> out;
    std::vector<int> k(static_cast<std::size_t>(n), 0);
    const auto base = static_cast<std::uint64_t>(n + 1);
    std::uint64_t total = 1;
    for (int i = 0; i < n; ++i) total *= base;
    for (std::uint64_t code = 0; code < total; ++code) {
        std::uint64_t c = code;
        // Most significant digit is k_1 so the scan is lexicographic in k.
        for (int i = n - 1; i >= 0; --i) {
            k[static_cast<std::size_t>(i)] = static_cast<int>(c % base);
            c /= base;
        }
        int weight = 0;
        for (int i = 0; i < n; ++i) weight += (i + 1) * k[static_cast<std::size_t>(i)];
        if (weight == n) out.push_back(finish(n, k));
    }
    return out;
}

double F_tx(const Trajectory& f, const TimeGrid& tg, std::size_t j, double x) {
    if (x < 0.0) throw DomainError(fmt::format("F_tx needs x >= 0, got {}", x));
    if (j >= f.size()) throw StructuralError("time index beyond the trajectory");
    if (f.size() != tg.n_steps + 1) throw StructuralError("trajectory does not match the time grid");
    const GridSpec& g = f.front().spec();
    const auto i0 = g.node_index(0.0);
    const auto ix = g.node_index(x);
    if (!i0) throw StructuralError("F_tx needs x = 0 on the grid");
    if (!ix) throw AlignmentError(fmt::format("x = {} is not a grid node", x));
    const auto v = f[j].values();
    double space = 0.0;
    for (std::size_t i = *i0; i < *ix; ++i) space += 0.5 * g.dx * (v[i] + v[i + 1]);
    double time = 0.0;
    for (std::size_t s = 0; s < j; ++s) time += 0.5 * tg.dt * (f[s][*i0] + f[s + 1][*i0]);
    return space + time;
}

FunctionalSurface F_full(const Trajectory& f, const TimeGrid& tg) {
    if (f.size() != tg.n_steps + 1) throw StructuralError("trajectory does not match the time grid");
    const GridSpec& g = f.front().spec();
    const auto i0 = g.node_index(0.0);
    if (!i0) throw StructuralError("F_full needs x = 0 on the grid");
    FunctionalSurface s;
    for (std::size_t i = *i0; i < g.n; ++i) s.xs.push_back(g.x(i));
    double time = 0.0;
    for (std::size_t j = 0; j <= tg.n_steps; ++j) {
        if (j > 0) time += 0.5 * tg.dt * (f[j - 1][*i0] + f[j][*i0]);
        s.times.push_back(tg.t(j));
        std::vector<double> row;
        row.reserve(s.xs.size());
        double space = 0.0;
        row.push_back(time);
        for (std::size_t i = *i0 + 1; i < g.n; ++i) {
            space += 0.5 * g.dx * (f[j][i - 1] + f[j][i]);
            row.push_back(space + time);
        }
        s.values.push_back(std::move(row));
    }
    return s;
}

double continuity_ratio(const Trajectory& f, const TimeGrid& tg, std::size_t j, double x, double w) {
    double sup = 0.0;
    for (const auto& g : f) {
        const GridFunction h = g.spec().is_half_line() ? g : restrict_to_halfline(g);
        sup = std::max(sup, norm(h, WeightedSpace(w, h.spec())));
    }
    if (sup == 0.0) throw NumericError("continuity ratio undefined for the zero trajectory");
    return std::abs(F_tx(f, tg, j, x)) / ((1.0 + x + tg.T) * sup);
}

double FunctionalExpansion::slope() const { return loglog_slope(eps_list, remainder_norm); }

FunctionalExpansion expand_functional(const FunctionalSpec<Trajectory>& F, const ExpansionResult& res,
                                      const std::vector<double>& eps_list, double q) {
    if (!(q >= 1.0)) throw DomainError("moment exponent q must be at least 1");
    const int n_max = static_cast<int>(res.v.size());
    // The remainder order needs F of class C^m, m = n_max + 1.
    if (F.order() < n_max + 1) throw UnsupportedError("functional has too few derivative oracles for this expansion");
    const std::size_t n_paths = res.u.n_paths();
    FunctionalExpansion out;
    out.eps_list = eps_list;
    out.q = q;
    out.w.assign(n_paths, std::vector<double>(static_cast<std::size_t>(n_max), 0.0));
    out.base.assign(n_paths, 0.0);
    out.remainder.assign(eps_list.size(), std::vector<double>(n_paths, 0.0));
    parallel_for(n_paths, [&](std::size_t p) {
        const Trajectory& u = res.u.paths[p];
        std::vector<Trajectory> v;
        for (const auto& ens : res.v) v.push_back(ens.paths[p]);
        out.base[p] = F.evaluate(u);
        for (int n = 1; n <= n_max; ++n) {
            out.w[p][static_cast<std::size_t>(n - 1)] = faa_di_bruno_wn<Trajectory>(n, F, u, v);
        }
        for (std::size_t ei = 0; ei < eps_list.size(); ++ei) {
            const double e = eps_list[ei];
            double r = F.evaluate(res.u_eps.at(e).paths[p]) - out.base[p];
            double fact = 1.0;
            for (int n = 1; n <= n_max; ++n) {
                fact *= n;
                r -= std::pow(e, n) / fact * out.w[p][static_cast<std::size_t>(n - 1)];
            }
            out.remainder[ei][p] = r;
        }
    });
    for (const auto& row : out.remainder) {
        double acc = 0.0;
        for (double r : row) acc += std::pow(std::abs(r), q);
        out.remainder_norm.push_back(std::pow(acc / static_cast<double>(std::max<std::size_t>(n_paths, 1)), 1.0 / q));
    }
    return out;
}

}  // namespace spde
