#include "spde/grid_space.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "spde/errors.hpp"
#include "spde/stencil.hpp"

namespace spde {

GridSpec GridSpec::uniform(double x_min, double x_max, std::size_t n) {
    if (n < 8) throw StructuralError(fmt::format("grid needs at least 8 points, got {}", n));
    if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max)) {
        throw StructuralError(fmt::format("invalid grid interval [{}, {}]", x_min, x_max));
    }
    return GridSpec{x_min, x_max, n, (x_max - x_min) / static_cast<double>(n - 1)};
}

GridSpec GridSpec::with_spacing(double x_min, double x_max, double dx) {
    if (!(dx > 0.0)) throw StructuralError("grid spacing must be positive");
    const double cells = (x_max - x_min) / dx;
    const double rounded = std::round(cells);
    if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, rounded)) {
        throw StructuralError(fmt::format("interval [{}, {}] is not a multiple of dx={}", x_min, x_max, dx));
    }
    GridSpec g = uniform(x_min, x_max, static_cast<std::size_t>(rounded) + 1);
    g.dx = dx;
    return g;
}

std::optional<std::size_t> GridSpec::node_index(double x) const noexcept {
    const double s = (x - x_min) / dx;
    const double r = std::round(s);
    if (r < 0.0 || r > static_cast<double>(n - 1) || std::abs(s - r) > 1e-9) return std::nullopt;
    return static_cast<std::size_t>(r);
}

GridFunction::GridFunction(GridSpec spec, std::vector<double> values, double limit_at_infinity)
    : spec_(spec), values_(std::move(values)), limit_(limit_at_infinity) {
    if (values_.size() != spec_.n) {
        throw StructuralError(fmt::format("grid function has {} values for a grid of {}", values_.size(), spec_.n));
    }
    if (!std::isfinite(limit_)) throw NumericError("non-finite limit at infinity");
    for (double v : values_) {
        if (!std::isfinite(v)) throw NumericError("non-finite grid function value");
    }
}

GridFunction GridFunction::sample(const GridSpec& spec, const std::function<double(double)>& f,
                                  double limit_at_infinity) {
    std::vector<double> v(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) v[i] = f(spec.x(i));
    return {spec, std::move(v), limit_at_infinity};
}

GridFunction GridFunction::constant(const GridSpec& spec, double c) {
    return {spec, std::vector<double>(spec.n, c), c};
}

bool GridFunction::tail_consistent(double tol_scale) const noexcept {
    return std::abs(values_.back() - limit_) <= tol_scale * (1.0 + std::abs(limit_));
}

namespace {
void require_same_grid(const GridSpec& a, const GridSpec& b) {
    if (!(a == b)) throw StructuralError("grid functions live on different grids");
}
}  // namespace

GridFunction& GridFunction::operator+=(const GridFunction& other) { return axpy(1.0, other); }
GridFunction& GridFunction::operator-=(const GridFunction& other) { return axpy(-1.0, other); }

GridFunction& GridFunction::operator*=(double a) noexcept {
    for (double& v : values_) v *= a;
    limit_ *= a;
    return *this;
}

GridFunction& GridFunction::axpy(double a, const GridFunction& other) {
    require_same_grid(spec_, other.spec_);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * other.values_[i];
    limit_ += a * other.limit_;
    return *this;
}

WeightedSpace::WeightedSpace(double w, GridSpec spec) : w_(w), spec_(spec) {
    if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("weight w must be strictly positive");
    auto wts = std::make_shared<std::vector<double>>(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) (*wts)[i] = std::exp(w * spec.x(i));
    weights_ = std::move(wts);
}

double trapezoid(std::span<const double> y, double dx) noexcept {
    if (y.size() < 2) return 0.0;
    double acc = 0.5 * (y.front() + y.back());
    for (std::size_t i = 1; i + 1 < y.size(); ++i) acc += y[i];
    return acc * dx;
}

namespace {

std::vector<double> first_derivative(const GridFunction& f) {
    std::vector<double> d(f.size());
    DerivativeStencil::get(1).apply(f.values(), f.spec().dx, d);
    return d;
}

double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
    return v;
}

}  // namespace

double weighted_l2_sq(std::span<const double> g, const WeightedSpace& sp) {
    const auto wts = sp.weights();
    if (g.size() != wts.size()) throw StructuralError("vector does not match weighted space grid");
    const std::size_t n = g.size();
    double acc = 0.5 * (g[0] * g[0] * wts[0] + g[n - 1] * g[n - 1] * wts[n - 1]);
    for (std::size_t i = 1; i + 1 < n; ++i) acc += g[i] * g[i] * wts[i];
    return checked(acc * sp.spec().dx, "weighted L2 norm");
}

double weighted_seminorm_sq(const GridFunction& f, const WeightedSpace& sp) {
    require_same_grid(f.spec(), sp.spec());
    return weighted_l2_sq(first_derivative(f), sp);
}

double inner_product(const GridFunction& f, const GridFunction& g, const WeightedSpace& sp) {
    require_same_grid(f.spec(), sp.spec());
    require_same_grid(g.spec(), sp.spec());
    const auto df = first_derivative(f);
    const auto dg = first_derivative(g);
    const auto wts = sp.weights();
    const std::size_t n = df.size();
    double acc = 0.5 * (df[0] * dg[0] * wts[0] + df[n - 1] * dg[n - 1] * wts[n - 1]);
    for (std::size_t i = 1; i + 1 < n; ++i) acc += df[i] * dg[i] * wts[i];
    return checked(f.limit() * g.limit() + acc * sp.spec().dx, "inner product");
}

double norm(const GridFunction& f, const WeightedSpace& sp) {
    const double s = weighted_seminorm_sq(f, sp);
    return std::sqrt(f.limit() * f.limit() + s);
}

double sup_norm(const GridFunction& f) noexcept {
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

GridFunction derivative(const GridFunction& f, int order) {
    const auto& st = DerivativeStencil::get(order);
    std::vector<double> out(f.size());
    st.apply(f.values(), f.spec().dx, out);
    return {f.spec(), std::move(out), 0.0};
}

GridFunction integrate_from_zero(const GridFunction& f) {
    const auto& g = f.spec();
    const auto i0 = g.node_index(0.0);
    if (!i0) throw StructuralError("integrate_from_zero needs x = 0 on the grid");
    if (std::abs(f.limit()) > 1e-12) {
        throw DomainError(fmt::format("integral diverges: f(+inf) = {} is not zero", f.limit()));
    }
    const auto v = f.values();
    std::vector<double> out(g.n, 0.0);
    for (std::size_t i = *i0 + 1; i < g.n; ++i) out[i] = out[i - 1] + 0.5 * g.dx * (v[i - 1] + v[i]);
    for (std::size_t i = *i0; i-- > 0;) out[i] = out[i + 1] - 0.5 * g.dx * (v[i] + v[i + 1]);
    const double lim = out.back();
    return {g, std::move(out), lim};
}

GridSpec half_line_of(const GridSpec& full) {
    const auto i0 = full.node_index(0.0);
    if (!i0) throw StructuralError("full-line grid does not contain x = 0 as a node");
    GridSpec h = full;
    h.x_min = 0.0;
    h.n = full.n - *i0;
    if (h.n < 8) throw StructuralError("half-line part of the grid has fewer than 8 points");
    return h;
}

GridFunction restrict_to_halfline(const GridFunction& f, std::optional<double> w) {
    const GridSpec h = half_line_of(f.spec());
    const std::size_t offset = f.spec().n - h.n;
    std::vector<double> v(f.values().begin() + static_cast<std::ptrdiff_t>(offset), f.values().end());
    GridFunction r(h, std::move(v), f.limit());
    if (w) {
        const double nr = norm(r, WeightedSpace(*w, h));
        const double nf = norm(f, WeightedSpace(*w, f.spec()));
        if (nr > nf * (1.0 + 1e-10) + 1e-300) {
            throw NumericError(fmt::format("restriction norm {} exceeds full-line norm {}", nr, nf));
        }
    }
    return r;
}

void require_admissible(const GridFunction& f, const WeightedSpace& sp, const char* what, double end_tol) {
    require_same_grid(f.spec(), sp.spec());
    if (!f.tail_consistent()) {
        throw DomainError(fmt::format("{}: last value {} inconsistent with limit {}", what, f.values().back(),
                                      f.limit()));
    }
    const auto d = first_derivative(f);
    const auto wts = sp.weights();
    // x = 0 is a genuine boundary of H(R+); only truncated ends must decay.
    const double left = sp.spec().is_half_line() ? 0.0 : d.front() * d.front() * wts.front();
    const double right = d.back() * d.back() * wts.back();
    if (!(left < end_tol) || !(right < end_tol)) {
        throw DomainError(fmt::format("{}: |f'|^2 e^(wx) at the ends ({:.3g}, {:.3g}) exceeds {:.1g}", what, left,
                                      right, end_tol));
    }
    (void)weighted_seminorm_sq(f, sp);
}

void write_csv(const GridFunction& f, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << fmt::format("# limit_at_infinity={:.17g}\n", f.limit());
    out << "x,value\n";
    for (std::size_t i = 0; i < f.size(); ++i) out << fmt::format("{:.17g},{:.17g}\n", f.spec().x(i), f[i]);
}

GridFunction read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::optional<double> limit;
    std::vector<double> xs;
    std::vector<double> vs;
    const std::string key = "# limit_at_infinity=";
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind(key, 0) == 0) {
            limit = std::stod(line.substr(key.size()));
            continue;
        }
        if (line[0] == '#' || line.rfind("x,", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw StructuralError("malformed CSV row: " + line);
        xs.push_back(std::stod(line.substr(0, comma)));
        vs.push_back(std::stod(line.substr(comma + 1)));
    }
    if (!limit) throw StructuralError(path.string() + ": missing limit_at_infinity header");
    if (xs.size() < 8) throw StructuralError(path.string() + ": fewer than 8 rows");
    GridSpec g = GridSpec::uniform(xs.front(), xs.back(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (std::abs(xs[i] - g.x(i)) > 1e-9 * std::max(1.0, std::abs(xs[i]))) {
            throw StructuralError(path.string() + ": grid is not uniform");
        }
    }
    return {g, std::move(vs), *limit};
}

}  // namespace spde
