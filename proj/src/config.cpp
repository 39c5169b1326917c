#include "spde/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "spde/errors.hpp"

namespace spde {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("'{}' is not a number", s));
    return v;
}

std::uint64_t parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("'{}' is not a nonnegative integer", s));
    return v;
}

int parse_int(const std::string& s) {
    int v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("'{}' is not an integer", s));
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(fmt::format("'{}' is not a boolean", s));
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& t : split(s)) out.push_back(parse_double(t));
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const auto& t : split(s)) out.push_back(parse_int(t));
    return out;
}

std::string show(double v) { return fmt::format("{}", v); }
std::string show(const std::vector<double>& v) { return fmt::format("{}", fmt::join(v, ",")); }
std::string show(const std::vector<int>& v) { return fmt::format("{}", fmt::join(v, ",")); }

struct Key {
    std::string name;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<Key> table = {
        {"experiment", "simulate | expand | converge | resolvent-check | functional | musiela",
         [](const C& c) { return to_string(c.experiment); },
         [](C& c, S v) { c.experiment = experiment_from_string(v); }},
        {"grid.x_min", "left truncation of the real line", [](const C& c) { return show(c.transport.x_min); },
         [](C& c, S v) { c.transport.x_min = parse_double(v); }},
        {"grid.x_max", "right truncation", [](const C& c) { return show(c.transport.x_max); },
         [](C& c, S v) { c.transport.x_max = parse_double(v); }},
        {"grid.dx", "grid spacing", [](const C& c) { return show(c.transport.dx); },
         [](C& c, S v) { c.transport.dx = parse_double(v); }},
        {"time.T", "horizon", [](const C& c) { return show(c.transport.T); },
         [](C& c, S v) { c.transport.T = parse_double(v); }},
        {"time.n_steps", "number of time steps; T / n_steps must be a multiple of grid.dx",
         [](const C& c) { return std::to_string(c.transport.n_steps); },
         [](C& c, S v) { c.transport.n_steps = parse_uint(v); }},
        {"space.w", "exponential weight w > 0", [](const C& c) { return show(c.transport.w); },
         [](C& c, S v) { c.transport.w = parse_double(v); }},
        {"noise.enabled", "false gives the deterministic problem B = 0",
         [](const C& c) { return c.transport.stochastic ? std::string("true") : std::string("false"); },
         [](C& c, S v) { c.transport.stochastic = parse_bool(v); }},
        {"noise.scale", "factor applied to both volatility curves",
         [](const C& c) { return show(c.transport.noise_scale); },
         [](C& c, S v) { c.transport.noise_scale = parse_double(v); }},
        {"perturbation.kind", "shifted (A^2 - w^2/2) or plain (A^2)",
         [](const C& c) { return c.transport.shifted ? std::string("shifted") : std::string("plain"); },
         [](C& c, S v) {
             if (v != "shifted" && v != "plain") throw ConfigError(fmt::format("'{}' is not shifted or plain", v));
             c.transport.shifted = v == "shifted";
         }},
        {"expansion.m", "expansion order for expand and functional", [](const C& c) { return std::to_string(c.transport.m); },
         [](C& c, S v) { c.transport.m = parse_int(v); }},
        {"expansion.m_list", "expansion orders for converge", [](const C& c) { return show(c.m_list); },
         [](C& c, S v) { c.m_list = parse_ints(v); }},
        {"expansion.p", "moment exponent p >= 1", [](const C& c) { return show(c.transport.p); },
         [](C& c, S v) { c.transport.p = parse_double(v); }},
        {"expansion.eps_list", "perturbation sizes in [0, 1]", [](const C& c) { return show(c.eps_list); },
         [](C& c, S v) { c.eps_list = parse_doubles(v); }},
        {"expansion.threeterm_paths", "paths on which the three-term remainder is also evaluated",
         [](const C& c) { return std::to_string(c.threeterm_paths); },
         [](C& c, S v) { c.threeterm_paths = parse_uint(v); }},
        {"mc.n_paths", "Monte Carlo paths", [](const C& c) { return std::to_string(c.n_paths); },
         [](C& c, S v) { c.n_paths = parse_uint(v); }},
        {"mc.seed", "seed of the counter-based generator", [](const C& c) { return std::to_string(c.seed); },
         [](C& c, S v) { c.seed = parse_uint(v); }},
        {"output.dir", "result directory", [](const C& c) { return c.out_dir.string(); },
         [](C& c, S v) { c.out_dir = v; }},
        {"output.binary", "also write the raw ensemble of simulate",
         [](const C& c) { return c.write_binary ? std::string("true") : std::string("false"); },
         [](C& c, S v) { c.write_binary = parse_bool(v); }},
        {"resolvent.lambdas", "resolvent parameters, each > w^2/4", [](const C& c) { return show(c.lambdas); },
         [](C& c, S v) { c.lambdas = parse_doubles(v); }},
        {"resolvent.eps_list", "eps sequence for strong resolvent convergence",
         [](const C& c) { return show(c.resolvent_eps); }, [](C& c, S v) { c.resolvent_eps = parse_doubles(v); }},
        {"hjm.dx", "Musiela grid spacing", [](const C& c) { return show(c.hjm.dx); },
         [](C& c, S v) { c.hjm.dx = parse_double(v); }},
        {"hjm.x_max", "longest time to maturity", [](const C& c) { return show(c.hjm.x_max); },
         [](C& c, S v) { c.hjm.x_max = parse_double(v); }},
        {"hjm.x_min_full", "left end of the extended grid, <= -6", [](const C& c) { return show(c.hjm.x_min_full); },
         [](C& c, S v) { c.hjm.x_min_full = parse_double(v); }},
        {"hjm.T", "Musiela horizon", [](const C& c) { return show(c.hjm.T); },
         [](C& c, S v) { c.hjm.T = parse_double(v); }},
        {"hjm.n_steps", "Musiela time steps", [](const C& c) { return std::to_string(c.hjm.n_steps); },
         [](C& c, S v) { c.hjm.n_steps = parse_uint(v); }},
        {"hjm.w", "Musiela weight", [](const C& c) { return show(c.hjm.w); },
         [](C& c, S v) { c.hjm.w = parse_double(v); }},
        {"hjm.m", "regularity and expansion order of the Musiela problem",
         [](const C& c) { return std::to_string(c.hjm.m); }, [](C& c, S v) { c.hjm.m = parse_int(v); }},
        {"hjm.a1", "sigma_1 = a1 e^{-x}", [](const C& c) { return show(c.hjm.a1); },
         [](C& c, S v) { c.hjm.a1 = parse_double(v); }},
        {"hjm.a2", "sigma_2 = a2 x e^{-x}; 0 drops the factor", [](const C& c) { return show(c.hjm.a2); },
         [](C& c, S v) { c.hjm.a2 = parse_double(v); }},
        {"hjm.x0", "time to maturity of the tracked bond", [](const C& c) { return show(c.x0); },
         [](C& c, S v) { c.x0 = parse_double(v); }},
        {"hjm.martingale_eps", "eps values of the martingale diagnostic; the first must be 0",
         [](const C& c) { return show(c.martingale_eps); }, [](C& c, S v) { c.martingale_eps = parse_doubles(v); }},
        {"hjm.martingale_paths", "paths of the martingale diagnostic",
         [](const C& c) { return std::to_string(c.martingale_paths); },
         [](C& c, S v) { c.martingale_paths = parse_uint(v); }},
        {"functional.x", "time to maturity x in F_{T,x}", [](const C& c) { return show(c.functional_x); },
         [](C& c, S v) { c.functional_x = parse_double(v); }},
    };
    return table;
}

ExperimentConfig defaults() {
    ExperimentConfig c;
    c.eps_list = {0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625};
    c.m_list = {1, 2, 3};
    c.lambdas = {1.0, 5.0};
    c.resolvent_eps.clear();
    for (int j = 1; j <= 8; ++j) c.resolvent_eps.push_back(std::ldexp(1.0, -j));
    c.martingale_eps = {0.0, 0.05, 0.1};
    return c;
}

bool is_integer_ratio(double a, double b) {
    const double r = a / b;
    return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, std::abs(r));
}

void check_eps(std::vector<std::string>& errs, const char* key, const std::vector<double>& v) {
    for (double e : v) {
        if (!(e >= 0.0 && e <= 1.0)) errs.push_back(fmt::format("{}: eps = {} violates eps in [0, 1]", key, e));
    }
}

}  // namespace

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Simulate: return "simulate";
        case ExperimentKind::Expand: return "expand";
        case ExperimentKind::Converge: return "converge";
        case ExperimentKind::ResolventCheck: return "resolvent-check";
        case ExperimentKind::Functional: return "functional";
        case ExperimentKind::Musiela: return "musiela";
    }
    return "converge";
}

ExperimentKind experiment_from_string(std::string_view s) {
    for (auto k : {ExperimentKind::Simulate, ExperimentKind::Expand, ExperimentKind::Converge,
                   ExperimentKind::ResolventCheck, ExperimentKind::Functional, ExperimentKind::Musiela}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError(fmt::format("unknown experiment '{}'", s));
}

ConfigMap parse_config_text(std::string_view text) {
    ConfigMap out;
    std::vector<std::string> errs;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            errs.push_back(fmt::format("line {}: expected 'key = value'", lineno));
            continue;
        }
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) {
            errs.push_back(fmt::format("line {}: empty key", lineno));
            continue;
        }
        if (out.count(key) != 0) errs.push_back(fmt::format("line {}: duplicate key '{}'", lineno, key));
        out[key] = value;
    }
    if (!errs.empty()) throw ConfigError(fmt::format("{}", fmt::join(errs, "\n")));
    return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> errs;
    const auto& tr = c.transport;
    if (!(tr.dx > 0.0)) errs.push_back("grid.dx must be positive");
    if (!(tr.x_max > tr.x_min)) errs.push_back("grid.x_max must exceed grid.x_min");
    if (tr.dx > 0.0 && tr.x_max > tr.x_min) {
        if (!is_integer_ratio(tr.x_max - tr.x_min, tr.dx)) errs.push_back("grid: (x_max - x_min) / dx must be an integer");
        else if ((tr.x_max - tr.x_min) / tr.dx + 1.0 < 8.0) errs.push_back("grid: at least 8 points are required");
        if (tr.x_min > 0.0 || !is_integer_ratio(-tr.x_min, tr.dx)) errs.push_back("grid: x = 0 must be a grid node");
    }
    if (!(tr.T > 0.0)) errs.push_back("time.T must be positive");
    if (tr.n_steps < 1) errs.push_back("time.n_steps must be at least 1");
    if (tr.T > 0.0 && tr.n_steps >= 1 && tr.dx > 0.0 && !is_integer_ratio(tr.T / static_cast<double>(tr.n_steps), tr.dx)) {
        errs.push_back("time: dt = T / n_steps must be a multiple of grid.dx");
    }
    if (!(tr.w > 0.0)) errs.push_back("space.w must be positive");
    if (!(tr.noise_scale >= 0.0)) errs.push_back("noise.scale must be nonnegative");
    if (tr.m < 1) errs.push_back("expansion.m must be at least 1");
    if (c.m_list.empty()) errs.push_back("expansion.m_list must not be empty");
    for (int m : c.m_list) {
        if (m < 1) errs.push_back(fmt::format("expansion.m_list: m = {} violates m >= 1", m));
    }
    if (!(tr.p >= 1.0)) errs.push_back("expansion.p must be at least 1");
    if (c.eps_list.empty()) errs.push_back("expansion.eps_list must not be empty");
    check_eps(errs, "expansion.eps_list", c.eps_list);
    if (c.experiment == ExperimentKind::Converge) {
        if (c.eps_list.size() < 4) errs.push_back("expansion.eps_list: converge needs at least 4 values");
        for (std::size_t i = 1; i < c.eps_list.size(); ++i) {
            if (c.eps_list[i] <= 0.0 || c.eps_list[i - 1] <= 0.0 ||
                std::abs(c.eps_list[i] / c.eps_list[i - 1] - c.eps_list[1] / c.eps_list[0]) > 1e-9) {
                errs.push_back("expansion.eps_list: converge needs a geometric sequence of positive values");
                break;
            }
        }
    }
    if (c.n_paths < 1) errs.push_back("mc.n_paths must be at least 1");
    for (double l : c.lambdas) {
        if (!(l > 0.25 * tr.w * tr.w)) errs.push_back(fmt::format("resolvent.lambdas: lambda = {} must exceed w^2/4", l));
    }
    check_eps(errs, "resolvent.eps_list", c.resolvent_eps);
    const auto& h = c.hjm;
    if (!(h.dx > 0.0)) errs.push_back("hjm.dx must be positive");
    if (!(h.x_max > 0.0)) errs.push_back("hjm.x_max must be positive");
    if (h.x_min_full > -6.0) errs.push_back("hjm.x_min_full must be <= -6");
    if (h.dx > 0.0) {
        if (!is_integer_ratio(h.x_max, h.dx) || !is_integer_ratio(-h.x_min_full, h.dx)) {
            errs.push_back("hjm: x_max and x_min_full must be multiples of hjm.dx");
        }
        if (h.T > 0.0 && h.n_steps >= 1 && !is_integer_ratio(h.T / static_cast<double>(h.n_steps), h.dx)) {
            errs.push_back("hjm: dt = T / n_steps must be a multiple of hjm.dx");
        }
        if (!(c.x0 >= 0.0) || !is_integer_ratio(c.x0, h.dx)) errs.push_back("hjm.x0 must be a nonnegative grid node");
    }
    if (!(h.T > 0.0)) errs.push_back("hjm.T must be positive");
    if (h.n_steps < 1) errs.push_back("hjm.n_steps must be at least 1");
    if (!(h.w > 0.0)) errs.push_back("hjm.w must be positive");
    if (h.m < 1 || 2 * h.m > 8) errs.push_back("hjm.m must lie in [1, 4]");
    check_eps(errs, "hjm.martingale_eps", c.martingale_eps);
    if (c.martingale_eps.empty() || c.martingale_eps.front() != 0.0) {
        errs.push_back("hjm.martingale_eps must start with 0");
    }
    if (c.martingale_paths < 2) errs.push_back("hjm.martingale_paths must be at least 2");
    if (!(c.functional_x >= 0.0) || (tr.dx > 0.0 && !is_integer_ratio(c.functional_x, tr.dx))) {
        errs.push_back("functional.x must be a nonnegative grid node");
    }
    return errs;
}

ExperimentConfig make_config(const ConfigMap& entries) {
    ExperimentConfig c = defaults();
    std::vector<std::string> errs;
    for (const auto& [k, v] : entries) {
        const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& key) { return key.name == k; });
        if (it == keys().end()) {
            errs.push_back(fmt::format("unknown key '{}'", k));
            continue;
        }
        try {
            it->set(c, v);
        } catch (const ConfigError& e) {
            errs.push_back(fmt::format("{}: {}", k, e.what()));
        }
    }
    const auto more = validate_config(c);
    errs.insert(errs.end(), more.begin(), more.end());
    if (!errs.empty()) throw ConfigError(fmt::format("invalid configuration:\n  {}", fmt::join(errs, "\n  ")));
    return c;
}

std::string default_config_text() {
    const ExperimentConfig c = defaults();
    std::string out;
    for (const auto& k : keys()) out += fmt::format("{} = {}  # {}\n", k.name, k.get(c), k.doc);
    return out;
}

ConfigMap config_entries(const ExperimentConfig& cfg) {
    ConfigMap out;
    for (const auto& k : keys()) out[k.name] = k.get(cfg);
    return out;
}

}  // namespace spde
