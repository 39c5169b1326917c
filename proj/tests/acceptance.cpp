// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "spde/config.hpp"
#include "spde/parallel.hpp"
#include "spde/runner.hpp"

using namespace spde;
namespace fs = std::filesystem;

namespace {

// Pinned runtime budgets in seconds, per criterion.
constexpr double budget_slopes = 120.0;
constexpr double budget_bound = 120.0;
constexpr double budget_recursion = 30.0;
constexpr double budget_resolvent = 30.0;
constexpr double budget_derivative = 60.0;
constexpr double budget_structure = 10.0;
constexpr double budget_fdb = 5.0;
constexpr double budget_martingale = 180.0;
constexpr double budget_pricing = 120.0;
constexpr double budget_extension = 10.0;
constexpr double budget_reproducibility = 60.0;

constexpr const char* reference_paths = "256";
constexpr const char* derivative_paths = "64";
constexpr const char* martingale_paths = "10000";

const fs::path out_root = fs::temp_directory_path() / "spde_acceptance";

struct Timed {
    RunResult result;
    double seconds = 0.0;
};

Timed timed_run(const std::string& experiment, ConfigMap overrides = {}) {
    overrides["experiment"] = experiment;
    overrides["output.dir"] = (out_root / experiment).string();
    const auto start = std::chrono::steady_clock::now();
    RunResult r = run_experiment(make_config(overrides));
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    return {std::move(r), dt.count()};
}

const Check* find_check(const RunResult& r, const std::string& name) {
    for (const auto& c : r.checks)
        if (c.name == name) return &c;
    return nullptr;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// A criterion passes when its named check is asserted and passes within the budget.
Outcome from_check(const Timed& t, const std::string& name, double budget) {
    const Check* c = find_check(t.result, name);
    if (c == nullptr) return {false, fmt::format("check {} missing", name)};
    const bool in_time = t.seconds <= budget;
    return {c->pass && c->asserted && in_time,
            fmt::format("{} value={:.6g} tolerance={} asserted={} time={:.1f}s/{:.0f}s", name, c->value, c->tolerance.dump(),
                        c->asserted, t.seconds, budget)};
}

std::string payload_of(const std::string& threads) {
    ::setenv("SPDE_THREADS", threads.c_str(), 1);
    const std::string dump = timed_run("simulate").result.payload.dump();
    ::unsetenv("SPDE_THREADS");
    return dump;
}

Outcome reproducibility() {
    const auto start = std::chrono::steady_clock::now();
    set_worker_count(0);
    const std::string first = payload_of("4");
    const std::string second = payload_of("4");
    const std::string one = payload_of("1");
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    const bool same = first == second && first == one;
    return {same && dt.count() <= budget_reproducibility,
            fmt::format("simulate payload sha256 {} / {} / {} (threads 4, 4, 1) time={:.1f}s/{:.0f}s",
                        sha256_hex(first).substr(0, 12), sha256_hex(second).substr(0, 12), sha256_hex(one).substr(0, 12),
                        dt.count(), budget_reproducibility)};
}

}  // namespace

int main() {
    fs::remove_all(out_root);
    std::map<std::string, Timed> runs;
    auto get = [&](const std::string& key, const std::string& experiment, ConfigMap overrides) -> const Timed& {
        auto it = runs.find(key);
        if (it == runs.end()) it = runs.emplace(key, timed_run(experiment, std::move(overrides))).first;
        return it->second;
    };
    auto converge = [&]() -> const Timed& { return get("converge", "converge", {{"mc.n_paths", reference_paths}}); };
    auto resolvent = [&]() -> const Timed& { return get("resolvent", "resolvent-check", {}); };
    auto musiela = [&]() -> const Timed& {
        return get("musiela", "musiela", {{"hjm.martingale_paths", martingale_paths}});
    };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"1  remainder scaling", [&] { return from_check(converge(), "remainder_slope", budget_slopes); }},
        {"2  bound domination", [&] { return from_check(converge(), "bound_domination", budget_bound); }},
        {"3  convolution recursion",
         [&] { return from_check(get("simulate", "simulate", {}), "convolution_recursion", budget_recursion); }},
        {"4  strong resolvent convergence",
         [&] { return from_check(resolvent(), "strong_resolvent_convergence", budget_resolvent); }},
        {"5  eps-differentiability",
         [&] {
             return from_check(get("expand", "expand", {{"mc.n_paths", derivative_paths}}), "eps_differentiability",
                               budget_derivative);
         }},
        {"6  semigroup structure", [&] { return from_check(resolvent(), "semigroup_structure", budget_structure); }},
        {"7  Faa di Bruno", [&] { return from_check(get("functional", "functional", {}), "faa_di_bruno", budget_fdb); }},
        {"8  HJM martingale", [&] { return from_check(musiela(), "hjm_martingale", budget_martingale); }},
        {"9  pricing-error expansion", [&] { return from_check(musiela(), "pricing_error_expansion", budget_pricing); }},
        {"10 extension/restriction", [&] { return from_check(musiela(), "extension_restriction", budget_extension); }},
        {"11 reproducibility", reproducibility},
    };

    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, fmt::format("error: {}", e.what())};
        }
        if (!o.pass) ++failed;
        std::cout << fmt::format("{:<34} {}  {}", name, o.pass ? "PASS" : "FAIL", o.detail) << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<std::size_t>(failed), criteria.size())
              << std::endl;
    fs::remove_all(out_root);
    return failed == 0 ? 0 : 1;
}
