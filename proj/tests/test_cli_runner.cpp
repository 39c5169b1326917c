#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "spde/config.hpp"
#include "spde/errors.hpp"
#include "spde/parallel.hpp"
#include "spde/runner.hpp"

using namespace spde;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("spde_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

// Small transport grid so the end-to-end runs stay fast.
ConfigMap small(const std::string& experiment, const fs::path& out) {
    return {{"experiment", experiment},  {"grid.x_min", "-12"},  {"grid.x_max", "24"},  {"grid.dx", "0.0625"},
            {"time.n_steps", "16"},      {"mc.n_paths", "8"},    {"output.dir", out.string()},
            {"hjm.martingale_paths", "200"}};
}

std::string config_error_text(const ConfigMap& entries) {
    try {
        (void)make_config(entries);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("defaults parse back to the default configuration") {
    const ExperimentConfig d = make_config({});
    const ExperimentConfig back = make_config(parse_config_text(default_config_text()));
    CHECK(config_entries(back) == config_entries(d));
    CHECK(validate_config(d).empty());
    for (const auto& [key, value] : config_entries(d)) CHECK(default_config_text().find(key + " = ") != std::string::npos);
}

TEST_CASE("experiment names round trip") {
    for (auto k : {ExperimentKind::Simulate, ExperimentKind::Expand, ExperimentKind::Converge,
                   ExperimentKind::ResolventCheck, ExperimentKind::Functional, ExperimentKind::Musiela})
        CHECK(experiment_from_string(to_string(k)) == k);
    CHECK(to_string(ExperimentKind::ResolventCheck) == "resolvent-check");
    CHECK_THROWS_AS((void)experiment_from_string("integrate"), ConfigError);
}

TEST_CASE("configuration errors are reported together") {
    const std::string one = config_error_text({{"expansion.eps_list", "0.5,1.5"}});
    CHECK(one.find("eps in [0, 1]") != std::string::npos);

    const std::string many = config_error_text({{"expansion.eps_list", "1.5"},
                                                {"expansion.m", "0"},
                                                {"time.n_steps", "48"},
                                                {"bogus.key", "1"},
                                                {"mc.n_paths", "many"}});
    CHECK(many.find("eps in [0, 1]") != std::string::npos);
    CHECK(many.find("expansion.m") != std::string::npos);
    CHECK(many.find("dt = T / n_steps must be a multiple of grid.dx") != std::string::npos);
    CHECK(many.find("bogus.key") != std::string::npos);
    CHECK(many.find("mc.n_paths") != std::string::npos);

    CHECK(config_error_text({{"resolvent.lambdas", "0.2"}}).find("resolvent.lambdas") != std::string::npos);
    CHECK(config_error_text({{"hjm.martingale_eps", "0.05,0.1"}}).find("hjm.martingale_eps") != std::string::npos);
}

TEST_CASE("config text syntax") {
    const ConfigMap m = parse_config_text("# comment\nmc.seed = 7  # trailing\n\n  mc.n_paths=3\n");
    CHECK(m.at("mc.seed") == "7");
    CHECK(m.at("mc.n_paths") == "3");
    CHECK_THROWS_AS((void)parse_config_text("mc.seed 7\n"), ConfigError);
    try {
        (void)parse_config_text("mc.seed = 1\nmc.seed = 2\n");
        FAIL("duplicate key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("SHA-256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("same seed gives a byte-identical payload") {
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    const RunResult ra = run_experiment(make_config(small("simulate", a)));
    const RunResult rb = run_experiment(make_config(small("simulate", b)));
    CHECK(ra.payload.dump() == rb.payload.dump());
    CHECK(ra.payload_sha256 == rb.payload_sha256);
    CHECK(ra.payload_sha256 == sha256_hex(ra.payload.dump()));
    CHECK(slurp(a / "ensemble_eps0.csv") == slurp(b / "ensemble_eps0.csv"));

    // The report carries the payload plus run metadata.
    const json report = json::parse(slurp(ra.report_path));
    CHECK(report["payload"] == ra.payload);
    CHECK(report["meta"]["payload_sha256"] == ra.payload_sha256);
    CHECK(report["meta"].contains("timestamp"));
    CHECK_FALSE(ra.payload["config"].contains("output.dir"));

    ConfigMap other = small("simulate", b);
    other["mc.seed"] = "99";
    CHECK(run_experiment(make_config(other)).payload_sha256 != ra.payload_sha256);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("payload does not depend on the worker count") {
    const fs::path dir = scratch("threads");
    const ExperimentConfig cfg = make_config(small("expand", dir));
    set_worker_count(1);
    const std::string one = run_experiment(cfg).payload_sha256;
    set_worker_count(4);
    const std::string four = run_experiment(cfg).payload_sha256;
    set_worker_count(0);
    CHECK(one == four);
    fs::remove_all(dir);
}

TEST_CASE("converge reports slopes per m with pass flags") {
    const fs::path dir = scratch("converge");
    const RunResult r = run_experiment(make_config(small("converge", dir)));
    const json& slopes = r.payload["results"]["slopes"];
    std::set<std::pair<std::string, int>> seen;
    for (const auto& s : slopes) {
        CHECK(s.contains("slope"));
        CHECK(s["pass"].is_boolean());
        CHECK(s["tolerance"].size() == 2);
        seen.insert({s["variant"].get<std::string>(), s["m"].get<int>()});
    }
    for (int m : {1, 2, 3}) {
        CHECK(seen.count({"stochastic", m}) == 1);
        CHECK(seen.count({"deterministic", m}) == 1);
    }
    // One named check per asserted criterion.
    std::set<std::string> names;
    for (const auto& c : r.checks) CHECK(names.insert(c.name).second);
    CHECK(names.count("remainder_slope") == 1);
    CHECK(names.count("bound_domination") == 1);
    for (int m : {1, 2, 3}) CHECK(fs::exists(dir / ("remainder_m" + std::to_string(m) + ".csv")));
    CHECK(slurp(dir / "remainder_m2.csv").rfind("eps,t,norm_R_empirical,norm_R_threeterm,bound\n", 0) == 0);

    const fs::path script = emit_plot_script(dir);
    const std::string text = slurp(script);
    CHECK(text.find("norm_R_empirical") != std::string::npos);
    CHECK(text.find("\"eps\"") != std::string::npos);
    CHECK(text.find("loglog") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("plot script needs results") {
    const fs::path dir = scratch("empty");
    fs::create_directories(dir);
    try {
        (void)emit_plot_script(dir);
        FAIL("empty directory accepted");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const auto& f : {"remainder_m", "forward_fan.csv", "martingale.json"}) CHECK(msg.find(f) != std::string::npos);
    }
    CHECK_THROWS_AS((void)emit_plot_script(scratch("missing")), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("musiela results give a three-panel script") {
    const fs::path dir = scratch("musiela");
    std::ostringstream log;
    // 200 martingale paths cannot separate eps > 0 from the eps = 0 band.
    const int code = run(make_config(small("musiela", dir)), log);
    CHECK(code == exit_invariant_failure);
    CHECK(log.str().find("hjm_martingale                 FAIL") != std::string::npos);
    CHECK(log.str().find("pricing_error_expansion        PASS") != std::string::npos);
    for (const auto& f : {"forward_fan.csv", "bond_surface.csv", "martingale.json", "pricing_error.json"})
        CHECK(fs::exists(dir / f));
    CHECK(slurp(dir / "bond_surface.csv").rfind("t,x,mean,sd\n", 0) == 0);
    const std::string text = slurp(emit_plot_script(dir));
    CHECK(text.find("subplots(1, 3") != std::string::npos);
    CHECK(text.find("bond_surface.csv") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("exit codes") {
    const fs::path dir = scratch("exit");
    std::ostringstream log;
    // Volatility tails that break admissibility are input errors.
    ConfigMap huge = small("simulate", dir);
    huge["noise.scale"] = "1e300";
    CHECK(run(make_config(huge), log) == exit_config_error);

    ConfigMap ok = {{"experiment", "resolvent-check"}, {"output.dir", dir.string()}};
    CHECK(run(make_config(ok), log) == exit_pass);
    fs::remove_all(dir);
}

TEST_CASE("command-line interface") {
    const std::string cli = SPDE_CLI_PATH;
    const fs::path dir = scratch("cli");
    fs::create_directories(dir);
    const std::string out = (dir / "stdout.txt").string();
    const std::string err = (dir / "stderr.txt").string();
    const std::string redirect = " >" + out + " 2>" + err;

    CHECK(shell(cli + " --print-defaults" + redirect) == 0);
    CHECK(slurp(out).find("expansion.eps_list = ") != std::string::npos);

    CHECK(shell(cli + " converge --eps-list 0.5,1.5 --out " + dir.string() + redirect) == exit_config_error);
    CHECK(slurp(err).find("eps in [0, 1]") != std::string::npos);

    CHECK(shell(cli + " frobnicate" + redirect) == exit_config_error);
    CHECK(shell(cli + " report --out " + (dir / "nothing").string() + redirect) == exit_config_error);

    const fs::path conf = dir / "small.conf";
    std::ofstream(conf) << "grid.x_min = -12\ngrid.x_max = 24\ngrid.dx = 0.0625\ntime.n_steps = 16\n";
    const fs::path res = dir / "res";
    CHECK(shell(cli + " simulate --config " + conf.string() + " --paths 4 --seed 5 --out " + res.string() + redirect) ==
          exit_pass);
    const json report = json::parse(slurp(res / "simulate.json"));
    CHECK(report["payload"]["config"]["mc.n_paths"] == "4");
    CHECK(report["payload"]["config"]["mc.seed"] == "5");
    CHECK(shell(cli + " report --out " + res.string() + redirect) == 0);
    CHECK(fs::exists(res / "plot.py"));
    fs::remove_all(dir);
}
