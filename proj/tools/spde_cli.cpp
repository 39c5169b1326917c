#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spde/config.hpp"
#include "spde/errors.hpp"
#include "spde/runner.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::string> out;
    std::optional<std::string> eps_list;
    std::optional<int> m;
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed of the noise generator");
    sub->add_option("--paths", o.paths, "Monte Carlo paths");
    sub->add_option("--out", o.out, "results directory");
    sub->add_option("--eps-list", o.eps_list, "comma-separated eps values");
    sub->add_option("--m", o.m, "expansion order (sets expansion.m and expansion.m_list)");
}

spde::ConfigMap entries_for(const std::string& experiment, const Overrides& o) {
    spde::ConfigMap e = o.config.empty() ? spde::ConfigMap{} : spde::read_config_file(o.config);
    if (!experiment.empty()) e["experiment"] = experiment;
    if (o.seed) e["mc.seed"] = std::to_string(*o.seed);
    if (o.paths) e["mc.n_paths"] = std::to_string(*o.paths);
    if (o.out) e["output.dir"] = *o.out;
    if (o.eps_list) e["expansion.eps_list"] = *o.eps_list;
    if (o.m) {
        e["expansion.m"] = std::to_string(*o.m);
        e["expansion.m_list"] = std::to_string(*o.m);
    }
    return e;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perturbation expansions for transport SPDEs and Musiela forward-rate curves"};
    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "print every configuration key with its default and exit");
    app.require_subcommand(0, 1);

    Overrides o;
    const char* experiments[] = {"simulate", "expand", "converge", "resolvent-check", "functional", "musiela"};
    for (const char* name : experiments) add_common(app.add_subcommand(name, std::string("run the ") + name + " experiment"), o);
    add_common(app.add_subcommand("report", "write plot.py for the results directory"), o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : spde::exit_config_error;
    }

    if (print_defaults) {
        std::cout << spde::default_config_text();
        return 0;
    }
    const auto subs = app.get_subcommands();
    if (subs.empty()) {
        std::cerr << app.help();
        return spde::exit_config_error;
    }
    const std::string name = subs.front()->get_name();

    try {
        if (name == "report") {
            const spde::ExperimentConfig cfg = spde::make_config(entries_for("", o));
            const auto script = spde::emit_plot_script(cfg.out_dir);
            std::cout << "wrote " << script.string() << '\n';
            return 0;
        }
        const spde::ExperimentConfig cfg = spde::make_config(entries_for(name, o));
        return spde::run(cfg, std::cout);
    } catch (const spde::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return spde::exit_config_error;
    }
}
