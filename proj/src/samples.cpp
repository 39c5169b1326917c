#include "spde/samples.hpp"

#include <cmath>
#include <numbers>

namespace spde::samples {

namespace {

double gauss(double x, double c, double s) { return std::exp(-(x - c) * (x - c) / (2.0 * s * s)); }

}  // namespace

std::vector<Sample> full_line_suite(const GridSpec& grid) {
    const double s = 1.5;
    std::vector<Sample> out;
    out.push_back({"gaussian_integral", GridFunction::sample(grid,
                                                             [s](double x) {
                                                                 return -s * std::sqrt(std::numbers::pi / 2.0) *
                                                                        std::erfc(x / (s * std::numbers::sqrt2));
                                                             },
                                                             0.0)});
    out.push_back({"tanh_step", GridFunction::sample(grid, [](double x) { return 1.0 + std::tanh(x - 2.0); }, 2.0)});
    out.push_back({"hermite", GridFunction::sample(grid, [](double x) { return x * std::exp(-x * x / 4.0); }, 0.0)});
    out.push_back({"modulated",
                   GridFunction::sample(grid, [](double x) { return gauss(x, 3.0, 1.5) * std::cos(x); }, 0.0)});
    out.push_back({"offset_bump", GridFunction::sample(grid, [](double x) { return 0.7 + gauss(x, -2.0, 1.2); }, 0.7)});
    return out;
}

std::vector<Sample> broad_suite(const GridSpec& grid) {
    const double s = 2.0;
    std::vector<Sample> out;
    out.push_back({"broad_gaussian_integral", GridFunction::sample(grid,
                                                                   [s](double x) {
                                                                       return -s * std::sqrt(std::numbers::pi / 2.0) *
                                                                              std::erfc(x / (s * std::numbers::sqrt2));
                                                                   },
                                                                   0.0)});
    out.push_back({"broad_bump", GridFunction::sample(grid, [](double x) { return 0.3 + gauss(x, -3.0, 2.0); }, 0.3)});
    out.push_back({"broad_hermite", GridFunction::sample(grid, [](double x) { return x * std::exp(-x * x / 8.0); }, 0.0)});
    return out;
}

std::vector<Sample> half_line_suite(const GridSpec& grid) {
    std::vector<Sample> out;
    out.push_back({"exp_plus_one", GridFunction::sample(grid, [](double x) { return std::exp(-x) + 1.0; }, 1.0)});
    out.push_back({"yield_curve", GridFunction::sample(grid, [](double x) { return 0.05 - 0.04 * std::exp(-x); }, 0.05)});
    out.push_back({"hump", GridFunction::sample(grid, [](double x) { return x * std::exp(-1.5 * x); }, 0.0)});
    out.push_back({"gaussian", GridFunction::sample(grid, [](double x) { return gauss(x, 2.0, 1.0); }, 0.0)});
    out.push_back({"sech_bump", GridFunction::sample(grid,
                                                     [](double x) {
                                                         const double c = 1.0 / std::cosh(x - 3.0);
                                                         return 0.02 + 0.5 * c * c;
                                                     },
                                                     0.02)});
    return out;
}

ProblemSpec transport_problem(const TransportConfig& cfg) {
    const GridSpec grid = GridSpec::with_spacing(cfg.x_min, cfg.x_max, cfg.dx);
    const WeightedSpace sp(cfg.w, grid);
    const TimeGrid tg = TimeGrid::make(cfg.T, cfg.n_steps);
    const double s = 1.5;
    const GridFunction u0 = GridFunction::sample(
        grid, [s](double x) { return -s * std::sqrt(std::numbers::pi / 2.0) * std::erfc(x / (s * std::numbers::sqrt2)); },
        0.0);
    const GridFunction bump = GridFunction::sample(grid, [](double x) { return 0.5 * gauss(x, 1.0, 1.5); }, 0.0);
    std::vector<GridFunction> alpha;
    for (std::size_t j = 0; j < tg.n_steps; ++j) alpha.push_back(std::exp(-tg.t(j)) * bump);
    NoiseModel noise;
    if (cfg.stochastic) {
        const double a = cfg.noise_scale;
        noise = NoiseModel::constant(
            {GridFunction::sample(grid, [a](double x) { return a * 0.5 * gauss(x, 0.5, 1.5); }, 0.0),
             GridFunction::sample(grid, [a](double x) { return a * 0.3 * (x / 2.0) * gauss(x, 0.0, 2.0); }, 0.0)},
            sp);
    }
    const Perturbation pert = cfg.shifted ? Perturbation::shifted(cfg.w) : Perturbation::plain(cfg.w);
    ProblemSpec ps{u0, std::move(alpha), std::move(noise), cfg.m, cfg.p, tg, sp, pert, std::nullopt};
    ps.validate();
    return ps;
}

HJMModel hjm_model(const HJMConfig& cfg) {
    const GridSpec half = GridSpec::with_spacing(0.0, cfg.x_max, cfg.dx);
    HJMModel model;
    model.u0 = GridFunction::sample(half, [](double x) { return 0.05 - 0.04 * std::exp(-x); }, 0.05);
    const double a1 = cfg.a1;
    const double a2 = cfg.a2;
    if (a1 != 0.0) model.sigmas.push_back(GridFunction::sample(half, [a1](double x) { return a1 * std::exp(-x); }, 0.0));
    if (a2 != 0.0) {
        model.sigmas.push_back(GridFunction::sample(half, [a2](double x) { return a2 * x * std::exp(-x); }, 0.0));
    }
    model.m = cfg.m;
    model.w = cfg.w;
    model.validate();
    return model;
}

GridSpec hjm_full_grid(const HJMConfig& cfg) { return GridSpec::with_spacing(cfg.x_min_full, cfg.x_max, cfg.dx); }

TimeGrid hjm_time_grid(const HJMConfig& cfg) { return TimeGrid::make(cfg.T, cfg.n_steps); }

}  // namespace spde::samples
