#include "mfc/app.hpp"

#include "mfc/config.hpp"
#include "mfc/plot.hpp"
#include "mfc/riccati.hpp"
#include "mfc/verification.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace mfc {

namespace {

namespace fs = std::filesystem;

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

void write_plots(const fs::path& dir, const TrajectoryBundle& bundle, const std::vector<double>& values,
                 const RiccatiTables* tables) {
    std::vector<double> times(bundle.grid.nodes());
    for (std::size_t k = 0; k < times.size(); ++k) times[k] = bundle.grid.node(k);

    {
        auto out = open_output(dir / "value.svg");
        write_line_plot(out, "Value along the optimal path", "t", "V(Y(t), t)", {{"V", times, values}});
    }
    if (tables) {
        const std::pair<const char*, const MatrixPath*> paths[] = {{"P", &tables->P}, {"Sigma", &tables->Sigma}};
        for (const auto& [name, path] : paths) {
            std::vector<Series> series;
            const auto n = static_cast<Eigen::Index>(tables->dim());
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index c = r; c < n; ++c) {
                    Series s{std::string(name) + "[" + std::to_string(r) + "," + std::to_string(c) + "]", times, {}};
                    for (std::size_t k = 0; k < times.size(); ++k) s.y.push_back(path->node(k)(r, c));
                    series.push_back(std::move(s));
                }
            }
            auto out = open_output(dir / ("riccati_" + std::string(name) + ".svg"));
            write_line_plot(out, std::string(name) + "(t)", "t", name, series);
        }
    }
    if (bundle.Y.front().dim() == 1) {
        std::vector<Series> series;
        for (std::size_t i = 0; i < bundle.Y.front().size(); ++i) {
            Series s{"particle " + std::to_string(i), times, {}};
            for (const auto& Y : bundle.Y) s.y.push_back(Y.points()(static_cast<Eigen::Index>(i), 0));
            series.push_back(std::move(s));
        }
        auto out = open_output(dir / "trajectories.svg");
        write_line_plot(out, "Optimal trajectories", "t", "Y(t)", series);
    }
}

int solve_impl(const SolveRequest& request, std::ostream& log, std::ostream& err) {
    ExperimentConfig cfg = load_config(request.config_path);
    if (request.grid) cfg.grid = *request.grid;
    if (request.tol) cfg.solver.tol = *request.tol;
    if (request.out_dir) cfg.out_dir = *request.out_dir;
    cfg.solver.force = request.force_inadmissible;
    if (cfg.grid < 2) {
        err << "config error: --grid must be at least 2\n";
        return kExitParseError;
    }

    const ControlProblem problem = cfg.problem();
    const TimeGrid grid(cfg.t0, problem.T, cfg.grid);
    const TrajectoryBundle bundle = solve_fixed_point(problem, cfg.X, grid, cfg.solver);

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        auto out = open_output(dir / "trajectory.csv");
        write_bundle_csv(out, bundle);
    }
    const std::vector<double> values = value_path(bundle, problem);
    {
        auto out = open_output(dir / "value_path.csv");
        out << "node_index,time,value\n";
        out.precision(17);
        for (std::size_t k = 0; k < values.size(); ++k) out << k << ',' << grid.node(k) << ',' << values[k] << '\n';
    }
    {
        auto out = open_output(dir / "gradient.csv");
        const std::size_t n = cfg.X.dim();
        out << "particle_index";
        for (std::size_t j = 0; j < n; ++j) out << ",x_" << j;
        for (std::size_t j = 0; j < n; ++j) out << ",grad_" << j;
        out << '\n';
        out.precision(17);
        const ParticleEnsemble& g = gradient_value(bundle);
        for (std::size_t i = 0; i < cfg.X.size(); ++i) {
            out << i;
            for (std::size_t j = 0; j < n; ++j) out << ',' << cfg.X.points()(i, j);
            for (std::size_t j = 0; j < n; ++j) out << ',' << g.points()(i, j);
            out << '\n';
        }
    }

    std::optional<RiccatiTables> tables;
    if (cfg.quadratic) {
        tables = solve_riccati(*cfg.quadratic, grid, 1.0);
        auto out = open_output(dir / "riccati.csv");
        write_riccati_csv(out, *tables);
    }
    {
        auto out = open_output(dir / "summary.csv");
        out << "quantity,value\n";
        out.precision(17);
        out << "model," << (cfg.quadratic ? "quadratic" : "kernel") << '\n';
        out << "particles," << cfg.X.size() << '\n';
        out << "dim," << cfg.X.dim() << '\n';
        out << "t0," << cfg.t0 << '\n';
        out << "T," << problem.T << '\n';
        out << "lambda," << problem.lambda << '\n';
        out << "c," << problem.c << '\n';
        out << "margin," << bundle.admissibility.margin << '\n';
        out << "contraction_bound," << bundle.admissibility.contraction_bound << '\n';
        out << "grid," << cfg.grid << '\n';
        out << "iterations," << bundle.iterations << '\n';
        out << "final_residual," << bundle.final_residual << '\n';
        out << "max_observed_ratio," << bundle.max_observed_ratio << '\n';
        out << "converged," << (bundle.converged ? 1 : 0) << '\n';
        out << "value," << values.front() << '\n';
        out << "gradient_norm," << norm(gradient_value(bundle)) << '\n';
        if (tables) out << "value_closed_form," << value_closed_form(*tables, cfg.X, 0) << '\n';
    }
    if (cfg.plots) write_plots(dir, bundle, values, tables ? &*tables : nullptr);

    log << "V(X, " << cfg.t0 << ") = " << values.front() << " after " << bundle.iterations << " iterations (residual "
        << bundle.final_residual << "); outputs in " << dir.string() << '\n';
    if (!bundle.converged) {
        err << "fixed point did not converge (forced solve); outputs written for inspection\n";
        return kExitNonconvergence;
    }
    return kExitOk;
}

}  // namespace

int run_solve(const SolveRequest& request, std::ostream& log, std::ostream& err) {
    try {
        return solve_impl(request, log, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitParseError;
    } catch (const InadmissibleError& e) {
        err << e.what() << " (use --force-inadmissible to solve anyway)\n";
        return kExitInadmissible;
    } catch (const NonconvergenceError& e) {
        err << e.what() << '\n';
        return kExitNonconvergence;
    }
}

int run_audit(const AuditRequest& request, std::ostream& log, std::ostream& err) {
    const auto& names = suite_names();
    if (std::find(names.begin(), names.end(), request.suite) == names.end()) {
        err << "unknown audit suite '" << request.suite << "'; expected one of:";
        for (const auto& n : names) err << ' ' << n;
        err << '\n';
        return kExitParseError;
    }
    SuiteOptions opts;
    if (request.grid) opts.grid = *request.grid;
    if (request.tol) opts.tol = *request.tol;
    opts.include_inadmissible = request.force_inadmissible;
    AuditReport report("", 0);
    try {
        report = run_suite(request.suite, request.seed, opts);
    } catch (const InadmissibleError& e) {
        err << e.what() << '\n';
        return kExitInadmissible;
    }

    const fs::path dir(request.out_dir);
    fs::create_directories(dir);
    {
        auto out = open_output(dir / ("audit_" + request.suite + ".csv"));
        report.write_csv(out);
    }
    {
        auto out = open_output(dir / ("audit_" + request.suite + ".txt"));
        report.write_summary(out);
    }
    report.write_summary(log);
    return report.all_passed() ? kExitOk : kExitChecksFailed;
}

}  // namespace mfc
