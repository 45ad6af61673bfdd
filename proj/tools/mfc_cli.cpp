#include "mfc/app.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Mean-field control solver: fixed-point trajectories, closed-form oracles and audits"};
    app.require_subcommand(1);

    mfc::SolveRequest solve;
    std::size_t solve_grid = 0;
    double solve_tol = 0.0;
    std::string solve_out;
    auto* solve_cmd = app.add_subcommand("solve", "Solve one experiment described by a config file");
    solve_cmd->add_option("config", solve.config_path, "Experiment config file")->required();
    solve_cmd->add_option("--grid", solve_grid, "Number of time intervals M")->check(CLI::Range(2, 1000000));
    solve_cmd->add_option("--tol", solve_tol, "Fixed-point tolerance")->check(CLI::PositiveNumber);
    solve_cmd->add_option("--out", solve_out, "Output directory");
    solve_cmd->add_flag("--force-inadmissible", solve.force_inadmissible,
                        "Solve even when lambda <= c T (1+T)");

    mfc::AuditRequest audit;
    std::size_t audit_grid = 0;
    double audit_tol = 0.0;
    auto* audit_cmd = app.add_subcommand("audit", "Run a verification suite");
    audit_cmd->add_option("suite", audit.suite, "hjb, oracle, estimates, monotonicity, gradients or all")->required();
    audit_cmd->add_option("--seed", audit.seed, "Random seed")->capture_default_str();
    audit_cmd->add_option("--grid", audit_grid, "Override the grid size of every suite")->check(CLI::Range(4, 1000000));
    audit_cmd->add_option("--tol", audit_tol, "Fixed-point tolerance")->check(CLI::PositiveNumber);
    audit_cmd->add_option("--out", audit.out_dir, "Output directory")->capture_default_str();
    audit_cmd->add_flag("--force-inadmissible", audit.force_inadmissible,
                        "Add an inadmissible instance to the estimates suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return mfc::kExitParseError;
    }

    if (solve_cmd->parsed()) {
        if (solve_grid) solve.grid = solve_grid;
        if (solve_tol > 0.0) solve.tol = solve_tol;
        if (!solve_out.empty()) solve.out_dir = solve_out;
        return mfc::run_solve(solve, std::cout, std::cerr);
    }
    if (audit_grid) audit.grid = audit_grid;
    if (audit_tol > 0.0) audit.tol = audit_tol;
    return mfc::run_audit(audit, std::cout, std::cerr);
}
