#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace mfc {

enum ExitCode : int {
    kExitOk = 0,
    kExitChecksFailed = 1,
    kExitParseError = 2,
    kExitInadmissible = 3,
    kExitNonconvergence = 4,
};

struct SolveRequest {
    std::string config_path;
    std::optional<std::size_t> grid;
    std::optional<double> tol;
    std::optional<std::string> out_dir;
    bool force_inadmissible = false;
};

/// Solves one experiment and writes trajectory.csv, value_path.csv,
/// gradient.csv, summary.csv, riccati.csv (quadratic models) and SVG plots.
int run_solve(const SolveRequest& request, std::ostream& log, std::ostream& err);

struct AuditRequest {
    std::string suite;
    std::uint64_t seed = 7;
    std::optional<std::size_t> grid;
    std::optional<double> tol;
    std::string out_dir = "mfc_out";
    bool force_inadmissible = false;
};

/// Runs a verification suite and writes audit_<suite>.csv and audit_<suite>.txt.
int run_audit(const AuditRequest& request, std::ostream& log, std::ostream& err);

}  // namespace mfc
