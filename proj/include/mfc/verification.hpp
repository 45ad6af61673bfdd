#pragma once

#include "mfc/bvp_solver.hpp"
#include "mfc/functionals.hpp"
#include "mfc/riccati.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mfc {

enum class Relation { AtMost, AtLeast, Report };

/// One audited inequality: `observed relation bound`. Report rows always pass.
struct Check {
    std::string suite;
    std::string instance;
    std::string name;
    std::string claim;
    Relation relation = Relation::AtMost;
    double bound = 0.0;
    double observed = 0.0;
    bool pass = true;
};

Check make_check(std::string name, std::string claim, Relation relation, double bound, double observed);

class AuditReport {
public:
    AuditReport(std::string suite, std::uint64_t seed) : suite_(std::move(suite)), seed_(seed) {}

    void add(Check check);
    /// Appends checks, stamping suite and instance.
    void add_all(const std::string& instance, std::vector<Check> checks);
    void merge(const AuditReport& other);

    const std::vector<Check>& checks() const { return checks_; }
    const std::string& suite() const { return suite_; }
    std::uint64_t seed() const { return seed_; }
    bool all_passed() const;
    std::size_t failures() const;

    /// suite,instance,check,claim,relation,bound,observed,pass
    void write_csv(std::ostream& out) const;
    void write_summary(std::ostream& out) const;

private:
    std::string suite_;
    std::uint64_t seed_;
    std::vector<Check> checks_;
};

/// Runs body(i) for i in [0, count) on a pool of threads. Each index must write
/// only its own output slot; the first exception thrown is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// A problem with its initial state and start time. `model` is set for
/// quadratic problems, which have a closed-form oracle.
struct AuditInstance {
    std::string label;
    ControlProblem problem;
    ParticleEnsemble X;
    double t = 0.0;
    std::optional<QuadraticModel> model;
};

/// Throws InadmissibleError unless lambda > c (T-t)(1 + T-t).
void require_admissible(const ControlProblem& problem, double t);

Matrix random_psd(std::mt19937_64& rng, std::size_t n, double scale);
ParticleEnsemble random_ensemble(std::mt19937_64& rng, std::size_t N, std::size_t n, double scale);

/// Random quadratic model with lambda set so that c T (1+T)/lambda = contraction.
/// With `monotone`, S and ST are drawn near -alpha I and rejected until the mean
/// couplings B and BT are positive semidefinite.
QuadraticModel random_quadratic_model(std::mt19937_64& rng, std::size_t n, double T, double contraction,
                                      bool monotone = false);

AuditInstance random_quadratic_instance(std::mt19937_64& rng, std::size_t max_dim, std::size_t max_particles,
                                        double contraction);
AuditInstance random_kernel_instance(std::mt19937_64& rng, std::size_t max_dim, std::size_t max_particles,
                                     double contraction);

/// The Q = 1, lambda = 1, T = 0.5 scalar instance on a fixed four-point ensemble.
AuditInstance scalar_tanh_instance();

struct SuiteOptions {
    /// Overrides the grid size of every suite when nonzero.
    std::size_t grid = 0;
    double tol = 1e-10;
    /// Appends an inadmissible instance to the estimates suite (which refuses it).
    bool include_inadmissible = false;
};

/// Time-derivative residual of the value function at (X, t):
///   (V(t+h) - V(t-h))/2h - |Z(t)|^2/(2 lambda) + F(X)
/// with three solves on M-interval grids.
double hjb_fd_residual(const AuditInstance& inst, double h, std::size_t M, double tol);

/// Generic-solver residual of the vector master equation at a test point x,
/// with central differences of step h in time and eps in space and law.
double vector_master_fd_residual(const AuditInstance& inst, const Vector& x, double h, double eps, std::size_t M,
                                 double tol);

std::vector<Check> hjb_checks(const AuditInstance& inst, std::mt19937_64& rng, std::size_t M, double tol);
/// Residuals at time steps 0.04, 0.02, 0.01 and the observed order
/// log2 |r1 - r2| / |r2 - r3|.
std::vector<Check> hjb_order_checks(const AuditInstance& inst, std::size_t M, double tol);
std::vector<Check> master_checks(const AuditInstance& inst, std::mt19937_64& rng, std::size_t samples,
                                 std::size_t M);
std::vector<Check> oracle_checks(const AuditInstance& inst, std::size_t M, double tol);
/// The Q = 1, lambda = 1, T = 0.5 case against tanh and cosh.
std::vector<Check> analytic_scalar_checks(std::size_t M, double tol);
std::vector<Check> contraction_checks(const TrajectoryBundle& bundle);
std::vector<Check> estimate_checks(const AuditInstance& inst, const ParticleEnsemble& X2, std::mt19937_64& rng,
                                   std::size_t M, double tol);
std::vector<Check> monotonicity_checks(const QuadraticModel& model, const ParticleEnsemble& m1,
                                       const ParticleEnsemble& m2, std::size_t M, double tol);
std::vector<Check> gradient_checks(const CostFunctional& F, const ParticleEnsemble& X, const ParticleEnsemble& H);

AuditReport hjb_suite(std::uint64_t seed, const SuiteOptions& opts = {});
AuditReport oracle_suite(std::uint64_t seed, const SuiteOptions& opts = {});
AuditReport estimates_suite(std::uint64_t seed, const SuiteOptions& opts = {});
AuditReport monotonicity_suite(std::uint64_t seed, const SuiteOptions& opts = {});
AuditReport gradients_suite(std::uint64_t seed, const SuiteOptions& opts = {});

const std::vector<std::string>& suite_names();
/// Dispatches on hjb, oracle, estimates, monotonicity, gradients or all.
/// Throws std::invalid_argument for any other name.
AuditReport run_suite(const std::string& name, std::uint64_t seed, const SuiteOptions& opts = {});

}  // namespace mfc
