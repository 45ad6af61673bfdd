#pragma once

#include "mfc/functionals.hpp"
#include "mfc/measure_space.hpp"

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace mfc {

/// Running cost F, terminal cost F_T, control penalty lambda, horizon T and the
/// Lipschitz constant c that gates solvability.
struct ControlProblem {
    CostPtr running;
    CostPtr terminal;
    double lambda = 1.0;
    double T = 1.0;
    double c = 0.0;

    std::size_t dim() const { return running->dim(); }

    /// c is the maximum of the two functionals' constants.
    static ControlProblem from_costs(CostPtr running, CostPtr terminal, double lambda, double T);
    /// c is QuadraticModel::lipschitz_constant().
    static ControlProblem from_quadratic(const QuadraticModel& model);
};

struct Admissibility {
    /// lambda - c (T-t)(1 + T-t)
    double margin = 0.0;
    /// lambda - c T (1 + T), the margin measured over the full horizon.
    double full_horizon_margin = 0.0;
    /// c (T-t)(1 + T-t) / lambda, an upper bound on the fixed-point map's
    /// Lipschitz ratio.
    double contraction_bound = 0.0;
    bool admissible = false;
};

/// The remaining horizon T - t is used in the gate; it reduces to the usual
/// lambda > c T (1 + T) when t = 0.
Admissibility admissibility_check(double c, double lambda, double t, double T);

class InadmissibleError : public std::runtime_error {
public:
    InadmissibleError(const std::string& what, Admissibility a) : std::runtime_error(what), admissibility(a) {}
    Admissibility admissibility{};
};

class NonconvergenceError : public std::runtime_error {
public:
    NonconvergenceError(const std::string& what, double residual, double contraction, std::size_t iterations)
        : std::runtime_error(what), residual(residual), contraction(contraction), iterations(iterations) {}
    double residual;
    double contraction;
    std::size_t iterations;
};

struct SolverConfig {
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    /// Solve even when the admissibility gate fails; nonconvergence is then
    /// reported in the bundle instead of thrown.
    bool force = false;

    void validate() const;
};

/// Discretised optimal state Y, adjoint Z and control u = -Z/lambda on every
/// node of the grid, one ensemble per node.
struct TrajectoryBundle {
    TimeGrid grid;
    std::vector<ParticleEnsemble> Y{};
    std::vector<ParticleEnsemble> Z{};
    std::vector<ParticleEnsemble> u{};
    std::size_t iterations = 0;
    double final_residual = 0.0;
    /// Sup-over-nodes Hilbert norm of each fixed-point update.
    std::vector<double> residual_history{};
    /// Largest ratio residual[k+1]/residual[k]; 0 if fewer than two updates.
    double max_observed_ratio = 0.0;
    /// Geometric mean of the successive ratios.
    double geometric_factor = 0.0;
    Admissibility admissibility{};
    bool converged = false;

    double lambda = 1.0;
    double start() const { return grid.start(); }
    const ParticleEnsemble& initial() const { return Y.front(); }
};

/// Solves Y = K(Y) with
///   K(Y)(s) = X - (s-t)/lambda D F_T(Y(T)) - 1/lambda int_t^T D F(Y(r)) (min(s,r) - t) dr
/// by Picard iteration from Y(s) = X, integrals by the composite trapezoid rule.
/// Then Z(s) = int_s^T D F(Y(r)) dr + D F_T(Y(T)) and u = -Z/lambda.
TrajectoryBundle solve_fixed_point(const ControlProblem& problem, const ParticleEnsemble& X, const TimeGrid& grid,
                                   const SolverConfig& cfg = {});

/// V(X,t) = 1/(2 lambda) int ||Z||^2 + int F(Y) + F_T(Y(T)).
double value_function(const TrajectoryBundle& bundle, const ControlProblem& problem);

/// V(Y(s_k), s_k) on every node, by the dynamic programming principle.
std::vector<double> value_path(const TrajectoryBundle& bundle, const ControlProblem& problem);

/// D_X V(X,t) = Z(t).
const ParticleEnsemble& gradient_value(const TrajectoryBundle& bundle);

/// dV/dt(X,t) = lambda/2 ||u(t)||^2 - F(X).
double time_derivative_value(const TrajectoryBundle& bundle, const ControlProblem& problem);

/// dV/dt - 1/(2 lambda) ||D_X V||^2 + F(X) assembled from the two identities
/// above; zero up to rounding.
double hjb_identity_residual(const TrajectoryBundle& bundle, const ControlProblem& problem);

/// Integrates dY/ds = -Z/lambda forward from Y(t) with the trapezoid rule.
std::vector<ParticleEnsemble> forward_shooting(const TrajectoryBundle& bundle);

/// Path of a single initial point x moving in the law flow of a solved bundle.
struct ParticlePath {
    std::vector<Vector> y;
    std::vector<Vector> z;
    std::size_t iterations = 0;
    double final_residual = 0.0;
};

/// Solves the single-particle fixed point with the laws m(s) = L_{Y(s)} frozen
/// from the bundle.
ParticlePath particle_path(const TrajectoryBundle& bundle, const ControlProblem& problem, const Vector& x,
                           const SolverConfig& cfg = {});

/// u_{m,t}(x,t) = 1/(2 lambda) int |z|^2 + int F(y, m(s)) ds + F_T(y(T), m(T)),
/// evaluated along particle_path(x).
double particle_value(const TrajectoryBundle& bundle, const ControlProblem& problem, const Vector& x,
                      const SolverConfig& cfg = {});

/// CSV rows: node_index,time,particle_index,y_0..,z_0..,u_0..
void write_bundle_csv(std::ostream& out, const TrajectoryBundle& bundle);

}  // namespace mfc
