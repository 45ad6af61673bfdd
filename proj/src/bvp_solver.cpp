#include "mfc/bvp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace mfc {

ControlProblem ControlProblem::from_costs(CostPtr running, CostPtr terminal, double lambda, double T) {
    if (!running || !terminal) throw std::invalid_argument("control problem needs both cost functionals");
    if (running->dim() != terminal->dim()) throw ShapeError("running and terminal costs differ in dimension");
    const double c = std::max(running->lipschitz_constant(), terminal->lipschitz_constant());
    return {std::move(running), std::move(terminal), lambda, T, c};
}

ControlProblem ControlProblem::from_quadratic(const QuadraticModel& model) {
    model.validate();
    return {std::make_shared<QuadraticCost>(model.running()), std::make_shared<QuadraticCost>(model.terminal()),
            model.lambda, model.T, model.lipschitz_constant()};
}

Admissibility admissibility_check(double c, double lambda, double t, double T) {
    if (!(T > t) || t < 0.0) throw std::invalid_argument("admissibility needs T > t >= 0");
    if (!(lambda > 0.0)) throw std::invalid_argument("admissibility needs lambda > 0");
    const double tau = T - t;
    Admissibility a;
    a.margin = lambda - c * tau * (1.0 + tau);
    a.full_horizon_margin = lambda - c * T * (1.0 + T);
    a.contraction_bound = c * tau * (1.0 + tau) / lambda;
    a.admissible = a.margin > 0.0;
    return a;
}

void SolverConfig::validate() const {
    if (!(tol > 0.0)) throw std::invalid_argument("solver tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("solver max_iter must be >= 1");
}

namespace {

// Applies the integral form of the two-point problem to node values g_k of
// D F along the path and gT of D F_T at the end:
//   out_k = x0 - tau_k/lambda gT - 1/lambda sum_j w_j g_j (min(s_k, s_j) - t)
// with trapezoid weights w_j. The kernel is linear between nodes, so the sum
// is split into a prefix and a tail and costs O(M).
void apply_integral_map(const TimeGrid& grid, double lambda, const Matrix& x0, const std::vector<Matrix>& g,
                        const Matrix& gT, std::vector<Matrix>& out) {
    const std::size_t M = grid.intervals();
    const double h = grid.step();
    auto weight = [&](std::size_t j) { return (j == 0 || j == M) ? 0.5 * h : h; };
    auto tau = [&](std::size_t k) { return grid.node(k) - grid.start(); };

    std::vector<Matrix> tail(M + 1);
    tail[M] = Matrix::Zero(x0.rows(), x0.cols());
    for (std::size_t k = M; k-- > 0;) {
        tail[k] = tail[k + 1] + weight(k + 1) * g[k + 1];
    }
    Matrix prefix = Matrix::Zero(x0.rows(), x0.cols());
    out.resize(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        prefix += (weight(k) * tau(k)) * g[k];
        out[k] = x0 - (tau(k) / lambda) * gT - (1.0 / lambda) * (prefix + tau(k) * tail[k]);
    }
}

// Z_k = gT + int_{s_k}^T g by the trapezoid rule on [s_k, T].
std::vector<Matrix> adjoint_from_gradients(const TimeGrid& grid, const std::vector<Matrix>& g, const Matrix& gT) {
    const std::size_t M = grid.intervals();
    const double h = grid.step();
    std::vector<Matrix> Z(M + 1);
    Z[M] = gT;
    for (std::size_t k = M; k-- > 0;) {
        Z[k] = Z[k + 1] + (0.5 * h) * (g[k] + g[k + 1]);
    }
    return Z;
}

double hilbert_norm(const Matrix& m) { return m.norm() / std::sqrt(static_cast<double>(m.rows())); }

double sup_distance(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        worst = std::max(worst, hilbert_norm(a[k] - b[k]));
    }
    return worst;
}

void summarise_ratios(TrajectoryBundle& bundle) {
    const auto& r = bundle.residual_history;
    double worst = 0.0;
    double log_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k + 1 < r.size(); ++k) {
        if (r[k] <= 0.0) break;
        const double ratio = r[k + 1] / r[k];
        worst = std::max(worst, ratio);
        if (ratio > 0.0) {
            log_sum += std::log(ratio);
            ++count;
        }
    }
    bundle.max_observed_ratio = worst;
    bundle.geometric_factor = count ? std::exp(log_sum / static_cast<double>(count)) : 0.0;
}

}  // namespace

TrajectoryBundle solve_fixed_point(const ControlProblem& problem, const ParticleEnsemble& X, const TimeGrid& grid,
                                   const SolverConfig& cfg) {
    cfg.validate();
    if (X.dim() != problem.dim()) throw ShapeError("initial ensemble dimension does not match the problem");
    if (std::abs(grid.horizon() - problem.T) > 1e-12 * (1.0 + std::abs(problem.T))) {
        throw std::invalid_argument("time grid must end at the problem horizon");
    }
    const Admissibility adm = admissibility_check(problem.c, problem.lambda, grid.start(), problem.T);
    if (!adm.admissible && !cfg.force) {
        std::ostringstream msg;
        msg << "inadmissible problem: lambda - c (T-t)(1+T-t) = " << adm.margin << " <= 0";
        throw InadmissibleError(msg.str(), adm);
    }

    const std::size_t M = grid.intervals();
    const Matrix& x0 = X.points();
    std::vector<Matrix> Y(M + 1, x0);
    std::vector<Matrix> next;
    std::vector<Matrix> g(M + 1);

    TrajectoryBundle bundle{.grid = grid};
    bundle.lambda = problem.lambda;
    bundle.admissibility = adm;

    auto gradients = [&](const std::vector<Matrix>& path, Matrix& gT) {
        for (std::size_t k = 0; k <= M; ++k) {
            g[k] = problem.running->gradient(ParticleEnsemble(path[k])).points();
        }
        gT = problem.terminal->gradient(ParticleEnsemble(path[M])).points();
    };

    Matrix gT;
    for (std::size_t iter = 1; iter <= cfg.max_iter; ++iter) {
        gradients(Y, gT);
        apply_integral_map(grid, problem.lambda, x0, g, gT, next);
        const double residual = sup_distance(next, Y);
        Y.swap(next);
        bundle.residual_history.push_back(residual);
        bundle.iterations = iter;
        bundle.final_residual = residual;
        if (!std::isfinite(residual)) break;
        if (residual <= cfg.tol) {
            bundle.converged = true;
            break;
        }
    }
    summarise_ratios(bundle);

    if (!bundle.converged && !cfg.force) {
        std::ostringstream msg;
        msg << "fixed point did not converge in " << bundle.iterations << " iterations; last residual "
            << bundle.final_residual << ", contraction bound " << adm.contraction_bound;
        throw NonconvergenceError(msg.str(), bundle.final_residual, adm.contraction_bound, bundle.iterations);
    }

    gradients(Y, gT);
    const std::vector<Matrix> Z = adjoint_from_gradients(grid, g, gT);
    bundle.Y.reserve(M + 1);
    bundle.Z.reserve(M + 1);
    bundle.u.reserve(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        bundle.Y.emplace_back(Y[k]);
        bundle.Z.emplace_back(Z[k]);
        bundle.u.emplace_back((-1.0 / problem.lambda) * Z[k]);
    }
    // The initial node is X by construction; keep it bit-identical.
    bundle.Y[0] = X;
    return bundle;
}

std::vector<double> value_path(const TrajectoryBundle& bundle, const ControlProblem& problem) {
    const std::size_t M = bundle.grid.intervals();
    const double h = bundle.grid.step();
    std::vector<double> running(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        running[k] = 0.5 / problem.lambda * bundle.Z[k].second_moment() + problem.running->value(bundle.Y[k]);
    }
    std::vector<double> V(M + 1);
    V[M] = problem.terminal->value(bundle.Y[M]);
    for (std::size_t k = M; k-- > 0;) {
        V[k] = V[k + 1] + 0.5 * h * (running[k] + running[k + 1]);
    }
    return V;
}

double value_function(const TrajectoryBundle& bundle, const ControlProblem& problem) {
    return value_path(bundle, problem).front();
}

const ParticleEnsemble& gradient_value(const TrajectoryBundle& bundle) { return bundle.Z.front(); }

double time_derivative_value(const TrajectoryBundle& bundle, const ControlProblem& problem) {
    return 0.5 * problem.lambda * bundle.u.front().second_moment() - problem.running->value(bundle.initial());
}

double hjb_identity_residual(const TrajectoryBundle& bundle, const ControlProblem& problem) {
    return time_derivative_value(bundle, problem) - 0.5 / problem.lambda * gradient_value(bundle).second_moment() +
           problem.running->value(bundle.initial());
}

std::vector<ParticleEnsemble> forward_shooting(const TrajectoryBundle& bundle) {
    const std::size_t M = bundle.grid.intervals();
    const double h = bundle.grid.step();
    std::vector<ParticleEnsemble> out;
    out.reserve(M + 1);
    out.push_back(bundle.Y.front());
    for (std::size_t k = 0; k < M; ++k) {
        out.push_back(out.back() - (0.5 * h / bundle.lambda) * (bundle.Z[k] + bundle.Z[k + 1]));
    }
    return out;
}

ParticlePath particle_path(const TrajectoryBundle& bundle, const ControlProblem& problem, const Vector& x,
                           const SolverConfig& cfg) {
    cfg.validate();
    if (static_cast<std::size_t>(x.size()) != problem.dim()) throw ShapeError("particle dimension mismatch");
    const TimeGrid& grid = bundle.grid;
    const std::size_t M = grid.intervals();
    const Matrix x0 = x.transpose();
    std::vector<Matrix> y(M + 1, x0);
    std::vector<Matrix> next;
    std::vector<Matrix> g(M + 1);
    Matrix gT;

    auto gradients = [&](const std::vector<Matrix>& path) {
        for (std::size_t k = 0; k <= M; ++k) {
            g[k] = problem.running->point_gradient(path[k].row(0).transpose(), bundle.Y[k]).transpose();
        }
        gT = problem.terminal->point_gradient(path[M].row(0).transpose(), bundle.Y[M]).transpose();
    };

    ParticlePath out;
    bool converged = false;
    for (std::size_t iter = 1; iter <= cfg.max_iter; ++iter) {
        gradients(y);
        apply_integral_map(grid, problem.lambda, x0, g, gT, next);
        double residual = 0.0;
        for (std::size_t k = 0; k <= M; ++k) residual = std::max(residual, (next[k] - y[k]).norm());
        y.swap(next);
        out.iterations = iter;
        out.final_residual = residual;
        if (residual <= cfg.tol) {
            converged = true;
            break;
        }
    }
    if (!converged && !cfg.force) {
        throw NonconvergenceError("single-particle fixed point did not converge", out.final_residual,
                                  0.5 * bundle.admissibility.contraction_bound, out.iterations);
    }
    gradients(y);
    const std::vector<Matrix> z = adjoint_from_gradients(grid, g, gT);
    out.y.reserve(M + 1);
    out.z.reserve(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        out.y.emplace_back(y[k].row(0).transpose());
        out.z.emplace_back(z[k].row(0).transpose());
    }
    return out;
}

double particle_value(const TrajectoryBundle& bundle, const ControlProblem& problem, const Vector& x,
                      const SolverConfig& cfg) {
    const ParticlePath path = particle_path(bundle, problem, x, cfg);
    const std::size_t M = bundle.grid.intervals();
    const double h = bundle.grid.step();
    auto integrand = [&](std::size_t k) {
        return 0.5 / problem.lambda * path.z[k].squaredNorm() +
               problem.running->functional_derivative(path.y[k], bundle.Y[k]);
    };
    double total = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        total += 0.5 * h * (integrand(k) + integrand(k + 1));
    }
    return total + problem.terminal->functional_derivative(path.y[M], bundle.Y[M]);
}

void write_bundle_csv(std::ostream& out, const TrajectoryBundle& bundle) {
    const std::size_t n = bundle.Y.front().dim();
    out << "node_index,time,particle_index";
    for (const char* p : {"y", "z", "u"}) {
        for (std::size_t j = 0; j < n; ++j) out << ',' << p << '_' << j;
    }
    out << '\n';
    const auto old_precision = out.precision(17);
    for (std::size_t k = 0; k < bundle.Y.size(); ++k) {
        const double t = bundle.grid.node(k);
        for (std::size_t i = 0; i < bundle.Y[k].size(); ++i) {
            out << k << ',' << t << ',' << i;
            for (const auto* path : {&bundle.Y, &bundle.Z, &bundle.u}) {
                const auto& row = (*path)[k].points().row(static_cast<Eigen::Index>(i));
                for (Eigen::Index j = 0; j < row.size(); ++j) out << ',' << row(j);
            }
            out << '\n';
        }
    }
    out.precision(old_precision);
}

}  // namespace mfc
