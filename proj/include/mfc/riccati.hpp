#pragma once

#include "mfc/functionals.hpp"
#include "mfc/measure_space.hpp"

#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace mfc {

/// Raised when a Riccati flow leaves the 1e12 norm ball before reaching the
/// start of the grid.
class RiccatiBlowUp : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Matrix samples at every half step of a TimeGrid: index 2k is node k,
/// index 2k+1 the midpoint of interval k.
struct MatrixPath {
    std::vector<Matrix> samples;

    const Matrix& node(std::size_t k) const { return samples.at(2 * k); }
    const Matrix& midpoint(std::size_t k) const { return samples.at(2 * k + 1); }
    const Matrix& half(std::size_t j) const { return samples.at(j); }
    std::size_t size() const { return samples.size(); }
};

/// P(t), Sigma(t; m1), Gamma(t; m1) = dSigma/dm1 and Theta(t; m1) = d2Sigma/dm1^2
/// for a quadratic model, with
///   P' = P^2/lambda - (Q + Qbar),                                   P(T) = QT + QbarT
///   Sigma' = (P Sigma + Sigma P)/lambda + m1 Sigma^2/lambda - Bm,   Sigma(T) = AT m1 - (QbarT ST + ST* QbarT)
///   Gamma' = (Gamma Abar + Abar Gamma)/lambda + Sigma^2/lambda - A, Gamma(T) = AT
///   Theta' = (Theta Abar + Abar Theta)/lambda + 2 (Gamma Sigma + Sigma Gamma)/lambda
///            + 2 m1 Gamma^2/lambda,                                 Theta(T) = 0
/// where A = S* Qbar S, Bm = A m1 - Qbar S - S* Qbar and Abar = P + m1 Sigma.
struct RiccatiTables {
    TimeGrid grid;
    double lambda = 1.0;
    double m1 = 1.0;
    QuadraticModel model;
    MatrixPath P, Sigma, Gamma, Theta;

    std::size_t dim() const { return model.dim(); }
    std::size_t nodes() const { return grid.nodes(); }
    double half_step() const { return 0.5 * grid.step(); }
    double half_time(std::size_t j) const;
};

/// Integrates the four matrix ODEs jointly backward from T with classical RK4
/// at step h/2, symmetrising after every step.
RiccatiTables solve_riccati(const QuadraticModel& model, const TimeGrid& grid, double m1 = 1.0);

/// V(X, t_k) = 1/2 E X* P X + 1/2 xbar* Sigma xbar; needs m1 = 1.
double value_closed_form(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k);

/// U(x, m, t_k) = 1/2 x* P x + xbar* Sigma x + 1/2 xbar* Gamma xbar
double master_scalar_field(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar);

/// P x + Sigma xbar at node k.
Vector master_vector_field(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar);

/// xbar' = -(P + m1 Sigma) xbar / lambda from node k0, RK4 on the node grid.
/// Entries before k0 are left at xbar0.
std::vector<Vector> mean_flow(const RiccatiTables& tables, const Vector& xbar0, std::size_t k0 = 0);

/// Closed-form optimal state path from X at node k0: fluctuations X - xbar
/// follow the time-ordered product of exp(-h avg(P)/lambda) and the mean
/// follows mean_flow. Needs m1 = 1.
std::vector<ParticleEnsemble> propagator(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k0 = 0);

/// Coefficients of the linearised scalar field u~(x, s) = x* a(s) + b(s) and
/// the perturbed mean xbar~ along a base mean path.
struct LinearizedFields {
    std::vector<Vector> xbar;
    std::vector<Vector> xbar_tilde;
    std::vector<Vector> a;
    std::vector<double> b;
    /// Per node, the x-coefficient and constant of the linearised backward
    /// equation evaluated with finite-difference time derivatives.
    std::vector<Vector> residual_linear;
    std::vector<double> residual_constant;
    double max_residual = 0.0;
};

/// a = Sigma xbar~ + m1~ Gamma xbar, b = xbar* Gamma xbar~ + 1/2 m1~ xbar* Theta xbar with
///   xbar~' = -(P + m1 Sigma) xbar~/lambda - m1~ (Sigma + m1 Gamma) xbar/lambda.
LinearizedFields linearized_fields(const RiccatiTables& tables, const Vector& xbar0, double m1_tilde,
                                   const Vector& xbar_tilde0);

/// Fourth-order finite-difference derivative of a sampled matrix path at half
/// step j (central inside, one-sided at the ends).
Matrix time_derivative(const MatrixPath& path, std::size_t j, double half_step);

/// Residual of the value function in the Bellman equation
///   dV/dt - |D_X V|^2/(2 lambda) + F(X) at node k.
double bellman_residual(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k);

/// Scalar master equation residual at node k:
///   dU/dt - (Sigma x + Gamma xbar).(P + m1 Sigma) xbar/lambda - |P x + Sigma xbar|^2/(2 lambda) + F(x, m).
double scalar_master_residual(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar);

/// Vector master equation residual at node k:
///   dU/dt - Sigma (P + m1 Sigma) xbar/lambda - P (P x + Sigma xbar)/lambda + (Q + Qbar) x + Bm xbar.
Vector vector_master_residual(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar);

/// Max over nodes of the Gamma equation residual with coefficient `sigma_sq_coeff`
/// on Sigma^2 (1/lambda for the derived form, 1/lambda^2 for the alternative).
double gamma_equation_residual(const RiccatiTables& tables, double sigma_sq_coeff);

/// CSV rows: node_index,time,matrix_name,row,col,value for P, Sigma, Gamma.
void write_riccati_csv(std::ostream& out, const RiccatiTables& tables);

}  // namespace mfc
