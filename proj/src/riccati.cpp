#include "mfc/riccati.hpp"

#include <array>
#include <cmath>
#include <ostream>
#include <sstream>

namespace mfc {

namespace {

constexpr double kBlowUpNorm = 1e12;

struct RiccatiState {
    Matrix P, Sigma, Gamma, Theta;
};

RiccatiState axpy(const RiccatiState& y, double a, const RiccatiState& k) {
    return {y.P + a * k.P, y.Sigma + a * k.Sigma, y.Gamma + a * k.Gamma, y.Theta + a * k.Theta};
}

Matrix sym(const Matrix& A) { return 0.5 * (A + A.transpose()); }

class RiccatiRhs {
public:
    RiccatiRhs(const QuadraticModel& model, double m1) : lambda_(model.lambda), m1_(m1) {
        const QuadraticCost run = model.running();
        local_ = run.local();
        A_ = run.interaction();
        Bm_ = A_ * m1 - run.Qbar() * run.S() - run.S().transpose() * run.Qbar();
    }

    RiccatiState operator()(const RiccatiState& y) const {
        const double il = 1.0 / lambda_;
        const Matrix Abar = y.P + m1_ * y.Sigma;
        const Matrix GS = y.Gamma * y.Sigma;
        RiccatiState d;
        d.P = il * y.P * y.P - local_;
        d.Sigma = il * (y.P * y.Sigma + y.Sigma * y.P) + (m1_ * il) * y.Sigma * y.Sigma - Bm_;
        d.Gamma = il * (y.Gamma * Abar + Abar * y.Gamma) + il * y.Sigma * y.Sigma - A_;
        d.Theta = il * (y.Theta * Abar + Abar * y.Theta) + (2.0 * il) * (GS + GS.transpose()) +
                  (2.0 * m1_ * il) * y.Gamma * y.Gamma;
        return d;
    }

private:
    double lambda_, m1_;
    Matrix local_, A_, Bm_;
};

Matrix expm_symmetric(const Matrix& A) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym(A));
    return es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() *
           es.eigenvectors().transpose();
}

template <class T>
T five_point_derivative(const std::vector<T>& f, std::size_t j, double d) {
    const std::size_t J = f.size() - 1;
    if (J < 4) throw std::invalid_argument("finite-difference derivative needs at least 5 samples");
    const double s = 1.0 / (12.0 * d);
    if (j == 0) return s * (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]);
    if (j == 1) return s * (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]);
    if (j == J - 1) return s * (3.0 * f[J] + 10.0 * f[J - 1] - 18.0 * f[J - 2] + 6.0 * f[J - 3] - f[J - 4]);
    if (j == J) return s * (25.0 * f[J] - 48.0 * f[J - 1] + 36.0 * f[J - 2] - 16.0 * f[J - 3] + 3.0 * f[J - 4]);
    return s * (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]);
}

void check_node(const RiccatiTables& tables, std::size_t k) {
    if (k >= tables.nodes()) {
        throw std::out_of_range("node index " + std::to_string(k) + " outside grid of " +
                                std::to_string(tables.nodes()) + " nodes");
    }
}

void require_unit_mass(const RiccatiTables& tables, const char* what) {
    if (tables.m1 != 1.0) throw std::invalid_argument(std::string(what) + " needs tables solved at m1 = 1");
}

Matrix mean_coupling_at(const QuadraticModel& model, double m1) {
    const QuadraticCost run = model.running();
    return run.interaction() * m1 - run.Qbar() * run.S() - run.S().transpose() * run.Qbar();
}

}  // namespace

double RiccatiTables::half_time(std::size_t j) const {
    if (j >= 2 * grid.intervals()) return grid.horizon();
    return grid.start() + half_step() * static_cast<double>(j);
}

RiccatiTables solve_riccati(const QuadraticModel& model, const TimeGrid& grid, double m1) {
    model.validate();
    if (std::abs(grid.horizon() - model.T) > 1e-12 * (1.0 + model.T)) {
        throw std::invalid_argument("time grid must end at the model horizon");
    }
    const QuadraticCost term = model.terminal();
    const std::size_t J = 2 * grid.intervals();
    const double d = 0.5 * grid.step();
    const RiccatiRhs rhs(model, m1);

    RiccatiState y;
    y.P = term.local();
    y.Gamma = term.interaction();
    y.Sigma = y.Gamma * m1 - (term.Qbar() * term.S() + term.S().transpose() * term.Qbar());
    y.Theta = Matrix::Zero(y.P.rows(), y.P.cols());

    RiccatiTables out{grid, model.lambda, m1, model, {}, {}, {}, {}};
    for (auto* path : {&out.P, &out.Sigma, &out.Gamma, &out.Theta}) path->samples.resize(J + 1);
    auto store = [&](std::size_t j) {
        out.P.samples[j] = y.P;
        out.Sigma.samples[j] = y.Sigma;
        out.Gamma.samples[j] = y.Gamma;
        out.Theta.samples[j] = y.Theta;
    };
    store(J);
    for (std::size_t j = J; j-- > 0;) {
        const RiccatiState k1 = rhs(y);
        const RiccatiState k2 = rhs(axpy(y, -0.5 * d, k1));
        const RiccatiState k3 = rhs(axpy(y, -0.5 * d, k2));
        const RiccatiState k4 = rhs(axpy(y, -d, k3));
        const double w = -d / 6.0;
        y.P = sym(y.P + w * (k1.P + 2.0 * k2.P + 2.0 * k3.P + k4.P));
        y.Sigma = sym(y.Sigma + w * (k1.Sigma + 2.0 * k2.Sigma + 2.0 * k3.Sigma + k4.Sigma));
        y.Gamma = sym(y.Gamma + w * (k1.Gamma + 2.0 * k2.Gamma + 2.0 * k3.Gamma + k4.Gamma));
        y.Theta = sym(y.Theta + w * (k1.Theta + 2.0 * k2.Theta + 2.0 * k3.Theta + k4.Theta));
        const double worst = std::max({y.P.norm(), y.Sigma.norm(), y.Gamma.norm(), y.Theta.norm()});
        if (!(worst <= kBlowUpNorm)) {
            std::ostringstream msg;
            msg << "Riccati flow escaped at t = " << out.half_time(j) << " (norm " << worst
                << "); horizon too long";
            throw RiccatiBlowUp(msg.str());
        }
        store(j);
    }
    return out;
}

Matrix time_derivative(const MatrixPath& path, std::size_t j, double half_step) {
    return five_point_derivative(path.samples, j, half_step);
}

double value_closed_form(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k) {
    require_unit_mass(tables, "value_closed_form");
    check_node(tables, k);
    if (X.dim() != tables.dim()) throw ShapeError("ensemble dimension does not match the model");
    const Vector xbar = X.mean();
    const Matrix& P = tables.P.node(k);
    const double quad = (X.points() * P).cwiseProduct(X.points()).sum() / static_cast<double>(X.size());
    return 0.5 * quad + 0.5 * xbar.dot(tables.Sigma.node(k) * xbar);
}

double master_scalar_field(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar) {
    check_node(tables, k);
    return 0.5 * x.dot(tables.P.node(k) * x) + xbar.dot(tables.Sigma.node(k) * x) +
           0.5 * xbar.dot(tables.Gamma.node(k) * xbar);
}

Vector master_vector_field(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar) {
    check_node(tables, k);
    return tables.P.node(k) * x + tables.Sigma.node(k) * xbar;
}

std::vector<Vector> mean_flow(const RiccatiTables& tables, const Vector& xbar0, std::size_t k0) {
    check_node(tables, k0);
    if (static_cast<std::size_t>(xbar0.size()) != tables.dim()) throw ShapeError("mean dimension mismatch");
    const double h = tables.grid.step();
    const double il = 1.0 / tables.lambda;
    auto drift = [&](std::size_t j, const Vector& v) -> Vector {
        return -il * (tables.P.half(j) + tables.m1 * tables.Sigma.half(j)) * v;
    };
    std::vector<Vector> out(tables.nodes(), xbar0);
    for (std::size_t k = k0; k + 1 < tables.nodes(); ++k) {
        const Vector& v = out[k];
        const Vector k1 = drift(2 * k, v);
        const Vector k2 = drift(2 * k + 1, v + 0.5 * h * k1);
        const Vector k3 = drift(2 * k + 1, v + 0.5 * h * k2);
        const Vector k4 = drift(2 * k + 2, v + h * k3);
        out[k + 1] = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
}

std::vector<ParticleEnsemble> propagator(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k0) {
    require_unit_mass(tables, "propagator");
    check_node(tables, k0);
    if (X.dim() != tables.dim()) throw ShapeError("ensemble dimension does not match the model");
    const double h = tables.grid.step();
    const std::vector<Vector> xbar = mean_flow(tables, X.mean(), k0);
    Matrix fluct = X.points();
    fluct.rowwise() -= X.mean().transpose();

    std::vector<ParticleEnsemble> out(tables.nodes(), X);
    for (std::size_t k = k0; k + 1 < tables.nodes(); ++k) {
        const Matrix avg = (tables.P.node(k) + 4.0 * tables.P.midpoint(k) + tables.P.node(k + 1)) / 6.0;
        fluct = fluct * expm_symmetric((-h / tables.lambda) * avg);
        Matrix y = fluct;
        y.rowwise() += xbar[k + 1].transpose();
        out[k + 1] = ParticleEnsemble(std::move(y));
    }
    return out;
}

LinearizedFields linearized_fields(const RiccatiTables& tables, const Vector& xbar0, double m1_tilde,
                                   const Vector& xbar_tilde0) {
    const auto n = static_cast<Eigen::Index>(tables.dim());
    if (xbar0.size() != n || xbar_tilde0.size() != n) throw ShapeError("mean dimension mismatch");
    const double h = tables.grid.step();
    const double il = 1.0 / tables.lambda;
    const double m1 = tables.m1;
    const std::size_t K = tables.nodes();

    auto abar = [&](std::size_t j) -> Matrix { return tables.P.half(j) + m1 * tables.Sigma.half(j); };
    auto am = [&](std::size_t j) -> Matrix { return tables.Sigma.half(j) + m1 * tables.Gamma.half(j); };
    // Joint state (xbar, xbar~) so the forcing term is available at midpoints.
    auto drift = [&](std::size_t j, const Vector& v, const Vector& vt) -> std::array<Vector, 2> {
        const Matrix Ab = abar(j);
        return {Vector(-il * Ab * v), Vector(-il * Ab * vt - (il * m1_tilde) * am(j) * v)};
    };

    LinearizedFields out;
    out.xbar.assign(K, xbar0);
    out.xbar_tilde.assign(K, xbar_tilde0);
    for (std::size_t k = 0; k + 1 < K; ++k) {
        const Vector& v = out.xbar[k];
        const Vector& vt = out.xbar_tilde[k];
        const auto k1 = drift(2 * k, v, vt);
        const auto k2 = drift(2 * k + 1, v + 0.5 * h * k1[0], vt + 0.5 * h * k1[1]);
        const auto k3 = drift(2 * k + 1, v + 0.5 * h * k2[0], vt + 0.5 * h * k2[1]);
        const auto k4 = drift(2 * k + 2, v + h * k3[0], vt + h * k3[1]);
        out.xbar[k + 1] = v + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        out.xbar_tilde[k + 1] = vt + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }

    out.a.resize(K);
    out.b.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        const Vector& v = out.xbar[k];
        const Vector& vt = out.xbar_tilde[k];
        out.a[k] = tables.Sigma.node(k) * vt + m1_tilde * tables.Gamma.node(k) * v;
        out.b[k] = v.dot(tables.Gamma.node(k) * vt) + 0.5 * m1_tilde * v.dot(tables.Theta.node(k) * v);
    }

    const QuadraticCost run = tables.model.running();
    const Matrix& A = run.interaction();
    const Matrix Bm = mean_coupling_at(tables.model, m1);
    out.residual_linear.resize(K);
    out.residual_constant.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        const Vector& v = out.xbar[k];
        const Vector& vt = out.xbar_tilde[k];
        const Vector da = five_point_derivative(out.a, k, h);
        const double db = five_point_derivative(out.b, k, h);
        out.residual_linear[k] = -da + il * tables.P.node(k) * out.a[k] - m1_tilde * A * v - Bm * vt;
        out.residual_constant[k] = -db + il * out.a[k].dot(tables.Sigma.node(k) * v) - v.dot(A * vt);
        out.max_residual =
            std::max({out.max_residual, out.residual_linear[k].norm(), std::abs(out.residual_constant[k])});
    }
    return out;
}

double bellman_residual(const RiccatiTables& tables, const ParticleEnsemble& X, std::size_t k) {
    require_unit_mass(tables, "bellman_residual");
    check_node(tables, k);
    const double d = tables.half_step();
    const Matrix dP = time_derivative(tables.P, 2 * k, d);
    const Matrix dS = time_derivative(tables.Sigma, 2 * k, d);
    const Vector xbar = X.mean();
    const double N = static_cast<double>(X.size());
    const double dVdt = 0.5 * (X.points() * dP).cwiseProduct(X.points()).sum() / N + 0.5 * xbar.dot(dS * xbar);
    Matrix grad = X.points() * tables.P.node(k);
    grad.rowwise() += (tables.Sigma.node(k) * xbar).transpose();
    const double grad_sq = grad.squaredNorm() / N;
    return dVdt - 0.5 / tables.lambda * grad_sq + tables.model.running().value(X);
}

double scalar_master_residual(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar) {
    check_node(tables, k);
    const double d = tables.half_step();
    const Matrix dP = time_derivative(tables.P, 2 * k, d);
    const Matrix dS = time_derivative(tables.Sigma, 2 * k, d);
    const Matrix dG = time_derivative(tables.Gamma, 2 * k, d);
    const Matrix& P = tables.P.node(k);
    const Matrix& S = tables.Sigma.node(k);
    const Matrix& G = tables.Gamma.node(k);
    const double il = 1.0 / tables.lambda;

    const double dUdt = 0.5 * x.dot(dP * x) + xbar.dot(dS * x) + 0.5 * xbar.dot(dG * xbar);
    // D_xi of dU/dm(x)(xi), paired with the integral of D_xi U(xi) over m.
    const Vector transport = S * x + G * xbar;
    const Vector flux = (P + tables.m1 * S) * xbar;
    const Vector grad = P * x + S * xbar;
    const ParticleEnsemble law(Matrix(xbar.transpose()));
    const double F = tables.model.running().functional_derivative(x, law, tables.m1);
    return dUdt - il * transport.dot(flux) - 0.5 * il * grad.squaredNorm() + F;
}

Vector vector_master_residual(const RiccatiTables& tables, std::size_t k, const Vector& x, const Vector& xbar) {
    check_node(tables, k);
    const double d = tables.half_step();
    const Matrix dP = time_derivative(tables.P, 2 * k, d);
    const Matrix dS = time_derivative(tables.Sigma, 2 * k, d);
    const Matrix& P = tables.P.node(k);
    const Matrix& S = tables.Sigma.node(k);
    const double il = 1.0 / tables.lambda;
    const QuadraticCost run = tables.model.running();
    const Vector U = P * x + S * xbar;
    return dP * x + dS * xbar - il * S * (P + tables.m1 * S) * xbar - il * P * U + run.local() * x +
           mean_coupling_at(tables.model, tables.m1) * xbar;
}

double gamma_equation_residual(const RiccatiTables& tables, double sigma_sq_coeff) {
    const double d = tables.half_step();
    const double il = 1.0 / tables.lambda;
    const Matrix A = tables.model.running().interaction();
    double worst = 0.0;
    for (std::size_t k = 0; k < tables.nodes(); ++k) {
        const Matrix& G = tables.Gamma.node(k);
        const Matrix& S = tables.Sigma.node(k);
        const Matrix Abar = tables.P.node(k) + tables.m1 * S;
        const Matrix r = time_derivative(tables.Gamma, 2 * k, d) - il * (G * Abar + Abar * G) -
                         sigma_sq_coeff * S * S + A;
        worst = std::max(worst, r.norm());
    }
    return worst;
}

void write_riccati_csv(std::ostream& out, const RiccatiTables& tables) {
    out << "node_index,time,matrix_name,row,col,value\n";
    const auto old_precision = out.precision(17);
    const std::array<std::pair<const char*, const MatrixPath*>, 3> paths{
        {{"P", &tables.P}, {"Sigma", &tables.Sigma}, {"Gamma", &tables.Gamma}}};
    for (std::size_t k = 0; k < tables.nodes(); ++k) {
        const double t = tables.grid.node(k);
        for (const auto& [name, path] : paths) {
            const Matrix& m = path->node(k);
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    out << k << ',' << t << ',' << name << ',' << r << ',' << c << ',' << m(r, c) << '\n';
                }
            }
        }
    }
    out.precision(old_precision);
}

}  // namespace mfc
