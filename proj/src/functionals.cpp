#include "mfc/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mfc {

void CostFunctional::check_dim(const ParticleEnsemble& X) const {
    if (X.dim() != dim()) {
        throw ShapeError("ensemble dimension " + std::to_string(X.dim()) + " does not match functional dimension " +
                         std::to_string(dim()));
    }
}

void CostFunctional::check_dim(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != dim()) {
        throw ShapeError("point dimension " + std::to_string(x.size()) + " does not match functional dimension " +
                         std::to_string(dim()));
    }
}

ParticleEnsemble CostFunctional::gradient(const ParticleEnsemble& X) const {
    check_dim(X);
    ParticleEnsemble out(X.size(), X.dim());
    for (std::size_t i = 0; i < X.size(); ++i) {
        out.points().row(static_cast<Eigen::Index>(i)) = point_gradient(X.point(i), X).transpose();
    }
    return out;
}

double operator_norm(const Matrix& A) {
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(A);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

double min_eigenvalue(const Matrix& A) {
    const Matrix sym = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// QuadraticCost

namespace {

void require_square(const Matrix& A, Eigen::Index n, const char* name) {
    if (A.rows() != n || A.cols() != n) {
        std::ostringstream msg;
        msg << name << " must be " << n << "x" << n << ", got " << A.rows() << "x" << A.cols();
        throw ShapeError(msg.str());
    }
}

}  // namespace

QuadraticCost::QuadraticCost(Matrix Q, Matrix Qbar, Matrix S)
    : Q_(std::move(Q)), Qbar_(std::move(Qbar)), S_(std::move(S)) {
    const Eigen::Index n = Q_.rows();
    if (n == 0) throw ShapeError("quadratic cost needs n >= 1");
    require_square(Q_, n, "Q");
    require_square(Qbar_, n, "Qbar");
    require_square(S_, n, "S");
    local_ = Q_ + Qbar_;
    interaction_ = S_.transpose() * Qbar_ * S_;
    coupling_ = interaction_ - Qbar_ * S_ - S_.transpose() * Qbar_;
}

double QuadraticCost::value(const ParticleEnsemble& X) const {
    check_dim(X);
    const Vector xbar = X.mean();
    const double local = (X.points() * local_).cwiseProduct(X.points()).sum() / static_cast<double>(X.size());
    return 0.5 * local + 0.5 * xbar.dot(coupling_ * xbar);
}

Vector QuadraticCost::point_gradient(const Vector& x, const ParticleEnsemble& law) const {
    check_dim(x);
    check_dim(law);
    return local_ * x + coupling_ * law.mean();
}

ParticleEnsemble QuadraticCost::gradient(const ParticleEnsemble& X) const {
    check_dim(X);
    const Vector shift = coupling_ * X.mean();
    Matrix g = X.points() * local_.transpose();
    g.rowwise() += shift.transpose();
    return ParticleEnsemble(std::move(g));
}

double QuadraticCost::functional_derivative(const Vector& x, const ParticleEnsemble& law, double m1) const {
    check_dim(x);
    check_dim(law);
    const Vector xbar = law.mean();
    const Matrix B = interaction_ * m1 - Qbar_ * S_ - S_.transpose() * Qbar_;
    return 0.5 * x.dot(local_ * x) + xbar.dot(B * x) + 0.5 * xbar.dot(interaction_ * xbar);
}

double QuadraticCost::second_functional_derivative(const Vector& x, const Vector& xi, const ParticleEnsemble& law,
                                                   double m1) const {
    check_dim(x);
    check_dim(xi);
    check_dim(law);
    const Vector xbar = law.mean();
    const Matrix B = interaction_ * m1 - Qbar_ * S_ - S_.transpose() * Qbar_;
    return xbar.dot(interaction_ * (x + xi)) + xi.dot(B * x);
}

double QuadraticCost::lipschitz_constant() const {
    return 2.0 * operator_norm(local_) + 2.0 * operator_norm(coupling_);
}

double QuadraticCost::growth_constant() const {
    return 0.5 * (operator_norm(local_) + operator_norm(coupling_));
}

std::string QuadraticCost::describe() const {
    std::ostringstream s;
    s << "quadratic(n=" << dim() << ")";
    return s.str();
}

// ---------------------------------------------------------------------------
// Kernels

Kernel Kernel::bilinear(Matrix A) {
    if (A.rows() != A.cols() || A.rows() == 0) throw ShapeError("bilinear kernel needs a square matrix");
    if ((A - A.transpose()).norm() > 1e-12 * (1.0 + A.norm())) {
        throw std::invalid_argument("bilinear kernel matrix must be symmetric");
    }
    Kernel k;
    k.name = "bilinear";
    k.dim = static_cast<std::size_t>(A.rows());
    const double a = operator_norm(A);
    k.grad_lipschitz = a;
    k.growth = 0.5 * a;
    k.value = [A](const Vector& x, const Vector& xi) { return x.dot(A * xi); };
    k.grad_x = [A](const Vector&, const Vector& xi) -> Vector { return A * xi; };
    return k;
}

Kernel Kernel::gaussian(std::size_t dim, double amplitude, double width) {
    if (dim == 0) throw ShapeError("gaussian kernel needs n >= 1");
    if (!(width > 0.0)) throw std::invalid_argument("gaussian kernel width must be positive");
    Kernel k;
    k.name = "gaussian";
    k.dim = dim;
    // The Hessian of r -> r exp(-|r|^2/2) has operator norm <= 1.
    k.grad_lipschitz = std::abs(amplitude) / (width * width);
    k.growth = std::abs(amplitude);
    const double inv = 1.0 / (width * width);
    k.value = [amplitude, inv](const Vector& x, const Vector& xi) {
        return amplitude * std::exp(-0.5 * inv * (x - xi).squaredNorm());
    };
    k.grad_x = [amplitude, inv](const Vector& x, const Vector& xi) -> Vector {
        const Vector r = x - xi;
        return (-amplitude * inv * std::exp(-0.5 * inv * r.squaredNorm())) * r;
    };
    return k;
}

KernelCost::KernelCost(Kernel kernel) : kernel_(std::move(kernel)) {
    if (!kernel_.value || !kernel_.grad_x) throw std::invalid_argument("kernel needs value and gradient");
}

double KernelCost::value(const ParticleEnsemble& X) const {
    check_dim(X);
    const std::size_t N = X.size();
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const Vector xi = X.point(i);
        for (std::size_t j = 0; j < N; ++j) {
            total += kernel_.value(xi, X.point(j));
        }
    }
    return 0.5 * total / static_cast<double>(N * N);
}

Vector KernelCost::point_gradient(const Vector& x, const ParticleEnsemble& law) const {
    check_dim(x);
    check_dim(law);
    Vector g = Vector::Zero(x.size());
    for (std::size_t j = 0; j < law.size(); ++j) {
        g += kernel_.grad_x(x, law.point(j));
    }
    return g / static_cast<double>(law.size());
}

double KernelCost::functional_derivative(const Vector& x, const ParticleEnsemble& law, double) const {
    check_dim(x);
    check_dim(law);
    double total = 0.0;
    for (std::size_t j = 0; j < law.size(); ++j) {
        total += kernel_.value(x, law.point(j));
    }
    return total / static_cast<double>(law.size());
}

double KernelCost::second_functional_derivative(const Vector& x, const Vector& xi, const ParticleEnsemble&,
                                                double) const {
    check_dim(x);
    check_dim(xi);
    return kernel_.value(x, xi);
}

double KernelCost::lipschitz_constant() const {
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(kernel_.dim));
    return 2.0 * std::max(kernel_.grad_lipschitz, kernel_.grad_x(zero, zero).norm());
}

double KernelCost::growth_constant() const { return kernel_.growth; }

std::string KernelCost::describe() const { return "kernel(" + kernel_.name + ", n=" + std::to_string(dim()) + ")"; }

// ---------------------------------------------------------------------------
// QuadraticModel

void QuadraticModel::validate() const {
    const Eigen::Index n = Q.rows();
    if (n == 0) throw ShapeError("quadratic model needs n >= 1");
    require_square(Q, n, "Q");
    require_square(Qbar, n, "Qbar");
    require_square(S, n, "S");
    require_square(QT, n, "QT");
    require_square(QbarT, n, "QbarT");
    require_square(ST, n, "ST");
    auto psd = [](const Matrix& A, const char* name) {
        if ((A - A.transpose()).norm() > 1e-12 * (1.0 + A.norm())) {
            throw std::invalid_argument(std::string(name) + " must be symmetric");
        }
        if (min_eigenvalue(A) < -1e-12 * (1.0 + A.norm())) {
            throw std::invalid_argument(std::string(name) + " must be positive semidefinite");
        }
    };
    psd(Q, "Q");
    psd(Qbar, "Qbar");
    psd(QT, "QT");
    psd(QbarT, "QbarT");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (!(T > 0.0)) throw std::invalid_argument("T must be positive");
}

double QuadraticModel::lipschitz_constant() const {
    const QuadraticCost run = running();
    const QuadraticCost term = terminal();
    return 2.0 * std::max(operator_norm(run.local()), operator_norm(term.local())) +
           2.0 * std::max(operator_norm(run.mean_coupling()), operator_norm(term.mean_coupling()));
}

QuadraticModel QuadraticModel::zero(std::size_t n, double lambda, double T) {
    const auto k = static_cast<Eigen::Index>(n);
    const Matrix Z = Matrix::Zero(k, k);
    return {Z, Z, Z, Z, Z, Z, lambda, T};
}

QuadraticModel QuadraticModel::scalar_tanh(double lambda, double T) {
    QuadraticModel m = zero(1, lambda, T);
    m.Q(0, 0) = 1.0;
    return m;
}

double monotonicity_pairing(const CostFunctional& F, const ParticleEnsemble& m1, const ParticleEnsemble& m2) {
    require_same_shape(m1, m2, "monotonicity_pairing");
    double total = 0.0;
    for (std::size_t i = 0; i < m1.size(); ++i) {
        const Vector a = m1.point(i);
        const Vector b = m2.point(i);
        total += F.functional_derivative(a, m1) - F.functional_derivative(a, m2);
        total -= F.functional_derivative(b, m1) - F.functional_derivative(b, m2);
    }
    return total / static_cast<double>(m1.size());
}

}  // namespace mfc
