#pragma once

#include "mfc/measure_space.hpp"

#include <functional>
#include <memory>
#include <string>

namespace mfc {

/// A functional F(X) = E f(X, L_X) on the space of random variables together
/// with its first and second derivatives in the measure argument.
///
/// Conventions: `point_gradient(x, law)` is D_x F(x, m) where F(x, m) is the
/// functional derivative of X -> E f(X, L_X) at m = law. Evaluated at the
/// atoms of X with law = X it is the Hilbert-space gradient D_X F(X).
class CostFunctional {
public:
    virtual ~CostFunctional() = default;

    virtual std::size_t dim() const = 0;

    /// E f(X, L_X)
    virtual double value(const ParticleEnsemble& X) const = 0;

    /// D_x F(x, m)
    virtual Vector point_gradient(const Vector& x, const ParticleEnsemble& law) const = 0;

    /// D_X F(X); row i is point_gradient(x_i, X).
    virtual ParticleEnsemble gradient(const ParticleEnsemble& X) const;

    /// F(x, m), the functional derivative of m -> integral f(x, m) m(dx).
    /// `m1` is the total mass; it is 1 for probability laws and only exists so
    /// that the second derivative below stays symmetric.
    virtual double functional_derivative(const Vector& x, const ParticleEnsemble& law, double m1 = 1.0) const = 0;

    /// dF/dm(x, m)(xi); symmetric in (x, xi).
    virtual double second_functional_derivative(const Vector& x, const Vector& xi, const ParticleEnsemble& law,
                                                double m1 = 1.0) const = 0;

    /// Certified c with ||D_X F(X1) - D_X F(X2)|| <= c ||X1 - X2|| and
    /// |D_x F(x1,m1) - D_x F(x2,m2)| <= c/2 (|x1 - x2| + W2(m1, m2)).
    virtual double lipschitz_constant() const = 0;

    /// C with |F(X)| <= C (1 + ||X||^2).
    virtual double growth_constant() const = 0;

    virtual std::string describe() const = 0;

protected:
    void check_dim(const ParticleEnsemble& X) const;
    void check_dim(const Vector& x) const;
};

using CostPtr = std::shared_ptr<const CostFunctional>;

/// f(x, m) = 1/2 (x - S xbar)* Qbar (x - S xbar) + 1/2 x* Q x
class QuadraticCost final : public CostFunctional {
public:
    QuadraticCost(Matrix Q, Matrix Qbar, Matrix S);

    std::size_t dim() const override { return static_cast<std::size_t>(Q_.rows()); }
    double value(const ParticleEnsemble& X) const override;
    Vector point_gradient(const Vector& x, const ParticleEnsemble& law) const override;
    ParticleEnsemble gradient(const ParticleEnsemble& X) const override;
    double functional_derivative(const Vector& x, const ParticleEnsemble& law, double m1 = 1.0) const override;
    double second_functional_derivative(const Vector& x, const Vector& xi, const ParticleEnsemble& law,
                                        double m1 = 1.0) const override;
    double lipschitz_constant() const override;
    double growth_constant() const override;
    std::string describe() const override;

    const Matrix& Q() const { return Q_; }
    const Matrix& Qbar() const { return Qbar_; }
    const Matrix& S() const { return S_; }
    /// Q + Qbar
    const Matrix& local() const { return local_; }
    /// S* Qbar S
    const Matrix& interaction() const { return interaction_; }
    /// S* Qbar S - Qbar S - S* Qbar, the coefficient of the mean in D_X F.
    const Matrix& mean_coupling() const { return coupling_; }

private:
    Matrix Q_, Qbar_, S_;
    Matrix local_, interaction_, coupling_;
};

/// Symmetric pair kernel K with analytic gradient in its first argument.
struct Kernel {
    std::string name;
    std::function<double(const Vector&, const Vector&)> value;
    std::function<Vector(const Vector&, const Vector&)> grad_x;
    /// L with |D_xK(x1,xi1) - D_xK(x2,xi2)| <= L (|x1-x2| + |xi1-xi2|).
    double grad_lipschitz = 0.0;
    /// Constant G with |K(x, xi)| <= G (1 + |x|^2 + |xi|^2).
    double growth = 0.0;
    std::size_t dim = 1;

    /// K(x, xi) = x* A xi with A symmetric.
    static Kernel bilinear(Matrix A);
    /// K(x, xi) = a exp(-|x - xi|^2 / (2 w^2))
    static Kernel gaussian(std::size_t dim, double amplitude, double width);
};

/// f(x, m) = 1/2 integral K(x, xi) m(dxi), so F(x, m) = integral K(x, xi) m(dxi).
class KernelCost final : public CostFunctional {
public:
    explicit KernelCost(Kernel kernel);

    std::size_t dim() const override { return kernel_.dim; }
    double value(const ParticleEnsemble& X) const override;
    Vector point_gradient(const Vector& x, const ParticleEnsemble& law) const override;
    double functional_derivative(const Vector& x, const ParticleEnsemble& law, double m1 = 1.0) const override;
    double second_functional_derivative(const Vector& x, const Vector& xi, const ParticleEnsemble& law,
                                        double m1 = 1.0) const override;
    double lipschitz_constant() const override;
    double growth_constant() const override;
    std::string describe() const override;

    const Kernel& kernel() const { return kernel_; }

private:
    Kernel kernel_;
};

/// Matrices of the running cost (Q, Qbar, S), the terminal cost (QT, QbarT,
/// ST), the control penalty lambda and the horizon T.
struct QuadraticModel {
    Matrix Q, Qbar, S;
    Matrix QT, QbarT, ST;
    double lambda = 1.0;
    double T = 1.0;

    std::size_t dim() const { return static_cast<std::size_t>(Q.rows()); }

    /// Throws std::invalid_argument on shape errors, asymmetric or indefinite
    /// Q, Qbar, QT, QbarT, or lambda <= 0.
    void validate() const;

    QuadraticCost running() const { return {Q, Qbar, S}; }
    QuadraticCost terminal() const { return {QT, QbarT, ST}; }

    /// 2 max(|Q+Qbar|, |QT+QbarT|) + 2 max(|B|, |BT|) with B the mean coupling
    /// and |.| the operator 2-norm.
    double lipschitz_constant() const;

    static QuadraticModel zero(std::size_t n, double lambda, double T);
    /// Q = I, everything else zero.
    static QuadraticModel scalar_tanh(double lambda, double T);
};

/// Operator 2-norm (largest singular value).
double operator_norm(const Matrix& A);
/// Smallest eigenvalue of the symmetric part.
double min_eigenvalue(const Matrix& A);

/// Sampled pairing integral (F(x,m1) - F(x,m2)) (m1 - m2)(dx) for two
/// equal-size empirical laws.
double monotonicity_pairing(const CostFunctional& F, const ParticleEnsemble& m1, const ParticleEnsemble& m2);

}  // namespace mfc
