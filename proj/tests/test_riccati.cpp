#include "mfc/riccati.hpp"
#include "mfc/verification.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace mfc;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

QuadraticModel scalar_model(double Q, double QT, double lambda, double T) {
    QuadraticModel m = QuadraticModel::zero(1, lambda, T);
    m.Q = scalar(Q);
    m.QT = scalar(QT);
    return m;
}

/// Independent reference for Sigma(t; m1): Pi = P + m1 Sigma solves the
/// Riccati equation with Q + Qbar + m1 Bm and Pi(T) = P(T) + m1 Sigma(T).
Matrix sigma_exact(const QuadraticModel& m, double m1, double tau) {
    const Matrix A = m.S.transpose() * m.Qbar * m.S;
    const Matrix Bm = A * m1 - m.Qbar * m.S - m.S.transpose() * m.Qbar;
    const Matrix AT = m.ST.transpose() * m.QbarT * m.ST;
    const Matrix SigmaT = AT * m1 - m.QbarT * m.ST - m.ST.transpose() * m.QbarT;
    const Matrix PT = m.QT + m.QbarT;
    const Matrix P = oracle::riccati_exact(m.Q + m.Qbar, PT, m.lambda, tau);
    const Matrix Pi = oracle::riccati_exact(m.Q + m.Qbar + m1 * Bm, PT + m1 * SigmaT, m.lambda, tau);
    return (Pi - P) / m1;
}

double max_node_error(const MatrixPath& path, const TimeGrid& grid, const std::function<Matrix(double)>& exact) {
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        worst = std::max(worst, (path.node(k) - exact(grid.horizon() - grid.node(k))).cwiseAbs().maxCoeff());
    }
    return worst;
}

}  // namespace

TEST_CASE("pure Riccati decay 1/(1 + T - t)") {
    const QuadraticModel m = scalar_model(0.0, 1.0, 1.0, 1.0);
    const TimeGrid grid(0.0, 1.0, 400);
    const RiccatiTables tab = solve_riccati(m, grid);
    CHECK(tab.P.node(0)(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(max_node_error(tab.P, grid, [](double tau) { return scalar(1.0 / (1.0 + tau)); }) <= 1e-8);
}

TEST_CASE("scalar tanh Riccati solution") {
    for (double lambda : {1.0, 4.0}) {
        const QuadraticModel m = scalar_model(1.0, 0.0, lambda, 0.5);
        const TimeGrid grid(0.0, 0.5, 400);
        const RiccatiTables tab = solve_riccati(m, grid);
        CHECK(max_node_error(tab.P, grid, [&](double tau) { return scalar(oracle::scalar_tanh_P(lambda, tau)); }) <=
              1e-10);
    }
    const RiccatiTables unit = solve_riccati(scalar_model(1.0, 0.0, 1.0, 0.5), TimeGrid(0.0, 0.5, 400));
    const ParticleEnsemble X = ParticleEnsemble::from_rows({{1.0}});
    CHECK(value_closed_form(unit, X, 0) == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-10));
    CHECK(std::abs(value_closed_form(unit, X, 0) - 0.23105) <= 1e-5);
}

TEST_CASE("zero model gives zero tables") {
    const RiccatiTables tab = solve_riccati(QuadraticModel::zero(2, 1.0, 0.7), TimeGrid(0.0, 0.7, 20), 0.8);
    for (std::size_t j = 0; j < tab.P.size(); ++j) {
        CHECK(tab.P.half(j).norm() == 0.0);
        CHECK(tab.Sigma.half(j).norm() == 0.0);
        CHECK(tab.Gamma.half(j).norm() == 0.0);
        CHECK(tab.Theta.half(j).norm() == 0.0);
    }
}

TEST_CASE("terminal conditions are exact and P stays symmetric") {
    std::mt19937_64 rng(4);
    const QuadraticModel m = random_quadratic_model(rng, 3, 0.8, 0.5);
    const double m1 = 0.6;
    const RiccatiTables tab = solve_riccati(m, TimeGrid(0.0, m.T, 50), m1);
    const std::size_t M = 50;
    const Matrix AT = m.ST.transpose() * m.QbarT * m.ST;
    CHECK(tab.P.node(M) == Matrix(m.QT + m.QbarT));
    CHECK((tab.Gamma.node(M) - AT).norm() == 0.0);
    CHECK((tab.Sigma.node(M) - (AT * m1 - (m.QbarT * m.ST + m.ST.transpose() * m.QbarT))).norm() <= 1e-15);
    for (std::size_t j = 0; j < tab.P.size(); ++j) {
        CHECK((tab.P.half(j) - tab.P.half(j).transpose()).norm() == 0.0);
        CHECK(min_eigenvalue(tab.P.half(j)) >= -1e-12);
    }
}

TEST_CASE("P and Sigma match the Hamiltonian exponential on random models") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 3);
        const QuadraticModel m = random_quadratic_model(rng, n, 0.4 + 0.1 * trial, 0.5);
        const TimeGrid grid(0.0, m.T, 200);
        for (double m1 : {1.0, 0.7}) {
            const RiccatiTables tab = solve_riccati(m, grid, m1);
            const Matrix PT = m.QT + m.QbarT;
            CHECK(max_node_error(tab.P, grid,
                                 [&](double tau) { return oracle::riccati_exact(m.Q + m.Qbar, PT, m.lambda, tau); }) <=
                  1e-9);
            CHECK(max_node_error(tab.Sigma, grid, [&](double tau) { return sigma_exact(m, m1, tau); }) <= 1e-9);
        }
    }
}

TEST_CASE("Gamma and Theta are mass derivatives of Sigma") {
    std::mt19937_64 rng(10);
    const QuadraticModel m = random_quadratic_model(rng, 2, 0.7, 0.4);
    const TimeGrid grid(0.0, m.T, 200);
    const double m1 = 0.9;
    const double h = 1e-3;
    const RiccatiTables tab = solve_riccati(m, grid, m1);
    const double gamma_err = max_node_error(tab.Gamma, grid, [&](double tau) {
        return Matrix((sigma_exact(m, m1 + h, tau) - sigma_exact(m, m1 - h, tau)) / (2.0 * h));
    });
    CHECK(gamma_err <= 1e-6);
    const double theta_err = max_node_error(tab.Theta, grid, [&](double tau) {
        return Matrix((sigma_exact(m, m1 + h, tau) - 2.0 * sigma_exact(m, m1, tau) + sigma_exact(m, m1 - h, tau)) /
                      (h * h));
    });
    CHECK(theta_err <= 1e-4);
}

TEST_CASE("fourth-order convergence of the Riccati integrator") {
    std::mt19937_64 rng(12);
    const QuadraticModel m = random_quadratic_model(rng, 2, 1.0, 0.8);
    const Matrix PT = m.QT + m.QbarT;
    auto err = [&](std::size_t M) {
        const TimeGrid grid(0.0, m.T, M);
        const RiccatiTables tab = solve_riccati(m, grid, 1.0);
        return std::max(
            max_node_error(tab.P, grid,
                           [&](double tau) { return oracle::riccati_exact(m.Q + m.Qbar, PT, m.lambda, tau); }),
            max_node_error(tab.Sigma, grid, [&](double tau) { return sigma_exact(m, 1.0, tau); }));
    };
    const double coarse = err(4);
    const double fine = err(8);
    CHECK(coarse > 1e-12);
    CHECK(coarse / fine >= 12.0);
}

TEST_CASE("mean flow and propagator") {
    std::mt19937_64 rng(13);
    const QuadraticModel m = random_quadratic_model(rng, 2, 0.6, 0.5);
    const TimeGrid grid(0.0, m.T, 200);
    const RiccatiTables tab = solve_riccati(m, grid, 1.0);
    const ParticleEnsemble X = random_ensemble(rng, 6, 2, 1.0);
    const auto path = propagator(tab, X, 0);
    const auto means = mean_flow(tab, X.mean(), 0);
    REQUIRE(path.size() == grid.nodes());
    for (std::size_t k = 0; k < grid.nodes(); ++k) CHECK((path[k].mean() - means[k]).norm() <= 1e-12);
    CHECK((path[0].points() - X.points()).norm() == 0.0);

    // Scalar tanh case: Y(s) = X cosh(T - s)/cosh(T).
    const RiccatiTables unit = solve_riccati(scalar_model(1.0, 0.0, 1.0, 0.5), TimeGrid(0.0, 0.5, 200));
    const ParticleEnsemble Xs = ParticleEnsemble::from_rows({{1.0}, {-0.5}, {2.0}});
    const auto ys = propagator(unit, Xs, 0);
    double worst = 0.0;
    for (std::size_t k = 0; k < unit.nodes(); ++k) {
        for (std::size_t i = 0; i < Xs.size(); ++i) {
            const double x = Xs.points()(static_cast<Eigen::Index>(i), 0);
            worst = std::max(worst, std::abs(ys[k].points()(static_cast<Eigen::Index>(i), 0) -
                                             oracle::scalar_tanh_path(x, 1.0, 0.5, unit.grid.node(k))));
        }
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("closed-form fields solve their equations") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 3);
        const QuadraticModel m = random_quadratic_model(rng, n, 0.7, 0.5);
        const TimeGrid grid(0.0, m.T, 200);
        const RiccatiTables unit = solve_riccati(m, grid, 1.0);
        const RiccatiTables mass = solve_riccati(m, grid, 1.3);
        for (std::size_t k : {std::size_t{0}, std::size_t{1}, std::size_t{77}, std::size_t{199}, std::size_t{200}}) {
            const ParticleEnsemble X = random_ensemble(rng, 5, n, 1.0);
            const Vector x = X.point(0);
            const Vector xbar = X.mean();
            CHECK(std::abs(scalar_master_residual(mass, k, x, xbar)) <= 1e-6);
            CHECK(vector_master_residual(mass, k, x, xbar).norm() <= 1e-6);
            CHECK(std::abs(bellman_residual(unit, X, k)) <= 1e-6);
            CHECK((master_vector_field(unit, k, x, xbar) - (unit.P.node(k) * x + unit.Sigma.node(k) * xbar)).norm() ==
                  0.0);
        }
        CHECK(gamma_equation_residual(mass, 1.0 / m.lambda) <= 1e-6);
        const LinearizedFields lin = linearized_fields(mass, random_ensemble(rng, 1, n, 1.0).point(0), 0.4,
                                                       random_ensemble(rng, 1, n, 1.0).point(0));
        CHECK(lin.max_residual <= 1e-6);
    }
}

TEST_CASE("master scalar field at the origin and its x-gradient") {
    std::mt19937_64 rng(15);
    const QuadraticModel m = random_quadratic_model(rng, 2, 0.5, 0.5);
    const RiccatiTables tab = solve_riccati(m, TimeGrid(0.0, m.T, 40), 1.0);
    const Vector zero = Vector::Zero(2);
    CHECK(master_scalar_field(tab, 3, zero, zero) == 0.0);
    const Vector x = random_ensemble(rng, 1, 2, 1.0).point(0);
    const Vector xbar = random_ensemble(rng, 1, 2, 1.0).point(0);
    const double eps = 1e-6;
    for (Eigen::Index i = 0; i < 2; ++i) {
        Vector e = Vector::Zero(2);
        e(i) = eps;
        const double fd = (master_scalar_field(tab, 5, x + e, xbar) - master_scalar_field(tab, 5, x - e, xbar)) / (2 * eps);
        CHECK(fd == doctest::Approx(master_vector_field(tab, 5, x, xbar)(i)).epsilon(1e-7));
    }
}

TEST_CASE("riccati argument errors") {
    const QuadraticModel m = scalar_model(1.0, 0.0, 1.0, 0.5);
    CHECK_THROWS_AS(solve_riccati(m, TimeGrid(0.0, 0.6, 10)), std::invalid_argument);
    const RiccatiTables mass = solve_riccati(m, TimeGrid(0.0, 0.5, 10), 0.5);
    const ParticleEnsemble X = ParticleEnsemble::from_rows({{1.0}});
    CHECK_THROWS_AS(value_closed_form(mass, X, 0), std::invalid_argument);
    CHECK_THROWS_AS(propagator(mass, X, 0), std::invalid_argument);
    const RiccatiTables unit = solve_riccati(m, TimeGrid(0.0, 0.5, 10));
    CHECK_THROWS_AS(value_closed_form(unit, X, 11), std::out_of_range);
    CHECK_THROWS_AS(value_closed_form(unit, ParticleEnsemble::from_rows({{1.0, 2.0}}), 0), ShapeError);
}

TEST_CASE("riccati csv lists P, Sigma and Gamma per node") {
    const RiccatiTables tab = solve_riccati(QuadraticModel::scalar_tanh(1.0, 0.5), TimeGrid(0.0, 0.5, 4));
    std::ostringstream out;
    write_riccati_csv(out, tab);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "node_index,time,matrix_name,row,col,value");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5 * 3);
}
