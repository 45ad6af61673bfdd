#include "mfc/measure_space.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

using namespace mfc;

namespace {

ParticleEnsemble ens(std::initializer_list<std::vector<double>> rows) { return ParticleEnsemble::from_rows(rows); }

ParticleEnsemble random_points(std::mt19937_64& rng, std::size_t N, std::size_t n) {
    return ParticleEnsemble(oracle::random_matrix(rng, static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n)));
}

}  // namespace

TEST_CASE("inner product and norm on small ensembles") {
    CHECK(inner_product(ens({{1}, {-1}}), ens({{1}, {-1}})) == doctest::Approx(1.0));
    CHECK(inner_product(ens({{1}, {-1}}), ens({{1}, {1}})) == doctest::Approx(0.0));
    CHECK(inner_product(ens({{1, 0}, {0, 1}}), ens({{2, 0}, {0, 3}})) == doctest::Approx(2.5));
    CHECK(norm(ens({{3, 4}})) == doctest::Approx(5.0));
    CHECK_THROWS_AS(inner_product(ens({{1}}), ens({{1}, {2}})), ShapeError);
    CHECK_THROWS_AS(inner_product(ens({{1}}), ens({{1, 2}})), ShapeError);
}

TEST_CASE("mean and second moment") {
    CHECK(mean(ens({{1}, {-1}}))(0) == doctest::Approx(0.0));
    const Vector m = mean(ens({{2, 4}}));
    CHECK(m(0) == 2.0);
    CHECK(m(1) == 4.0);
    CHECK(mean(ens({{0}, {1}, {2}}))(0) == doctest::Approx(1.0));
    CHECK(ens({{1}, {3}}).second_moment() == doctest::Approx(5.0));
}

TEST_CASE("ensemble arithmetic and construction errors") {
    const ParticleEnsemble a = ens({{1, 2}, {3, 4}});
    const ParticleEnsemble b = ens({{0, 1}, {1, 0}});
    CHECK((a + b).points()(1, 0) == 4.0);
    CHECK((a - b).points()(0, 1) == 1.0);
    CHECK((2.0 * a).points()(1, 1) == 8.0);
    CHECK_THROWS_AS(ParticleEnsemble(0, 1), ShapeError);
    CHECK_THROWS_AS(ParticleEnsemble::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("permute reorders atoms and preserves the law") {
    const ParticleEnsemble p = permute(ens({{1}, {2}}), std::vector<std::size_t>{1, 0});
    CHECK(p.points()(0, 0) == 2.0);
    CHECK(p.points()(1, 0) == 1.0);
    const ParticleEnsemble a = ens({{1, 5}, {2, 6}, {3, 7}});
    CHECK(permute(a, std::vector<std::size_t>{0, 1, 2}).points() == a.points());
    CHECK_THROWS_AS(permute(a, std::vector<std::size_t>{0, 0, 1}), ShapeError);
    CHECK_THROWS_AS(permute(a, std::vector<std::size_t>{0, 1}), ShapeError);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial % 3;
        const ParticleEnsemble x = random_points(rng, 7, n);
        std::vector<std::size_t> perm(7);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        CHECK(wasserstein2(x, permute(x, perm)).distance <= 1e-12);
    }
}

TEST_CASE("wasserstein distance on known couplings") {
    CHECK(wasserstein2(ens({{0}, {2}}), ens({{1}, {3}})).distance == doctest::Approx(1.0));
    const ParticleEnsemble a = ens({{0.3, -1}, {2, 0.5}, {1, 1}});
    CHECK(wasserstein2(a, a).distance == 0.0);
    CHECK(wasserstein2(ens({{0, 0}, {1, 1}}), ens({{1, 1}, {0, 0}})).distance == doctest::Approx(0.0));
    CHECK_THROWS_AS(wasserstein2(ens({{0}}), ens({{0}, {1}})), ShapeError);
}

TEST_CASE("one-dimensional sort matching equals brute-force assignment") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t N = 1 + static_cast<std::size_t>(trial % 8);
        const ParticleEnsemble a = random_points(rng, N, 1);
        const ParticleEnsemble b = random_points(rng, N, 1);
        const WassersteinResult r = wasserstein2(a, b);
        CHECK(r.exact);
        CHECK(r.distance == doctest::Approx(oracle::brute_force_w2(a.points(), b.points())).epsilon(1e-12));
        const Matrix cost = (a.points().replicate(1, static_cast<Eigen::Index>(N)) -
                             b.points().transpose().replicate(static_cast<Eigen::Index>(N), 1))
                                .array()
                                .square()
                                .matrix();
        const auto hung = hungarian_assignment(cost);
        CHECK(oracle::matching_cost(a.points(), b.points(), hung) ==
              doctest::Approx(r.distance * r.distance).epsilon(1e-12));
    }
}

TEST_CASE("hungarian assignment is optimal in several dimensions") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t N = 2 + static_cast<std::size_t>(trial % 6);
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 2);
        const ParticleEnsemble a = random_points(rng, N, n);
        const ParticleEnsemble b = random_points(rng, N, n);
        const WassersteinResult r = wasserstein2(a, b);
        CHECK(r.exact);
        CHECK(r.distance == doctest::Approx(oracle::brute_force_w2(a.points(), b.points())).epsilon(1e-12));
        std::vector<std::size_t> sorted = r.matching;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < N; ++i) CHECK(sorted[i] == i);
    }
}

TEST_CASE("approximate matcher above the cutoff is an upper bound") {
    std::mt19937_64 rng(13);
    const ParticleEnsemble a = random_points(rng, 20, 2);
    const ParticleEnsemble b = random_points(rng, 20, 2);
    const WassersteinResult exact = wasserstein2(a, b);
    const WassersteinResult approx = wasserstein2(a, b, 8);
    CHECK(exact.exact);
    CHECK_FALSE(approx.exact);
    CHECK(approx.distance >= exact.distance - 1e-12);
    CHECK(approx.distance <= norm(a - b) + 1e-12);
}

TEST_CASE("wasserstein metric axioms on sampled triples") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t N = 1 + static_cast<std::size_t>(trial % 7);
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 3);
        const ParticleEnsemble a = random_points(rng, N, n);
        const ParticleEnsemble b = random_points(rng, N, n);
        const ParticleEnsemble c = random_points(rng, N, n);
        const double ab = wasserstein2(a, b).distance;
        CHECK(ab >= 0.0);
        CHECK(ab == doctest::Approx(wasserstein2(b, a).distance).epsilon(1e-12));
        CHECK(ab <= wasserstein2(a, c).distance + wasserstein2(c, b).distance + 1e-12);
        CHECK(ab <= norm(a - b) + 1e-12);
    }
}

TEST_CASE("time grid nodes") {
    const TimeGrid g(0.25, 1.25, 4);
    CHECK(g.nodes() == 5);
    CHECK(g.step() == doctest::Approx(0.25));
    CHECK(g.node(0) == 0.25);
    CHECK(g.node(4) == 1.25);
    CHECK_THROWS(TimeGrid(1.0, 0.5, 4));
    CHECK_THROWS(TimeGrid(0.0, 1.0, 0));
}

TEST_CASE("ensemble csv round trip") {
    const ParticleEnsemble a = ens({{0.1, -2.5}, {1e-9, 3.25}});
    std::stringstream buf;
    write_ensemble_csv(buf, a);
    const ParticleEnsemble b = read_ensemble_csv(buf);
    CHECK(b.points() == a.points());
}
