#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when ensembles, vectors or matrices disagree in count or dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A square-integrable random variable represented by N equally weighted
/// atoms in R^n. Row i of the underlying matrix is the value taken on atom i,
/// so two ensembles with the same N are coupled index-wise.
class ParticleEnsemble {
public:
    ParticleEnsemble(std::size_t count, std::size_t dim);
    explicit ParticleEnsemble(Matrix points);
    static ParticleEnsemble from_rows(const std::vector<std::vector<double>>& rows);
    static ParticleEnsemble zeros(std::size_t count, std::size_t dim) { return {count, dim}; }

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }

    const Matrix& points() const { return points_; }
    Matrix& points() { return points_; }
    Vector point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }

    Vector mean() const;
    /// E|X|^2
    double second_moment() const;

    ParticleEnsemble& operator+=(const ParticleEnsemble& other);
    ParticleEnsemble& operator-=(const ParticleEnsemble& other);
    ParticleEnsemble& operator*=(double scale);

private:
    Matrix points_;
};

ParticleEnsemble operator+(ParticleEnsemble a, const ParticleEnsemble& b);
ParticleEnsemble operator-(ParticleEnsemble a, const ParticleEnsemble& b);
ParticleEnsemble operator*(double scale, ParticleEnsemble a);

void require_same_shape(const ParticleEnsemble& a, const ParticleEnsemble& b, const char* what);

/// ((a, b)) = (1/N) sum_i a_i . b_i
double inner_product(const ParticleEnsemble& a, const ParticleEnsemble& b);
/// Hilbert norm sqrt(E|X|^2).
double norm(const ParticleEnsemble& a);
Vector mean(const ParticleEnsemble& a);

/// Reorders atoms: result[i] = a[perm[i]]. The empirical law is unchanged.
ParticleEnsemble permute(const ParticleEnsemble& a, std::span<const std::size_t> perm);

struct WassersteinResult {
    double distance = 0.0;
    /// false when the approximate matcher was used (n > 1 and N > exact cutoff).
    bool exact = true;
    /// matching[i] = index in b assigned to atom i of a.
    std::vector<std::size_t> matching;
};

inline constexpr std::size_t kExactAssignmentCutoff = 64;

/// W2 between the empirical laws of two equal-size ensembles.
///
/// In one dimension the atoms are sorted (ties broken by original index) and
/// matched in order, which is optimal. In higher dimension the optimal
/// permutation is found with the Hungarian method when N <= exact_cutoff.
/// Above the cutoff a greedy matching refined by pairwise swaps is used and
/// the result is flagged as approximate; it is then an upper bound.
WassersteinResult wasserstein2(const ParticleEnsemble& a, const ParticleEnsemble& b,
                               std::size_t exact_cutoff = kExactAssignmentCutoff);

/// Minimum-cost perfect matching for a square cost matrix; returns the column
/// assigned to each row.
std::vector<std::size_t> hungarian_assignment(const Matrix& cost);

/// Uniform grid t0 = s_0 < s_1 < ... < s_M = T.
class TimeGrid {
public:
    TimeGrid(double t0, double horizon, std::size_t intervals);

    double start() const { return t0_; }
    double horizon() const { return T_; }
    std::size_t intervals() const { return M_; }
    std::size_t nodes() const { return M_ + 1; }
    double step() const { return (T_ - t0_) / static_cast<double>(M_); }
    double length() const { return T_ - t0_; }
    double node(std::size_t k) const;

private:
    double t0_;
    double T_;
    std::size_t M_;
};

/// CSV with header x0,...,x{n-1}; one row per particle.
void write_ensemble_csv(std::ostream& out, const ParticleEnsemble& a);
ParticleEnsemble read_ensemble_csv(std::istream& in);

}  // namespace mfc
