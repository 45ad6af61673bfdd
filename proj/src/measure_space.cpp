#include "mfc/measure_space.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mfc {

ParticleEnsemble::ParticleEnsemble(std::size_t count, std::size_t dim)
    : points_(Matrix::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim))) {
    if (count == 0 || dim == 0) {
        throw ShapeError("ensemble needs at least one particle and one dimension");
    }
}

ParticleEnsemble::ParticleEnsemble(Matrix points) : points_(std::move(points)) {
    if (points_.rows() == 0 || points_.cols() == 0) {
        throw ShapeError("ensemble needs at least one particle and one dimension");
    }
}

ParticleEnsemble ParticleEnsemble::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) {
        throw ShapeError("ensemble needs at least one particle and one dimension");
    }
    const std::size_t n = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != n) {
            throw ShapeError("particle " + std::to_string(i) + " has dimension " +
                             std::to_string(rows[i].size()) + ", expected " + std::to_string(n));
        }
        for (std::size_t j = 0; j < n; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return ParticleEnsemble(std::move(m));
}

Vector ParticleEnsemble::mean() const { return points_.colwise().mean().transpose(); }

double ParticleEnsemble::second_moment() const {
    return points_.squaredNorm() / static_cast<double>(size());
}

ParticleEnsemble& ParticleEnsemble::operator+=(const ParticleEnsemble& other) {
    require_same_shape(*this, other, "addition");
    points_ += other.points_;
    return *this;
}

ParticleEnsemble& ParticleEnsemble::operator-=(const ParticleEnsemble& other) {
    require_same_shape(*this, other, "subtraction");
    points_ -= other.points_;
    return *this;
}

ParticleEnsemble& ParticleEnsemble::operator*=(double scale) {
    points_ *= scale;
    return *this;
}

ParticleEnsemble operator+(ParticleEnsemble a, const ParticleEnsemble& b) { return a += b; }
ParticleEnsemble operator-(ParticleEnsemble a, const ParticleEnsemble& b) { return a -= b; }
ParticleEnsemble operator*(double scale, ParticleEnsemble a) { return a *= scale; }

void require_same_shape(const ParticleEnsemble& a, const ParticleEnsemble& b, const char* what) {
    if (a.size() != b.size() || a.dim() != b.dim()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch (" << a.size() << "x" << a.dim() << " vs " << b.size() << "x"
            << b.dim() << ")";
        throw ShapeError(msg.str());
    }
}

double inner_product(const ParticleEnsemble& a, const ParticleEnsemble& b) {
    require_same_shape(a, b, "inner_product");
    return a.points().cwiseProduct(b.points()).sum() / static_cast<double>(a.size());
}

double norm(const ParticleEnsemble& a) { return std::sqrt(a.second_moment()); }

Vector mean(const ParticleEnsemble& a) { return a.mean(); }

ParticleEnsemble permute(const ParticleEnsemble& a, std::span<const std::size_t> perm) {
    const std::size_t N = a.size();
    if (perm.size() != N) {
        throw ShapeError("permutation length " + std::to_string(perm.size()) + " does not match " +
                         std::to_string(N) + " particles");
    }
    std::vector<bool> seen(N, false);
    Matrix out(a.points().rows(), a.points().cols());
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t p = perm[i];
        if (p >= N || seen[p]) {
            throw ShapeError("invalid permutation entry " + std::to_string(p));
        }
        seen[p] = true;
        out.row(static_cast<Eigen::Index>(i)) = a.points().row(static_cast<Eigen::Index>(p));
    }
    return ParticleEnsemble(std::move(out));
}

namespace {

Matrix squared_distances(const ParticleEnsemble& a, const ParticleEnsemble& b) {
    const auto N = static_cast<Eigen::Index>(a.size());
    Matrix cost(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < N; ++j) {
            cost(i, j) = (a.points().row(i) - b.points().row(j)).squaredNorm();
        }
    }
    return cost;
}

std::vector<std::size_t> stable_order(const Matrix& column) {
    std::vector<std::size_t> order(static_cast<std::size_t>(column.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
        return column(static_cast<Eigen::Index>(l), 0) < column(static_cast<Eigen::Index>(r), 0);
    });
    return order;
}

// Greedy nearest-pair matching followed by 2-swap descent until no swap
// lowers the cost.
std::vector<std::size_t> approximate_assignment(const Matrix& cost) {
    const std::size_t N = static_cast<std::size_t>(cost.rows());
    std::vector<std::size_t> match(N);
    std::vector<bool> used(N, false);
    for (std::size_t i = 0; i < N; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < N; ++j) {
            const double c = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (!used[j] && c < best) {
                best = c;
                arg = j;
            }
        }
        used[arg] = true;
        match[i] = arg;
    }
    auto c = [&](std::size_t i, std::size_t j) {
        return cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    };
    bool improved = true;
    while (improved) {
        improved = false;
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t k = i + 1; k < N; ++k) {
                const double now = c(i, match[i]) + c(k, match[k]);
                const double swapped = c(i, match[k]) + c(k, match[i]);
                if (swapped < now - 1e-15 * (1.0 + now)) {
                    std::swap(match[i], match[k]);
                    improved = true;
                }
            }
        }
    }
    return match;
}

}  // namespace

std::vector<std::size_t> hungarian_assignment(const Matrix& cost) {
    if (cost.rows() != cost.cols()) {
        throw ShapeError("assignment needs a square cost matrix");
    }
    // Shortest augmenting path with row/column potentials, 1-based with a
    // virtual column 0.
    const std::size_t N = static_cast<std::size_t>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(N + 1, 0.0), v(N + 1, 0.0), minv(N + 1);
    std::vector<std::size_t> p(N + 1, 0), way(N + 1, 0);
    std::vector<bool> used(N + 1);
    for (std::size_t i = 1; i <= N; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= N; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                                   u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= N; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> match(N);
    for (std::size_t j = 1; j <= N; ++j) {
        match[p[j] - 1] = j - 1;
    }
    return match;
}

WassersteinResult wasserstein2(const ParticleEnsemble& a, const ParticleEnsemble& b,
                               std::size_t exact_cutoff) {
    require_same_shape(a, b, "wasserstein2");
    const std::size_t N = a.size();
    WassersteinResult result;
    result.matching.resize(N);
    if (a.dim() == 1) {
        const auto oa = stable_order(a.points());
        const auto ob = stable_order(b.points());
        for (std::size_t r = 0; r < N; ++r) {
            result.matching[oa[r]] = ob[r];
        }
    } else if (N <= exact_cutoff) {
        result.matching = hungarian_assignment(squared_distances(a, b));
    } else {
        result.matching = approximate_assignment(squared_distances(a, b));
        result.exact = false;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        total += (a.points().row(static_cast<Eigen::Index>(i)) -
                  b.points().row(static_cast<Eigen::Index>(result.matching[i])))
                     .squaredNorm();
    }
    result.distance = std::sqrt(total / static_cast<double>(N));
    return result;
}

TimeGrid::TimeGrid(double t0, double horizon, std::size_t intervals) : t0_(t0), T_(horizon), M_(intervals) {
    if (intervals < 2) {
        throw std::invalid_argument("time grid needs at least 2 intervals");
    }
    if (!(horizon > t0)) {
        throw std::invalid_argument("time grid needs T > t0");
    }
}

double TimeGrid::node(std::size_t k) const {
    if (k >= M_) {
        return T_;
    }
    return t0_ + (T_ - t0_) * static_cast<double>(k) / static_cast<double>(M_);
}

void write_ensemble_csv(std::ostream& out, const ParticleEnsemble& a) {
    for (std::size_t j = 0; j < a.dim(); ++j) {
        out << (j ? "," : "") << 'x' << j;
    }
    out << '\n';
    const auto old_precision = out.precision(17);
    for (Eigen::Index i = 0; i < a.points().rows(); ++i) {
        for (Eigen::Index j = 0; j < a.points().cols(); ++j) {
            out << (j ? "," : "") << a.points()(i, j);
        }
        out << '\n';
    }
    out.precision(old_precision);
}

ParticleEnsemble read_ensemble_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ShapeError("ensemble CSV is empty");
    }
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            row.push_back(std::stod(cell));
        }
        if (row.size() != columns) {
            throw ShapeError("ensemble CSV row has " + std::to_string(row.size()) + " columns, expected " +
                             std::to_string(columns));
        }
        rows.push_back(std::move(row));
    }
    return ParticleEnsemble::from_rows(rows);
}

}  // namespace mfc
