// Acceptance criteria 1-10, one PASS/FAIL line each. Exit status 1 if any fails.

#include "mfc/measure_space.hpp"
#include "mfc/verification.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mfc;

namespace {

constexpr std::uint64_t kSeed = 7;
constexpr double kOracleSeconds = 30.0;
constexpr double kFullSuiteSeconds = 60.0;
constexpr std::size_t kOracleInstances = 20;
constexpr std::size_t kHjbSamples = 50;
constexpr std::size_t kMasterSamples = 100;
constexpr std::size_t kEstimateInstances = 50;
constexpr std::size_t kMonotonePairs = 20;
constexpr std::size_t kW2Pairs = 100;
constexpr std::size_t kW2MaxParticles = 8;
constexpr std::size_t kMetricTriples = 200;
constexpr double kMetricSlack = 1e-12;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Selection {
    std::size_t count = 0;
    std::size_t failed = 0;
    std::set<std::string> instances;
    double worst = 0.0;
    std::string first_failure;

    bool ok() const { return count > 0 && failed == 0; }
};

/// Checks whose name is listed (a trailing '=' matches by prefix), optionally filtered.
Selection select(const AuditReport& report, const std::vector<std::string>& names,
                 const std::function<bool(const Check&)>& filter = {}) {
    Selection s;
    for (const Check& c : report.checks()) {
        bool hit = false;
        for (const auto& n : names) hit = hit || (n.back() == '=' ? c.name.rfind(n, 0) == 0 : c.name == n);
        if (!hit || (filter && !filter(c))) continue;
        ++s.count;
        s.instances.insert(c.suite + "|" + c.instance);
        s.worst = std::max(s.worst, std::abs(c.observed));
        if (!c.pass && s.failed++ == 0) {
            std::ostringstream msg;
            msg << "first failure " << c.name << " on " << c.instance << ": observed " << c.observed << " bound "
                << c.bound;
            s.first_failure = msg.str();
        }
    }
    return s;
}

Selection suite_checks(const AuditReport& report, const std::string& suite) {
    Selection s;
    for (const Check& c : report.checks()) {
        if (c.suite != suite) continue;
        ++s.count;
        s.instances.insert(c.instance);
        if (!c.pass && s.failed++ == 0) {
            std::ostringstream msg;
            msg << "first failure " << c.name << " on " << c.instance << ": observed " << c.observed << " bound "
                << c.bound;
            s.first_failure = msg.str();
        }
    }
    return s;
}

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("criterion %2d: %s  %s [%s]\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string describe(const Selection& s, const std::string& extra = "") {
    std::ostringstream out;
    out << s.count << " checks, " << s.failed << " failed";
    if (!extra.empty()) out << ", " << extra;
    if (!s.first_failure.empty()) out << "; " << s.first_failure;
    return out.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

bool is_scalar_case(const Check& c) { return c.instance.rfind("scalar tanh", 0) == 0; }

std::string serialise(const AuditReport& r) {
    std::ostringstream out;
    r.write_csv(out);
    r.write_summary(out);
    return out.str();
}

void wasserstein_criterion() {
    std::mt19937_64 rng(kSeed);
    std::uniform_int_distribution<std::size_t> count(1, kW2MaxParticles);
    std::size_t mismatches = 0;
    double worst_brute = 0.0;
    for (std::size_t trial = 0; trial < kW2Pairs; ++trial) {
        const auto N = static_cast<Eigen::Index>(count(rng));
        const Matrix a = oracle::random_matrix(rng, N, 1);
        const Matrix b = oracle::random_matrix(rng, N, 1);
        const WassersteinResult sorted = wasserstein2(ParticleEnsemble(a), ParticleEnsemble(b));
        Matrix cost(N, N);
        for (Eigen::Index i = 0; i < N; ++i)
            for (Eigen::Index j = 0; j < N; ++j) cost(i, j) = (a(i, 0) - b(j, 0)) * (a(i, 0) - b(j, 0));
        const std::vector<std::size_t> lp = hungarian_assignment(cost);
        // The same summation for both matchings, so equal optima agree bit for bit.
        if (oracle::matching_cost(a, b, sorted.matching) != oracle::matching_cost(a, b, lp)) ++mismatches;
        worst_brute = std::max(worst_brute, std::abs(sorted.distance - oracle::brute_force_w2(a, b)));
    }

    std::size_t violations = 0;
    std::uniform_int_distribution<std::size_t> dim(1, 3);
    for (std::size_t trial = 0; trial < kMetricTriples; ++trial) {
        const std::size_t N = count(rng);
        const std::size_t n = dim(rng);
        const auto rows = static_cast<Eigen::Index>(N), cols = static_cast<Eigen::Index>(n);
        const ParticleEnsemble x(oracle::random_matrix(rng, rows, cols));
        const ParticleEnsemble y(oracle::random_matrix(rng, rows, cols));
        const ParticleEnsemble z(oracle::random_matrix(rng, rows, cols));
        const double xy = wasserstein2(x, y).distance;
        const bool ok = xy >= 0.0 && wasserstein2(x, x).distance <= kMetricSlack &&
                        std::abs(xy - wasserstein2(y, x).distance) <= kMetricSlack &&
                        xy <= wasserstein2(x, z).distance + wasserstein2(z, y).distance + kMetricSlack;
        if (!ok) ++violations;
    }
    verdict(8, mismatches == 0 && violations == 0 && worst_brute <= kMetricSlack,
            "1-D sort matching equals LP assignment; W2 metric axioms",
            std::to_string(kW2Pairs) + " pairs N<=8, " + std::to_string(mismatches) + " cost mismatches, max |sort - brute force| " +
                sci(worst_brute) + "; " + std::to_string(kMetricTriples) + " triples, " + std::to_string(violations) +
                " axiom violations");
}

}  // namespace

int main() {
    std::printf("acceptance run, seed %llu\n", static_cast<unsigned long long>(kSeed));

    const auto oracle_start = std::chrono::steady_clock::now();
    const AuditReport oracle_report = run_suite("oracle", kSeed);
    const double oracle_seconds = seconds_since(oracle_start);

    const auto full_start = std::chrono::steady_clock::now();
    const AuditReport all = run_suite("all", kSeed);
    const double full_seconds = seconds_since(full_start);
    const AuditReport again = run_suite("all", kSeed);

    {
        const auto not_scalar = [](const Check& c) { return !is_scalar_case(c); };
        const Selection value = select(oracle_report, {"value_relative_deviation"}, not_scalar);
        const Selection grad = select(oracle_report, {"gradient_max_particle_deviation"}, not_scalar);
        const bool pass = value.ok() && grad.ok() && value.count == kOracleInstances &&
                          grad.count == kOracleInstances && oracle_seconds <= kOracleSeconds;
        verdict(1, pass, "fixed point vs Riccati oracle (rel value <= 1e-5, gradient <= 1e-5, <= 30 s)",
                std::to_string(value.count) + " instances, max rel value " + sci(value.worst) + ", max gradient " +
                    sci(grad.worst) + ", " + sci(oracle_seconds) + " s" +
                    (value.first_failure.empty() ? "" : "; " + value.first_failure) +
                    (grad.first_failure.empty() ? "" : "; " + grad.first_failure));
    }
    {
        const Selection s = select(all,
                                   {"scalar_P0_vs_tanh", "scalar_value_fixed_point", "scalar_value_closed_form",
                                    "scalar_path_fixed_point", "scalar_path_closed_form", "contraction_ratio_sharp",
                                    "converged"},
                                   is_scalar_case);
        verdict(2, s.ok() && s.count == 7, "scalar Q=1, lambda=1, T=0.5 against tanh and cosh",
                describe(s, "P(0) error " + sci(select(all, {"scalar_P0_vs_tanh"}).worst)));
    }
    {
        const Selection ratio = select(all, {"contraction_ratio"});
        const Selection iters = select(all, {"iterations_with_quarter_margin"});
        verdict(3, ratio.ok() && iters.ok(), "successive ratio <= c tau(1+tau)/lambda + 0.05; <= 200 iterations",
                std::to_string(ratio.count) + " solves, " + std::to_string(ratio.failed) + " ratio failures, " +
                    std::to_string(iters.count) + " quarter-margin solves, worst iterations " + sci(iters.worst) +
                    (ratio.first_failure.empty() ? "" : "; " + ratio.first_failure) +
                    (iters.first_failure.empty() ? "" : "; " + iters.first_failure));
    }
    {
        const Selection residual = select(all, {"hjb_fd_residual"});
        const Selection order = select(all, {"hjb_observed_order"});
        const Selection degenerate = select(all, {"hjb_order_degenerate"});
        double min_order = std::numeric_limits<double>::infinity();
        for (const Check& c : all.checks())
            if (c.name == "hjb_observed_order") min_order = std::min(min_order, c.observed);
        verdict(4, residual.ok() && residual.count >= kHjbSamples && order.ok() && degenerate.failed == 0,
                "HJB residual <= 5e-3 at h=1e-3, observed order >= 1.8",
                std::to_string(residual.count) + " samples, max residual " + sci(residual.worst) + ", " +
                    std::to_string(order.count) + " order estimates, min order " + sci(min_order) +
                    (residual.first_failure.empty() ? "" : "; " + residual.first_failure) +
                    (order.first_failure.empty() ? "" : "; " + order.first_failure));
    }
    {
        const Selection closed = select(all, {"scalar_master_residual", "vector_master_residual", "bellman_residual",
                                              "linearized_field_residual", "gamma_matches_sigma_mass_derivative",
                                              "gamma_equation_residual"});
        const Selection fd = select(all, {"vector_master_fd_residual"});
        // master_checks reports the worst of 10 samples per instance.
        const std::size_t samples = 10 * select(all, {"scalar_master_residual"}).count;
        verdict(5, closed.ok() && fd.ok() && samples >= kMasterSamples,
                "closed-form master residuals <= 1e-6; finite-difference vector master <= 5e-3",
                std::to_string(samples) + " closed-form samples, max " + sci(closed.worst) + ", " +
                    std::to_string(fd.count) + " generic-solver residuals, max " + sci(fd.worst) +
                    (closed.first_failure.empty() ? "" : "; " + closed.first_failure) +
                    (fd.first_failure.empty() ? "" : "; " + fd.first_failure));
    }
    {
        const Selection s = suite_checks(all, "estimates");
        bool near_critical = false;
        for (const auto& inst : s.instances) near_critical = near_critical || inst.rfind("near-critical", 0) == 0;
        verdict(6, s.ok() && s.instances.size() >= kEstimateInstances && near_critical,
                "estimate inequalities with slack >= -1e-9, including a near-critical instance",
                describe(s, std::to_string(s.instances.size()) + " instances" +
                                (near_critical ? ", near-critical present" : ", near-critical MISSING")));
    }
    {
        const Selection s = suite_checks(all, "monotonicity");
        const Selection pairs = select(all, {"value_pairing"});
        verdict(7, s.ok() && pairs.count >= kMonotonePairs, "monotonicity pairing >= -1e-10 on random law pairs",
                describe(s, std::to_string(pairs.count) + " pairs"));
    }
    wasserstein_criterion();
    {
        const Selection s = suite_checks(all, "gradients");
        const Selection final_err = select(all, {"directional_error_final"});
        const Selection order = select(all, {"directional_error_decay_order"});
        verdict(9, s.ok() && final_err.ok() && order.ok(),
                "directional differences match the gradient, first-order decay, final error <= 1e-3",
                describe(s, "max final relative error " + sci(final_err.worst)));
    }
    {
        const bool identical = serialise(all) == serialise(again);
        verdict(10, identical && full_seconds <= kFullSuiteSeconds && all.all_passed(),
                "audit all --seed 7 is byte-identical across runs and finishes in <= 60 s",
                std::string(identical ? "identical" : "DIFFERENT") + " reports, " + sci(full_seconds) + " s, " +
                    std::to_string(all.failures()) + " failures in " + std::to_string(all.checks().size()) + " checks");
    }

    std::printf("%s: %d of 10 criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
