#pragma once

#include "mfc/bvp_solver.hpp"
#include "mfc/functionals.hpp"
#include "mfc/measure_space.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace mfc {

/// Malformed experiment file; the message names the section and key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parsed experiment. Exactly one of `quadratic` and `kernel_problem` is set.
struct ExperimentConfig {
    std::optional<QuadraticModel> quadratic;
    std::optional<ControlProblem> kernel_problem;
    ParticleEnsemble X = ParticleEnsemble(1, 1);
    double t0 = 0.0;
    std::size_t grid = 400;
    SolverConfig solver;
    std::string out_dir = "mfc_out";
    bool plots = true;

    ControlProblem problem() const;
};

/// Sections [model] [ensemble] [solver] [outputs] with key = value lines;
/// '#' starts a comment. Matrices are row-major with rows separated by ';'
/// and entries by ',' or spaces.
///
///   [model]     kind = quadratic | kernel
///               quadratic: Q Qbar S QT QbarT ST lambda T
///               kernel: dim lambda T running terminal, where each of running
///               and terminal is gaussian (with <which>_amplitude, <which>_width)
///               or bilinear (with <which>_matrix)
///   [ensemble]  points = <matrix>  or  sampler = gaussian, count, mean, cov, seed
///   [solver]    grid tol max_iter t0
///   [outputs]   dir plots
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

/// Row-major matrix literal "a, b; c, d".
Matrix parse_matrix(const std::string& text);

}  // namespace mfc
