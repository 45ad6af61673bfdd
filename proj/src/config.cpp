#include "mfc/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

namespace mfc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

class Section {
public:
    explicit Section(std::string name) : name_(std::move(name)) {}

    void set(const std::string& key, const std::string& value, std::size_t line) {
        if (values_.count(key)) fail(key, "duplicate key (line " + std::to_string(line) + ")");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string text(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) fail(key, "missing required key");
        used_.insert(key);
        return it->second;
    }

    std::string text_or(const std::string& key, const std::string& fallback) {
        return has(key) ? text(key) : fallback;
    }

    double number(const std::string& key) { return to_number(key, text(key)); }
    double number_or(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

    std::size_t count_or(const std::string& key, std::size_t fallback) {
        if (!has(key)) return fallback;
        const double v = number(key);
        if (v < 0 || v != std::floor(v)) fail(key, "expected a nonnegative integer");
        return static_cast<std::size_t>(v);
    }

    std::uint64_t seed(const std::string& key) {
        const std::string v = text(key);
        try {
            std::size_t pos = 0;
            const auto s = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return s;
        } catch (const std::exception&) {
            fail(key, "expected an unsigned integer, got '" + v + "'");
        }
    }

    bool flag_or(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        std::string v = text(key);
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        fail(key, "expected a boolean, got '" + v + "'");
    }

    Matrix matrix(const std::string& key) {
        try {
            return parse_matrix(text(key));
        } catch (const ConfigError& e) {
            fail(key, e.what());
        }
    }

    Matrix square(const std::string& key, Eigen::Index n) {
        Matrix m = matrix(key);
        if (m.rows() != n || m.cols() != n) {
            fail(key, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix, got " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        }
        return m;
    }

    void reject_unused() const {
        for (const auto& [key, value] : values_) {
            if (!used_.count(key)) fail(key, "unknown key");
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        throw ConfigError("[" + name_ + "] " + key + ": " + why);
    }

private:
    double to_number(const std::string& key, const std::string& v) const {
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (trim(v.substr(pos)).size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            fail(key, "expected a number, got '" + v + "'");
        }
    }

    std::string name_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

Kernel parse_kernel(Section& s, const std::string& which, std::size_t dim) {
    const std::string kind = s.text(which);
    if (kind == "gaussian") {
        const double amplitude = s.number(which + "_amplitude");
        const double width = s.number(which + "_width");
        if (!(width > 0.0)) s.fail(which + "_width", "must be positive");
        return Kernel::gaussian(dim, amplitude, width);
    }
    if (kind == "bilinear") {
        Matrix A = s.square(which + "_matrix", static_cast<Eigen::Index>(dim));
        if ((A - A.transpose()).norm() > 1e-12 * (1.0 + A.norm())) s.fail(which + "_matrix", "must be symmetric");
        return Kernel::bilinear(std::move(A));
    }
    s.fail(which, "expected gaussian or bilinear, got '" + kind + "'");
}

ParticleEnsemble sample_gaussian(Section& s) {
    const std::size_t count = s.count_or("count", 0);
    if (count == 0) s.fail("count", "missing or zero particle count");
    const Matrix mean = s.matrix("mean");
    if (mean.rows() != 1 && mean.cols() != 1) s.fail("mean", "expected a vector");
    const Vector mu = mean.rows() == 1 ? Vector(mean.row(0).transpose()) : Vector(mean.col(0));
    const auto n = mu.size();
    const Matrix cov = s.has("cov") ? s.square("cov", n) : Matrix(Matrix::Identity(n, n));
    if ((cov - cov.transpose()).norm() > 1e-12 * (1.0 + cov.norm())) s.fail("cov", "must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-12 * (1.0 + cov.norm())) s.fail("cov", "must be positive semidefinite");
    const Matrix root =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    if (!s.has("seed")) s.fail("seed", "sampling needs an explicit seed");
    std::mt19937_64 rng(s.seed("seed"));
    std::normal_distribution<double> nd;
    Matrix pts(static_cast<Eigen::Index>(count), n);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        Vector z(n);
        for (Eigen::Index j = 0; j < n; ++j) z(j) = nd(rng);
        pts.row(i) = (mu + root * z).transpose();
    }
    return ParticleEnsemble(std::move(pts));
}

}  // namespace

Matrix parse_matrix(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::stringstream rs(text);
    std::string row;
    while (std::getline(rs, row, ';')) {
        std::replace(row.begin(), row.end(), ',', ' ');
        std::stringstream es(row);
        std::vector<double> values;
        std::string token;
        while (es >> token) {
            try {
                std::size_t pos = 0;
                values.push_back(std::stod(token, &pos));
                if (pos != token.size()) throw std::invalid_argument(token);
            } catch (const std::exception&) {
                throw ConfigError("bad matrix entry '" + token + "'");
            }
        }
        if (values.empty()) throw ConfigError("empty matrix row in '" + text + "'");
        if (!rows.empty() && values.size() != rows.front().size()) {
            throw ConfigError("ragged matrix rows in '" + text + "'");
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ConfigError("empty matrix");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

ControlProblem ExperimentConfig::problem() const {
    if (quadratic) return ControlProblem::from_quadratic(*quadratic);
    return *kernel_problem;
}

ExperimentConfig parse_config(std::istream& in) {
    std::map<std::string, Section> sections;
    for (const char* name : {"model", "ensemble", "solver", "outputs"}) sections.emplace(name, Section(name));
    Section* current = nullptr;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string text = trim(raw.substr(0, raw.find('#')));
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError("line " + std::to_string(line) + ": unterminated section header");
            const std::string name = trim(text.substr(1, text.size() - 2));
            auto it = sections.find(name);
            if (it == sections.end()) throw ConfigError("line " + std::to_string(line) + ": unknown section [" + name + "]");
            current = &it->second;
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected key = value");
        if (!current) throw ConfigError("line " + std::to_string(line) + ": key outside of any section");
        const std::string key = trim(text.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line) + ": empty key");
        current->set(key, trim(text.substr(eq + 1)), line);
    }

    ExperimentConfig cfg;
    Section& model = sections.at("model");
    const std::string kind = model.text("kind");
    const double lambda = model.number("lambda");
    const double T = model.number("T");
    if (!(lambda > 0.0)) model.fail("lambda", "must be positive");
    if (!(T > 0.0)) model.fail("T", "must be positive");
    std::size_t dim = 0;
    if (kind == "quadratic") {
        QuadraticModel m;
        m.Q = model.matrix("Q");
        const auto n = m.Q.rows();
        if (m.Q.cols() != n) model.fail("Q", "must be square");
        m.Qbar = model.square("Qbar", n);
        m.S = model.square("S", n);
        m.QT = model.square("QT", n);
        m.QbarT = model.square("QbarT", n);
        m.ST = model.square("ST", n);
        m.lambda = lambda;
        m.T = T;
        try {
            m.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("[model] ") + e.what());
        }
        dim = m.dim();
        cfg.quadratic = m;
    } else if (kind == "kernel") {
        dim = model.count_or("dim", 0);
        if (dim == 0) model.fail("dim", "kernel models need dim >= 1");
        auto running = std::make_shared<KernelCost>(parse_kernel(model, "running", dim));
        auto terminal = std::make_shared<KernelCost>(parse_kernel(model, "terminal", dim));
        cfg.kernel_problem = ControlProblem::from_costs(running, terminal, lambda, T);
    } else {
        model.fail("kind", "expected quadratic or kernel, got '" + kind + "'");
    }
    model.reject_unused();

    Section& ens = sections.at("ensemble");
    if (ens.has("points") == ens.has("sampler")) {
        ens.fail(ens.has("points") ? "sampler" : "points", "give exactly one of points or sampler");
    }
    if (ens.has("points")) {
        cfg.X = ParticleEnsemble(ens.matrix("points"));
    } else {
        const std::string sampler = ens.text("sampler");
        if (sampler != "gaussian") ens.fail("sampler", "only gaussian is supported, got '" + sampler + "'");
        cfg.X = sample_gaussian(ens);
    }
    if (cfg.X.dim() != dim) {
        ens.fail(ens.has("points") ? "points" : "mean", "particle dimension " + std::to_string(cfg.X.dim()) +
                                                            " does not match model dimension " + std::to_string(dim));
    }
    ens.reject_unused();

    Section& solver = sections.at("solver");
    cfg.grid = solver.count_or("grid", cfg.grid);
    if (cfg.grid < 2) solver.fail("grid", "need at least 2 intervals");
    cfg.solver.tol = solver.number_or("tol", cfg.solver.tol);
    if (!(cfg.solver.tol > 0.0)) solver.fail("tol", "must be positive");
    cfg.solver.max_iter = solver.count_or("max_iter", cfg.solver.max_iter);
    if (cfg.solver.max_iter == 0) solver.fail("max_iter", "must be >= 1");
    cfg.t0 = solver.number_or("t0", 0.0);
    if (!(cfg.t0 >= 0.0 && cfg.t0 < T)) solver.fail("t0", "must satisfy 0 <= t0 < T");
    solver.reject_unused();

    Section& outputs = sections.at("outputs");
    cfg.out_dir = outputs.text_or("dir", cfg.out_dir);
    cfg.plots = outputs.flag_or("plots", cfg.plots);
    outputs.reject_unused();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in);
}

}  // namespace mfc
