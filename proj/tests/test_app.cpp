#include "mfc/app.hpp"
#include "mfc/config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mfc;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kQuadratic = R"(
[model]
kind = quadratic
lambda = 4
T = 0.5
Q = 1
Qbar = 0
S = 0
QT = 0
QbarT = 0
ST = 0
[ensemble]
points = 1; -0.5; 2   # three particles
[solver]
grid = 100
)";

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mfc_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("matrix literals") {
    const Matrix a = parse_matrix("1, 2; 3 4");
    CHECK(a.rows() == 2);
    CHECK(a(1, 0) == 3.0);
    CHECK(a(1, 1) == 4.0);
    CHECK(parse_matrix("-1.5e-3")(0, 0) == -1.5e-3);
    CHECK_THROWS_AS(parse_matrix("1, 2; 3"), ConfigError);
    CHECK_THROWS_AS(parse_matrix("1, x"), ConfigError);
}

TEST_CASE("quadratic config") {
    const ExperimentConfig cfg = parse(kQuadratic);
    REQUIRE(cfg.quadratic.has_value());
    CHECK_FALSE(cfg.kernel_problem.has_value());
    CHECK(cfg.quadratic->lambda == 4.0);
    CHECK(cfg.X.size() == 3);
    CHECK(cfg.X.points()(2, 0) == 2.0);
    CHECK(cfg.grid == 100);
    CHECK(cfg.problem().c == doctest::Approx(2.0));
}

TEST_CASE("kernel config with a seeded sampler") {
    const std::string text = R"(
[model]
kind = kernel
dim = 2
lambda = 3
T = 0.5
running = gaussian
running_amplitude = 0.5
running_width = 1
terminal = bilinear
terminal_matrix = 0.5, 0; 0, 0.2
[ensemble]
sampler = gaussian
count = 12
mean = 1, -1
seed = 5
)";
    const ExperimentConfig a = parse(text);
    const ExperimentConfig b = parse(text);
    CHECK(a.kernel_problem.has_value());
    CHECK(a.X.size() == 12);
    CHECK(a.X.dim() == 2);
    CHECK(a.X.points() == b.X.points());
}

TEST_CASE("config errors name the section and key") {
    CHECK(error_of(std::string(kQuadratic) + "extra = 1\n").find("[solver] extra") != std::string::npos);
    CHECK(error_of(std::string(kQuadratic) + "grid = 5\n").find("[solver] grid") != std::string::npos);
    std::string no_lambda = kQuadratic;
    no_lambda.replace(no_lambda.find("lambda = 4"), 10, "");
    CHECK(error_of(no_lambda).find("[model] lambda") != std::string::npos);
    std::string bad_q = kQuadratic;
    bad_q.replace(bad_q.find("Q = 1"), 5, "Q = 1, 2");
    CHECK(error_of(bad_q).find("[model] Q") != std::string::npos);
    CHECK(error_of("[bogus]\n").find("bogus") != std::string::npos);
    CHECK(error_of("[model]\nkind = cubic\nlambda = 1\nT = 1\n").find("[model] kind") != std::string::npos);
    const std::string unseeded = R"(
[model]
kind = kernel
dim = 1
lambda = 3
T = 0.5
running = bilinear
running_matrix = 1
terminal = bilinear
terminal_matrix = 1
[ensemble]
sampler = gaussian
count = 4
mean = 0
)";
    CHECK(error_of(unseeded).find("[ensemble] seed") != std::string::npos);
    CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("solve writes its outputs") {
    const fs::path dir = scratch_dir("solve");
    const fs::path config = write_file(dir, "q.ini", kQuadratic);
    SolveRequest req;
    req.config_path = config.string();
    req.out_dir = (dir / "out").string();
    std::ostringstream log, err;
    CHECK(run_solve(req, log, err) == kExitOk);
    for (const char* f : {"trajectory.csv", "value_path.csv", "gradient.csv", "riccati.csv", "summary.csv",
                          "value.svg", "riccati_P.svg", "trajectories.svg"}) {
        CAPTURE(f);
        CHECK(fs::exists(dir / "out" / f));
    }
    CHECK(slurp(dir / "out" / "summary.csv").rfind("quantity,value\n", 0) == 0);
    CHECK(slurp(dir / "out" / "value.svg").find("<svg") != std::string::npos);
}

TEST_CASE("solve exit codes") {
    const fs::path dir = scratch_dir("codes");
    std::ostringstream log, err;

    SolveRequest bad;
    bad.config_path = write_file(dir, "bad.ini", "[model]\nkind = quadratic\nfoo = 1\n").string();
    CHECK(run_solve(bad, log, err) == kExitParseError);

    std::string tanh = kQuadratic;
    tanh.replace(tanh.find("lambda = 4"), 10, "lambda = 1");
    SolveRequest refused;
    refused.config_path = write_file(dir, "tanh.ini", tanh).string();
    refused.out_dir = (dir / "tanh").string();
    CHECK(run_solve(refused, log, err) == kExitInadmissible);
    refused.force_inadmissible = true;
    CHECK(run_solve(refused, log, err) == kExitOk);

    std::string stubborn = kQuadratic;
    stubborn.replace(stubborn.find("grid = 100"), 10, "grid = 100\nmax_iter = 2");
    SolveRequest slow;
    slow.config_path = write_file(dir, "slow.ini", stubborn).string();
    slow.out_dir = (dir / "slow").string();
    CHECK(run_solve(slow, log, err) == kExitNonconvergence);
}

TEST_CASE("audit exit codes and reports") {
    const fs::path dir = scratch_dir("audit");
    std::ostringstream log, err;
    AuditRequest req;
    req.suite = "gradients";
    req.out_dir = dir.string();
    CHECK(run_audit(req, log, err) == kExitOk);
    CHECK(fs::exists(dir / "audit_gradients.csv"));
    CHECK(fs::exists(dir / "audit_gradients.txt"));
    req.suite = "bogus";
    CHECK(run_audit(req, log, err) == kExitParseError);
    req.suite = "estimates";
    req.grid = 40;
    req.force_inadmissible = true;
    CHECK(run_audit(req, log, err) == kExitInadmissible);
}
