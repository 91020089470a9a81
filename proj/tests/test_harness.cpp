#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "commsim/error.hpp"
#include "commsim/harness.hpp"
#include "helpers.hpp"

using namespace commsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("commsim_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) header.push_back(cell);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::map<std::string, std::string> row;
    std::stringstream ls(line);
    std::size_t k = 0;
    for (std::string cell; k < header.size(); ++k) {
      if (!std::getline(ls, cell, ',')) cell.clear();
      row[header[k]] = cell;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string config_error_path(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

const char* kMinimal = R"({
  "problem": {"family": "quadratic", "n": 4, "d": 50},
  "method": {"algorithm": "gd"},
  "stop": {"eps": 1e-6, "max_iters": 20000}
})";

}  // namespace

TEST_CASE("minimal config takes the documented defaults") {
  const ExperimentConfig c = parse_config(kMinimal);
  CHECK(c.label == "run");
  CHECK(c.repeats == 1);
  CHECK(c.seed == 0);
  CHECK(c.stride == 1);
  CHECK(c.output == "out");
  CHECK(c.cost.unit == CostUnit::Coordinates);
  CHECK(c.problem.family == ProblemFamily::Quadratic);
  CHECK(c.problem.n == 4);
  CHECK(c.problem.d == 50);
  CHECK(c.problem.v == 1.0);
  CHECK(c.problem.sigma == 0.0);
  CHECK(c.problem.base == QuadraticBase::Tridiagonal);
  CHECK(c.problem.seed == 1);
  CHECK(c.method.algorithm == Algorithm::GD);
  CHECK(c.method.name == "gd");
  CHECK_FALSE(c.method.gamma);
  CHECK(c.method.gamma_multiplier == 1.0);
  CHECK(c.stop.max_iters == 20000);
  CHECK(*c.stop.eps == 1e-6);
  CHECK(c.sweep.methods.empty());
}

TEST_CASE("schema violations name the offending field") {
  CHECK(config_error_path(R"({"problem": {"family": "quadratic", "n": 4, "d": 50, "bogus": 1},
                              "method": {"algorithm": "gd"}})") == "/problem/bogus");
  CHECK(config_error_path(R"({"problem": {"n": "four"}, "method": {"algorithm": "gd"}})") ==
        "/problem/n");
  CHECK(config_error_path(R"({"problem": {}, "method": {"algorithm": "adam"}})") ==
        "/method/algorithm");
  CHECK(config_error_path(R"({"problem": {}, "method": {"algorithm": "gd"}, "repeats": 0})") ==
        "/repeats");
  CHECK(config_error_path(R"({"problem": {}, "method": {"algorithm": "marina_p"}})") ==
        "/method/primal");
  CHECK(config_error_path(R"({"problem": {}, "method": {"algorithm": "gd"}, "extra": true})") ==
        "/extra");
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
}

TEST_CASE("PermK with a worker count that does not divide d is rejected") {
  const char* text = R"({
    "problem": {"family": "quadratic", "n": 7, "d": 50},
    "method": {"algorithm": "marina_p", "primal": "perm_k"}
  })";
  CHECK_THROWS_AS(parse_config(text), UnsupportedShapeError);
}

TEST_CASE("replica configs are accepted") {
  const std::string dir = COMMSIM_CONFIG_DIR;
  const ExperimentConfig f1 = load_config(dir + "/f1_m3.json");
  CHECK(f1.problem.n == 100);
  CHECK(f1.problem.d == 1000);
  CHECK(f1.problem.base == QuadraticBase::Identity);
  CHECK(f1.problem.sigma == 0.1);
  CHECK(f1.method.algorithm == Algorithm::M3);
  for (const char* name : {"minimal_gd.json", "fig1_replica.json", "matfac.json", "chain.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(dir + "/" + name));
  }
}

TEST_CASE("configs survive a JSON round trip") {
  const ExperimentConfig c = load_config(std::string(COMMSIM_CONFIG_DIR) + "/f1_m3.json");
  const nlohmann::json once = to_json(c);
  const nlohmann::json twice = to_json(parse_config(once.dump()));
  CHECK(once == twice);
  const ExperimentConfig m = parse_config(kMinimal);
  CHECK(to_json(parse_config(to_json(m).dump())) == to_json(m));
}

TEST_CASE("quadratic ensembles survive a JSON round trip") {
  ProblemSpec spec;
  spec.n = 5;
  spec.d = 30;
  spec.sigma = 0.2;
  spec.v0 = 1.0;
  const auto built = build_problem(spec);
  const auto& ens = dynamic_cast<const QuadraticEnsemble&>(*built);
  const fs::path dir = scratch_dir("quadratic");
  save_quadratic(ens, (dir / "q.json").string());
  const QuadraticEnsemble back = load_quadratic((dir / "q.json").string());
  CHECK(back.workers() == 5);
  CHECK(back.dim() == 30);
  Stream rng = testing::rng_for(60);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec x = testing::gaussian(30, rng);
    CHECK(back.value(x) == ens.value(x));
    for (std::size_t i = 0; i < 5; ++i) CHECK(back.worker_grad(i, x) == ens.worker_grad(i, x));
  }
  CHECK(quadratic_to_json(back) == quadratic_to_json(ens));
}

TEST_CASE("theory parameters for MARINA-P") {
  const ExperimentConfig c = parse_config(R"({
    "problem": {"family": "quadratic", "n": 5, "d": 40, "sigma": 0.1, "v0": 0.5},
    "method": {"algorithm": "marina_p", "primal": "perm_k", "gamma_multiplier": 4}
  })");
  const auto problem = build_problem(c.problem);
  const ProblemConstants k = quad_constants(dynamic_cast<const QuadraticEnsemble&>(*problem));
  const AlgoConfig cfg = resolve_method(c.method, *problem, k);
  CHECK(cfg.p == doctest::Approx(0.2));
  CHECK(cfg.gamma == doctest::Approx(4.0 * step_marinap_general(k.L, k.L_A, k.L_B, 4.0, 0.0, 0.2)));
  CHECK(cfg.primal->mode() == CollectionMode::Correlated);
}

TEST_CASE("run output is deterministic and complete") {
  ExperimentConfig c = parse_config(R"({
    "label": "det",
    "problem": {"family": "quadratic", "n": 4, "d": 40, "sigma": 0.1, "v0": 0.5},
    "method": {"algorithm": "marina_p", "primal": "perm_k"},
    "stop": {"eps": 1e-2, "max_iters": 50000},
    "repeats": 3,
    "stride": 50
  })");
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    c.output = scratch_dir("run" + std::to_string(pass)).string();
    std::ostringstream log;
    const CommandReport report = cmd_run(c, log);
    CHECK(report.ok);
    CHECK(report.files.size() == 5);
    for (const auto& f : report.files) {
      const std::string name = fs::path(f).filename().string();
      if (pass == 0) {
        first[name] = slurp(f);
      } else {
        CHECK(first.at(name) == slurp(f));
      }
    }
  }
  CHECK(first.count("det_seed0.csv"));
  CHECK(first.count("det_mean.csv"));
  const auto rows = read_csv(fs::path(c.output) / "summary.csv");
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.at("status") == "reached");
  // The averaged trace is as long as the shortest per-seed trace.
  std::size_t shortest = SIZE_MAX;
  for (int s = 0; s < 3; ++s) {
    shortest = std::min(shortest,
                        read_csv(fs::path(c.output) / ("det_seed" + std::to_string(s) + ".csv")).size());
  }
  CHECK(read_csv(fs::path(c.output) / "det_mean.csv").size() == shortest);
}

TEST_CASE("sweep selects the cheapest multiplier per method and n") {
  ExperimentConfig c = parse_config(R"({
    "label": "sw",
    "problem": {"family": "quadratic", "n": 4, "d": 40, "sigma": 0.1, "v0": 0.5},
    "method": {"algorithm": "gd"},
    "stop": {"eps": 1e-2, "max_iters": 20000},
    "repeats": 2,
    "sweep": {
      "n": [4, 5],
      "gamma_exponents": [-1, 0, 1, 4],
      "methods": [
        {"name": "gd", "algorithm": "gd"},
        {"name": "mp", "algorithm": "marina_p", "primal": "perm_k"}
      ]
    }
  })");
  c.output = scratch_dir("sweep").string();
  std::ostringstream log;
  const CommandReport report =
      cmd_sweep(c, {SweepAxis::N, SweepAxis::Gamma, SweepAxis::Algorithm}, log);
  CHECK(report.ok);
  const auto rows = read_csv(fs::path(c.output) / "sweep.csv");
  CHECK(rows.size() == 2 * 2 * 4);
  std::map<std::string, std::vector<std::map<std::string, std::string>>> groups;
  for (const auto& r : rows) groups[r.at("method") + "_n" + r.at("n")].push_back(r);
  CHECK(groups.size() == 4);
  bool saw_diverged = false;
  for (const auto& [key, group] : groups) {
    CAPTURE(key);
    CHECK(fs::exists(fs::path(c.output) / (key + ".csv")));
    const std::map<std::string, std::string>* best = nullptr;
    for (const auto& r : group) {
      saw_diverged = saw_diverged || r.at("status") == "diverged";
      if (r.at("best") == "1") {
        CHECK(best == nullptr);
        best = &r;
      }
    }
    REQUIRE(best != nullptr);
    REQUIRE(best->at("status") == "reached");
    const double best_total = std::stod(best->at("total"));
    for (const auto& r : group) {
      if (r.at("status") != "reached") continue;
      const double total = std::stod(r.at("total"));
      CHECK(best_total <= total);
      if (total == best_total) CHECK(std::stoi(best->at("exponent")) <= std::stoi(r.at("exponent")));
    }
  }
  CHECK(saw_diverged);
}

TEST_CASE("axis names") {
  CHECK(parse_axis("n") == SweepAxis::N);
  CHECK(parse_axis("gamma") == SweepAxis::Gamma);
  CHECK(parse_axis("algorithm") == SweepAxis::Algorithm);
  CHECK_THROWS(parse_axis("beta"));
}

TEST_CASE("estimate reports stated and measured constants") {
  std::ostringstream out;
  const CommandReport r = cmd_estimate(
      R"({"compressor": {"kind": "rand_k", "k": 10}, "d": 100, "n": 10, "samples": 20000, "seed": 3})",
      out);
  CHECK(r.ok);
  const std::string text = out.str();
  const auto pos = text.find("omega: stated 9 estimated ");
  REQUIRE(pos != std::string::npos);
  const double est = std::stod(text.substr(pos + 26));
  CHECK(std::abs(est - 9.0) <= 0.05 * 9.0);
  CHECK(text.find("theta: stated") != std::string::npos);
  CHECK_THROWS_AS(cmd_estimate(R"({"compressor": "rand_k", "samples": 10})", out), ConfigError);
}

TEST_CASE("verify suites pass") {
  std::ostringstream out;
  const CommandReport r = cmd_verify("compressors", out);
  CHECK(r.ok);
  CHECK(out.str().find("FAIL") == std::string::npos);
  CHECK(out.str().find("PASS") != std::string::npos);
  CHECK_THROWS(cmd_verify("nonsense", out));
}
