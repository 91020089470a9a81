#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "commsim/algorithms.hpp"
#include "commsim/compressors.hpp"
#include "commsim/problems.hpp"
#include "commsim/telemetry.hpp"
#include "commsim/tuning.hpp"

namespace commsim {

enum class ProblemFamily { Quadratic, MatrixFactorization, Chain, File };

struct ProblemSpec {
  ProblemFamily family = ProblemFamily::Quadratic;
  std::size_t n = 10;
  std::size_t d = 300;
  std::uint64_t seed = 1;

  // quadratic
  QuadraticBase base = QuadraticBase::Tridiagonal;
  double v = 1.0;
  double sigma = 0.0;
  std::optional<double> v0;

  // matfac (d is derived as 2 d1 d2)
  std::size_t d1 = 784;
  std::size_t d2 = 16;
  std::size_t samples = 1000;
  double lambda = 0.001;

  // file: a saved quadratic ensemble (n and d come from the file)
  std::string path;

  // chain (d is T)
  double chain_lambda = 1.0;
  double chain_L = 1.0;

  /// Scale of the Gaussian starting point; 0 starts at the origin.
  double init_scale = 0.0;
};

/// Compressor description whose dimension and worker count are filled in when
/// the problem shape is known. k = 0 means d / n.
struct CompressorConfig {
  CompressorKind kind = CompressorKind::Identity;
  std::size_t k = 0;
  std::shared_ptr<const CompressorConfig> outer;
  std::shared_ptr<const CompressorConfig> inner;
};

CompressorSpec resolve(const CompressorConfig& config, std::size_t d, std::size_t n);

/// How M3's theory parameters are picked.
enum class M3Rule { General, Scaling };

struct MethodConfig {
  std::string name;
  Algorithm algorithm = Algorithm::GD;
  /// Explicit overrides; anything unset comes from the theory rules.
  std::optional<double> gamma;
  std::optional<double> p;
  std::optional<double> p_P;
  std::optional<double> p_D;
  std::optional<double> beta;
  double gamma_multiplier = 1.0;
  std::optional<CompressorConfig> primal;
  std::optional<CompressorConfig> dual;
  Ef21Mode ef21_mode = Ef21Mode::DownlinkOnly;
  bool lean = false;
  M3Rule m3_rule = M3Rule::General;
  /// PL constant; switches MARINA-P and M3 to their PL step rules.
  std::optional<double> mu;
};

struct SweepConfig {
  std::vector<std::size_t> n;
  std::vector<int> gamma_exponents;
  std::vector<MethodConfig> methods;
};

struct ExperimentConfig {
  std::string label = "run";
  ProblemSpec problem;
  MethodConfig method;
  StopCriteria stop;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::size_t stride = 1;
  CostModel cost;
  std::string output = "out";
  SweepConfig sweep;
};

/// Parses and validates a JSON config. Unknown keys and type errors raise
/// ConfigError carrying the JSON pointer of the offending field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const CompressorConfig& config);
CompressorConfig parse_compressor(const nlohmann::json& node, const std::string& path = "");

/// Quadratic ensemble as JSON: banded diagonals of the base (or of every
/// block), per-worker scales, linear terms and offsets. Doubles round-trip.
nlohmann::json quadratic_to_json(const QuadraticEnsemble& ens);
QuadraticEnsemble quadratic_from_json(const nlohmann::json& node);
void save_quadratic(const QuadraticEnsemble& ens, const std::string& path);
QuadraticEnsemble load_quadratic(const std::string& path);

std::unique_ptr<Problem> build_problem(const ProblemSpec& spec);
Vec initial_point(const ProblemSpec& spec);

/// Fills in every parameter of `method` for the given problem: explicit values
/// win, the rest follow the theory rules, and gamma is scaled by the multiplier.
AlgoConfig resolve_method(const MethodConfig& method, const Problem& problem,
                          const ProblemConstants& constants);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::string status;  // reached | max_iters | diverged
  std::size_t iterations = 0;
  std::vector<TraceRecord> trace;
  std::optional<CostsToTarget> to_target;
};

/// One run per repeat with seeds base + r. Divergence is reported as a status.
std::vector<RunOutcome> run_repeats(const ExperimentConfig& config, const MethodConfig& method,
                                    const Problem& problem, const ProblemConstants& constants,
                                    Exec exec);

enum class SweepAxis { N, Gamma, Algorithm };
SweepAxis parse_axis(const std::string& name);

struct CommandReport {
  bool ok = true;
  std::vector<std::string> files;
};

/// Writes per-seed traces, the mean trace and summary.csv under config.output.
CommandReport cmd_run(const ExperimentConfig& config, std::ostream& log);

/// Grid over the chosen axes. Writes sweep.csv, one mean-trace CSV per
/// (method, n) at its best multiplier, and summary.csv.
CommandReport cmd_sweep(const ExperimentConfig& config, const std::vector<SweepAxis>& axes,
                        std::ostream& log);

/// Runs a property suite and prints one PASS/FAIL line per property.
CommandReport cmd_verify(const std::string& suite, std::ostream& out);
std::vector<std::string> verify_suites();

/// Reads {"compressor": ..., "d": ..., "n": ..., "samples": ..., "seed": ...}
/// and prints stated against estimated omega and theta.
CommandReport cmd_estimate(const std::string& text, std::ostream& out);

std::string to_string(ProblemFamily family);

}  // namespace commsim
