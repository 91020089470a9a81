#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "commsim/compressors.hpp"
#include "commsim/kernels.hpp"
#include "commsim/parallel.hpp"
#include "commsim/problems.hpp"
#include "commsim/rng.hpp"
#include "commsim/telemetry.hpp"

namespace commsim {

enum class Algorithm { GD, Marina, MarinaP, M3, EF21P };

/// EF21-P uplink: full gradients, or compressed gradients at the shared shift.
enum class Ef21Mode { DownlinkOnly, Bidirectional };

struct AlgoConfig {
  double gamma = 0.0;
  /// Coin probability of MARINA and MARINA-P.
  double p = 1.0;
  double p_P = 1.0;
  double p_D = 1.0;
  double beta = 1.0;
  /// Server-to-worker compressor (MARINA-P, M3, EF21-P).
  std::optional<CompressorSpec> primal;
  /// Worker-to-server compressor (MARINA, M3, EF21-P bidirectional).
  std::optional<CompressorSpec> dual;
  Ef21Mode ef21_mode = Ef21Mode::DownlinkOnly;
  /// M3 without per-worker g_i.
  bool lean = false;
  Exec exec = Exec::Serial;

  /// Throws ParameterError / DimensionError when the config does not fit the
  /// algorithm and problem shape.
  void validate(Algorithm algorithm, std::size_t d, std::size_t n) const;
};

struct RunState {
  std::size_t t = 0;
  Vec x;
  /// Per-worker model shifts w_i (MARINA-P, M3) or the single shared shift
  /// (EF21-P, one column).
  Mat w;
  /// Per-worker momentum shifts z_i (M3).
  Mat z;
  /// Per-worker gradient estimators g_i (MARINA, M3 unless lean).
  Mat g_i;
  /// Aggregate estimator used by the next step.
  Vec g;
  Vec w_mean;
  Vec z_mean;

  /// Cumulative costs summed over workers.
  double s2w_total = 0.0;
  double w2s_total = 0.0;
  std::int8_t primal_coin = -1;
  std::int8_t dual_coin = -1;

  // Scratch owned by the run.
  Mat grads;       // grad f_i at the points the method tracks
  Mat grads_next;
  Mat cols;
  Vec delta;
  Vec tmp;
  std::vector<SparseMessage> msgs;
  HessianWorkspace hess;
};

/// Optional sink receiving every charged transmission.
using EventLog = std::vector<CommEvent>;

struct StepContext {
  const Problem& problem;
  const AlgoConfig& cfg;
  Streams& streams;
  const CostModel& cost;
  EventLog* log = nullptr;
};

/// w_i = z_i = x0, g_i = grad f_i(x0), g = grad f(x0). Nothing is charged.
RunState init_state(Algorithm algorithm, const Problem& problem, const AlgoConfig& cfg,
                    const Vec& x0);

void gd_step(RunState& s, const StepContext& ctx);
void marina_step(RunState& s, const StepContext& ctx);
void marina_p_step(RunState& s, const StepContext& ctx);
void m3_step(RunState& s, const StepContext& ctx);
void ef21p_dcgd_step(RunState& s, const StepContext& ctx);
void step(Algorithm algorithm, RunState& s, const StepContext& ctx);

/// Bernoulli(p) from 53 random bits; p = 1 is always heads.
bool draw_coin(Stream& rng, double p);

struct StopCriteria {
  std::size_t max_iters = 1000;
  /// Stop once ||grad f(x^t)||^2 <= eps.
  std::optional<double> eps;
};

/// Passed to an observer after every step.
struct StepObservation {
  std::size_t t = 0;  // index of x^t
  double gamma = 0.0;
  double f_before = 0.0;
  double f_after = 0.0;
  const Vec& x_before;
  const Vec& x_after;
  const Vec& grad_before;  // grad f(x^t)
  const Vec& g_used;       // g^t
  const RunState& state;
};

using StepObserver = std::function<void(const StepObservation&)>;

struct RunOptions {
  StopCriteria stop;
  /// Record every `stride`-th iteration (plus t = 0 and the last one).
  std::size_t stride = 1;
  CostModel cost;
  EventLog* log = nullptr;
  StepObserver observer;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  std::size_t iterations = 0;
  bool reached = false;
  RunState state;
};

/// Deterministic run from x0 with streams derived from `seed`. Throws
/// DivergenceError when f exceeds 1e8 max(|f(x0)|, 1) or turns non-finite.
RunResult run_experiment(Algorithm algorithm, const Problem& problem, const AlgoConfig& cfg,
                         const Vec& x0, const RunOptions& opts, std::uint64_t seed);

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& name);

}  // namespace commsim
