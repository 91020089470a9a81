#include "commsim/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "commsim/error.hpp"

namespace commsim {

namespace {

void require_probability(double p, const char* name) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ParameterError(std::string(name) + " must lie in (0, 1], got " + std::to_string(p));
  }
}

void require_compressor(const std::optional<CompressorSpec>& spec, const char* role,
                        std::size_t d, std::size_t n, bool unbiased) {
  if (!spec) throw ParameterError(std::string(role) + " compressor is required");
  if (spec->dim() != d) {
    throw DimensionError(std::string(role) + " compressor has dimension " +
                         std::to_string(spec->dim()) + ", problem has " + std::to_string(d));
  }
  if (unbiased && spec->biased()) {
    throw ParameterError(std::string(role) + " compressor must be unbiased");
  }
  if (spec->mode() == CollectionMode::Correlated) {
    const CompressorSpec& base = spec->kind() == CompressorKind::Compose ? spec->inner() : *spec;
    if (base.workers() != n) {
      throw UnsupportedShapeError(std::string(role) + " PermK built for " +
                                  std::to_string(base.workers()) + " workers, problem has " +
                                  std::to_string(n));
    }
  }
}

std::size_t workers_of(const StepContext& ctx) { return ctx.problem.workers(); }

void record_charge(RunState& s, const StepContext& ctx, Direction dir, std::size_t worker,
                   double coords, Encoding enc) {
  CommEvent ev;
  ev.t = s.t + 1;
  ev.direction = dir;
  ev.worker = worker;
  ev.coords = coords;
  ev.encoding = enc;
  const double c = charge(ev, ctx.cost);
  (dir == Direction::ServerToWorker ? s.s2w_total : s.w2s_total) += c;
  if (ctx.log != nullptr) ctx.log->push_back(ev);
}

// Every worker sends or receives an uncompressed d-vector.
void charge_full(RunState& s, const StepContext& ctx, Direction dir) {
  const auto d = static_cast<double>(ctx.problem.dim());
  for (std::size_t i = 0; i < workers_of(ctx); ++i) {
    record_charge(s, ctx, dir, i, d, Encoding::Float);
  }
}

void charge_messages(RunState& s, const StepContext& ctx, Direction dir,
                     std::span<const SparseMessage> msgs) {
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    record_charge(s, ctx, dir, i, msgs[i].cost, msgs[i].encoding);
  }
}

// x^{t+1} = x^t - gamma g^t, leaving the move in s.delta.
void descend(RunState& s, const StepContext& ctx) {
  s.delta = -ctx.cfg.gamma * s.g;
  s.x += s.delta;
}

// Primal broadcast shared by MARINA-P and M3: full x^{t+1} on heads,
// C_i(x^{t+1} - x^t) on tails.
bool primal_broadcast(RunState& s, const StepContext& ctx, double p) {
  const std::size_t n = workers_of(ctx);
  const bool heads = draw_coin(ctx.streams.coins, p);
  s.primal_coin = heads ? 1 : 0;
  if (heads) {
    s.w.colwise() = s.x;
    charge_full(s, ctx, Direction::ServerToWorker);
  } else {
    s.msgs.resize(n);
    compress_collection(*ctx.cfg.primal, s.delta, ctx.streams, s.msgs, ctx.cfg.exec);
    add_messages(s.msgs, 1.0, ctx.cfg.exec, s.w);
    charge_messages(s, ctx, Direction::ServerToWorker, s.msgs);
  }
  return heads;
}

}  // namespace

bool draw_coin(Stream& rng, double p) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return u < p;
}

void AlgoConfig::validate(Algorithm algorithm, std::size_t d, std::size_t n) const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ParameterError("gamma must be positive and finite, got " + std::to_string(gamma));
  }
  switch (algorithm) {
    case Algorithm::GD:
      return;
    case Algorithm::Marina:
      require_probability(p, "p");
      require_compressor(dual, "dual", d, n, true);
      return;
    case Algorithm::MarinaP:
      require_probability(p, "p");
      require_compressor(primal, "primal", d, n, true);
      return;
    case Algorithm::M3:
      require_probability(p_P, "p_P");
      require_probability(p_D, "p_D");
      require_probability(beta, "beta");
      require_compressor(primal, "primal", d, n, true);
      require_compressor(dual, "dual", d, n, true);
      return;
    case Algorithm::EF21P:
      require_compressor(primal, "primal", d, n, false);
      if (primal->mode() == CollectionMode::Correlated) {
        throw ParameterError("EF21-P broadcasts one message; PermK does not apply");
      }
      if (ef21_mode == Ef21Mode::Bidirectional) require_compressor(dual, "dual", d, n, true);
      return;
  }
}

RunState init_state(Algorithm algorithm, const Problem& problem, const AlgoConfig& cfg,
                    const Vec& x0) {
  const std::size_t d = problem.dim();
  const std::size_t n = problem.workers();
  if (static_cast<std::size_t>(x0.size()) != d) {
    throw DimensionError("x0 has dimension " + std::to_string(x0.size()) + ", problem has " +
                         std::to_string(d));
  }
  const auto cols = static_cast<Eigen::Index>(n);
  RunState s;
  s.x = x0;
  switch (algorithm) {
    case Algorithm::GD:
      problem.grad(x0, s.g);
      break;
    case Algorithm::Marina:
      worker_gradients_at(problem, x0, cfg.exec, s.grads);
      s.g_i = s.grads;
      column_mean(s.g_i, s.g);
      break;
    case Algorithm::MarinaP:
      s.w = x0.replicate(1, cols);
      s.w_mean = x0;
      problem.grad(x0, s.g);
      break;
    case Algorithm::M3:
      s.w = x0.replicate(1, cols);
      s.z = s.w;
      s.w_mean = x0;
      s.z_mean = x0;
      worker_gradients_at(problem, x0, cfg.exec, s.grads);
      if (!cfg.lean) s.g_i = s.grads;
      column_mean(s.grads, s.g);
      break;
    case Algorithm::EF21P:
      s.w = x0;
      s.w_mean = x0;
      problem.grad(x0, s.g);
      break;
  }
  return s;
}

void gd_step(RunState& s, const StepContext& ctx) {
  descend(s, ctx);
  charge_full(s, ctx, Direction::ServerToWorker);
  charge_full(s, ctx, Direction::WorkerToServer);
  ctx.problem.grad(s.x, s.g);
  ++s.t;
}

void marina_step(RunState& s, const StepContext& ctx) {
  const std::size_t n = workers_of(ctx);
  const Exec exec = ctx.cfg.exec;
  descend(s, ctx);
  charge_full(s, ctx, Direction::ServerToWorker);
  worker_gradients_at(ctx.problem, s.x, exec, s.grads_next);
  const bool heads = draw_coin(ctx.streams.coins, ctx.cfg.p);
  s.primal_coin = -1;
  s.dual_coin = heads ? 1 : 0;
  if (heads) {
    s.g_i = s.grads_next;
    charge_full(s, ctx, Direction::WorkerToServer);
  } else {
    s.cols = s.grads_next - s.grads;
    s.msgs.resize(n);
    compress_each(*ctx.cfg.dual, s.cols, ctx.streams, s.msgs, exec);
    s.g_i.colwise() = s.g;
    add_messages(s.msgs, 1.0, exec, s.g_i);
    charge_messages(s, ctx, Direction::WorkerToServer, s.msgs);
  }
  std::swap(s.grads, s.grads_next);
  column_mean(s.g_i, s.g);
  ++s.t;
}

void marina_p_step(RunState& s, const StepContext& ctx) {
  const std::size_t n = workers_of(ctx);
  const Exec exec = ctx.cfg.exec;
  descend(s, ctx);
  const bool heads = primal_broadcast(s, ctx, ctx.cfg.p);
  if (heads) {
    s.w_mean = s.x;
  } else {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (const auto& m : s.msgs) add_to(m, inv_n, s.w_mean);
  }
  // Workers return uncompressed gradients at their shifts.
  charge_full(s, ctx, Direction::WorkerToServer);
  if (ctx.problem.constant_hessian()) {
    if (heads) {
      ctx.problem.grad(s.x, s.g);
    } else {
      mean_hessian_messages(ctx.problem, s.msgs, 1.0, exec, s.hess, s.g);
    }
  } else {
    mean_worker_gradient(ctx.problem, s.w, exec, s.grads, s.g);
  }
  ++s.t;
}

void m3_step(RunState& s, const StepContext& ctx) {
  const std::size_t n = workers_of(ctx);
  const Exec exec = ctx.cfg.exec;
  const double beta = ctx.cfg.beta;
  descend(s, ctx);
  primal_broadcast(s, ctx, ctx.cfg.p_P);

  // z_i^{t+1} = beta w_i^{t+1} + (1 - beta) z_i^t
  s.cols = beta * s.w + (1.0 - beta) * s.z;
  std::swap(s.z, s.cols);
  worker_gradients(ctx.problem, s.z, exec, s.grads_next);

  const bool heads = draw_coin(ctx.streams.coins, ctx.cfg.p_D);
  s.dual_coin = heads ? 1 : 0;
  if (heads) {
    if (!ctx.cfg.lean) s.g_i = s.grads_next;
    column_mean(s.grads_next, s.g);
    charge_full(s, ctx, Direction::WorkerToServer);
  } else {
    s.cols = s.grads_next - s.grads;
    s.msgs.resize(n);
    compress_each(*ctx.cfg.dual, s.cols, ctx.streams, s.msgs, exec);
    if (ctx.cfg.lean) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (const auto& m : s.msgs) add_to(m, inv_n, s.g);
    } else {
      add_messages(s.msgs, 1.0, exec, s.g_i);
      column_mean(s.g_i, s.g);
    }
    charge_messages(s, ctx, Direction::WorkerToServer, s.msgs);
  }
  std::swap(s.grads, s.grads_next);
  column_mean(s.w, s.w_mean);
  column_mean(s.z, s.z_mean);
  ++s.t;
}

void ef21p_dcgd_step(RunState& s, const StepContext& ctx) {
  const std::size_t n = workers_of(ctx);
  const Exec exec = ctx.cfg.exec;
  descend(s, ctx);
  s.tmp = s.x - s.w.col(0);
  s.msgs.resize(1);
  compress(*ctx.cfg.primal, s.tmp, ctx.streams.server, s.msgs[0]);
  add_to(s.msgs[0], 1.0, s.w.col(0));
  s.w_mean = s.w.col(0);
  for (std::size_t i = 0; i < n; ++i) {
    record_charge(s, ctx, Direction::ServerToWorker, i, s.msgs[0].cost, s.msgs[0].encoding);
  }
  if (ctx.cfg.ef21_mode == Ef21Mode::DownlinkOnly) {
    ctx.problem.grad(s.w_mean, s.g);
    charge_full(s, ctx, Direction::WorkerToServer);
  } else {
    worker_gradients_at(ctx.problem, s.w_mean, exec, s.grads);
    s.msgs.resize(n);
    compress_each(*ctx.cfg.dual, s.grads, ctx.streams, s.msgs, exec);
    s.g.setZero(s.x.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (const auto& m : s.msgs) add_to(m, inv_n, s.g);
    charge_messages(s, ctx, Direction::WorkerToServer, s.msgs);
  }
  ++s.t;
}

void step(Algorithm algorithm, RunState& s, const StepContext& ctx) {
  switch (algorithm) {
    case Algorithm::GD: return gd_step(s, ctx);
    case Algorithm::Marina: return marina_step(s, ctx);
    case Algorithm::MarinaP: return marina_p_step(s, ctx);
    case Algorithm::M3: return m3_step(s, ctx);
    case Algorithm::EF21P: return ef21p_dcgd_step(s, ctx);
  }
}

RunResult run_experiment(Algorithm algorithm, const Problem& problem, const AlgoConfig& cfg,
                         const Vec& x0, const RunOptions& opts, std::uint64_t seed) {
  const std::size_t n = problem.workers();
  cfg.validate(algorithm, problem.dim(), n);
  opts.cost.validate();
  if (opts.stride < 1) throw ParameterError("trace stride must be >= 1");
  if (opts.stop.eps && !(*opts.stop.eps > 0.0)) throw ParameterError("eps must be > 0");

  Streams streams(seed, n);
  RunResult result;
  RunState& s = result.state;
  s = init_state(algorithm, problem, cfg, x0);
  const StepContext ctx{problem, cfg, streams, opts.cost, opts.log};
  const double inv_n = 1.0 / static_cast<double>(n);

  Vec grad(problem.dim());
  double f = problem.value_and_grad(s.x, grad);
  double gn = grad.squaredNorm();
  if (!std::isfinite(f) || !std::isfinite(gn)) {
    throw DivergenceError("objective is not finite at x0", 0, f);
  }
  const double threshold = 1e8 * std::max(std::abs(f), 1.0);
  double f_min = f;

  auto record = [&]() {
    TraceRecord r;
    r.t = s.t;
    r.f = f;
    r.grad_norm_sq = gn;
    r.s2w_cum = s.s2w_total * inv_n;
    r.w2s_cum = s.w2s_total * inv_n;
    r.primal_coin = s.primal_coin;
    r.dual_coin = s.dual_coin;
    r.f_min = f_min;
    result.trace.push_back(r);
  };
  record();
  bool reached = opts.stop.eps && gn <= *opts.stop.eps;

  Vec x_before, grad_before, g_used;
  while (!reached && s.t < opts.stop.max_iters) {
    const double f_before = f;
    if (opts.observer) {
      x_before = s.x;
      grad_before = grad;
      g_used = s.g;
    }
    step(algorithm, s, ctx);
    f = problem.value_and_grad(s.x, grad);
    gn = grad.squaredNorm();
    if (!std::isfinite(f) || !std::isfinite(gn) || f > threshold) {
      throw DivergenceError("diverged at iteration " + std::to_string(s.t) + " (f = " +
                                format_double(f) + ")",
                            s.t, f);
    }
    f_min = std::min(f_min, f);
    reached = opts.stop.eps && gn <= *opts.stop.eps;
    if (opts.observer) {
      opts.observer(StepObservation{s.t - 1, cfg.gamma, f_before, f, x_before, s.x,
                                    grad_before, g_used, s});
    }
    if (s.t % opts.stride == 0 || reached || s.t == opts.stop.max_iters) record();
  }
  result.iterations = s.t;
  result.reached = reached;
  return result;
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::GD: return "gd";
    case Algorithm::Marina: return "marina";
    case Algorithm::MarinaP: return "marina_p";
    case Algorithm::M3: return "m3";
    case Algorithm::EF21P: return "ef21p";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::GD, Algorithm::Marina, Algorithm::MarinaP, Algorithm::M3,
                      Algorithm::EF21P}) {
    if (to_string(a) == name) return a;
  }
  throw ParameterError("unknown algorithm '" + name +
                       "' (expected gd, marina, marina_p, m3 or ef21p)");
}

}  // namespace commsim
