#include <doctest.h>

#include <cmath>

#include "commsim/algorithms.hpp"
#include "commsim/error.hpp"
#include "commsim/tuning.hpp"
#include "helpers.hpp"

using namespace commsim;

namespace {

QuadraticEnsemble quadratic(std::size_t n, std::size_t d, double sigma, std::uint64_t seed) {
  QuadraticGenerator gen;
  gen.n = n;
  gen.d = d;
  gen.sigma = sigma;
  if (sigma > 0.0) gen.v0 = 5.0 * sigma;
  Stream rng = make_stream(seed, StreamRole::Problem, 0);
  return generate_het_quadratic(gen, rng);
}

RunOptions iterations(std::size_t count) {
  RunOptions opts;
  opts.stop.max_iters = count;
  return opts;
}

// Plain gradient descent written out independently of the library loop.
std::vector<Vec> gd_reference(const Problem& p, Vec x, double gamma, std::size_t steps) {
  std::vector<Vec> out{x};
  Vec g;
  for (std::size_t t = 0; t < steps; ++t) {
    p.grad(x, g);
    x -= gamma * g;
    out.push_back(x);
  }
  return out;
}

// Runs `steps` iterations and returns the iterate after each one.
std::vector<Vec> iterates(Algorithm a, const Problem& p, const AlgoConfig& cfg, const Vec& x0,
                          std::size_t steps, std::uint64_t seed) {
  std::vector<Vec> out{x0};
  RunOptions opts = iterations(steps);
  opts.observer = [&](const StepObservation& o) { out.push_back(o.x_after); };
  run_experiment(a, p, cfg, x0, opts, seed);
  return out;
}

double max_gap(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  REQUIRE(a.size() == b.size());
  double gap = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    gap = std::max(gap, (a[k] - b[k]).lpNorm<Eigen::Infinity>() / (1.0 + b[k].norm()));
  }
  return gap;
}

}  // namespace

TEST_CASE("gradient descent in one dimension") {
  // f(x) = 0.5 a x^2 + b x with a = 2, b = -1: x_{t+1} = x_t - gamma (2 x_t - 1).
  Mat a(1, 1);
  a(0, 0) = 2.0;
  Mat b(1, 1);
  b(0, 0) = -1.0;
  const auto p = QuadraticEnsemble::dense({SymmetricMatrix(a)}, b, Vec::Zero(1));
  AlgoConfig cfg;
  cfg.gamma = 0.25;
  Vec x0(1);
  x0[0] = 3.0;
  const auto xs = iterates(Algorithm::GD, p, cfg, x0, 6, 1);
  double x = 3.0;
  for (std::size_t t = 1; t < xs.size(); ++t) {
    x -= 0.25 * (2.0 * x - 1.0);
    CHECK(xs[t][0] == doctest::Approx(x).epsilon(1e-15));
  }
  // Contraction towards 1/2 by the factor 1 - 2 gamma = 1/2.
  CHECK(std::abs(xs[6][0] - 0.5) == doctest::Approx(2.5 / 64.0));
}

TEST_CASE("methods that reduce to gradient descent") {
  const std::size_t n = 5, d = 40, steps = 60;
  const QuadraticEnsemble het = quadratic(n, d, 0.3, 1);
  const double gamma = step_gd(quad_constants(het).L);
  Stream rng = testing::rng_for(50);
  const Vec x0 = testing::gaussian(d, rng);
  const auto gd = gd_reference(het, x0, gamma, steps);

  AlgoConfig base;
  base.gamma = gamma;

  SUBCASE("MARINA with p = 1") {
    AlgoConfig cfg = base;
    cfg.dual = CompressorSpec::rand_k(d, 4);
    CHECK(max_gap(iterates(Algorithm::Marina, het, cfg, x0, steps, 3), gd) <= 1e-12);
  }
  SUBCASE("MARINA with identity compressor") {
    AlgoConfig cfg = base;
    cfg.p = 0.3;
    cfg.dual = CompressorSpec::identity(d);
    CHECK(max_gap(iterates(Algorithm::Marina, het, cfg, x0, steps, 3), gd) <= 1e-12);
  }
  SUBCASE("MARINA-P with p = 1") {
    AlgoConfig cfg = base;
    cfg.primal = CompressorSpec::perm_k(d, n);
    CHECK(max_gap(iterates(Algorithm::MarinaP, het, cfg, x0, steps, 3), gd) <= 1e-12);
  }
  SUBCASE("M3 with full coins and beta = 1") {
    AlgoConfig cfg = base;
    cfg.primal = CompressorSpec::perm_k(d, n);
    cfg.dual = CompressorSpec::rand_k(d, 8);
    CHECK(max_gap(iterates(Algorithm::M3, het, cfg, x0, steps, 3), gd) <= 1e-12);
  }
  SUBCASE("EF21-P with TopK at k = d") {
    AlgoConfig cfg = base;
    cfg.primal = CompressorSpec::top_k(d, d);
    CHECK(max_gap(iterates(Algorithm::EF21P, het, cfg, x0, steps, 3), gd) <= 1e-12);
    cfg.ef21_mode = Ef21Mode::Bidirectional;
    cfg.dual = CompressorSpec::identity(d);
    CHECK(max_gap(iterates(Algorithm::EF21P, het, cfg, x0, steps, 3), gd) <= 1e-12);
  }
}

TEST_CASE("MARINA-P with PermK on a homogeneous problem follows gradient descent") {
  const std::size_t n = 6, d = 48, steps = 300;
  const QuadraticEnsemble homog = quadratic(n, d, 0.0, 2);
  REQUIRE(homog.homogeneous());
  const double gamma = step_gd(quad_constants(homog).L);
  Stream rng = testing::rng_for(51);
  const Vec x0 = testing::gaussian(d, rng);
  AlgoConfig cfg;
  cfg.gamma = gamma;
  cfg.p = 0.05;
  cfg.primal = CompressorSpec::perm_k(d, n);
  RunOptions opts = iterations(steps);
  double mean_gap = 0.0;
  opts.observer = [&](const StepObservation& o) {
    mean_gap = std::max(mean_gap, (o.state.w_mean - o.x_after).lpNorm<Eigen::Infinity>());
  };
  const RunResult res = run_experiment(Algorithm::MarinaP, homog, cfg, x0, opts, 4);
  CHECK(mean_gap <= 1e-10);
  const auto gd = gd_reference(homog, x0, gamma, steps);
  CHECK((res.state.x - gd.back()).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("MARINA tail update is unbiased") {
  const std::size_t n = 3, d = 10;
  const QuadraticEnsemble p = quadratic(n, d, 0.4, 5);
  Stream rng = testing::rng_for(52);
  const Vec x0 = testing::gaussian(d, rng);
  AlgoConfig cfg;
  cfg.gamma = 0.3;
  cfg.p = 0.0;
  cfg.dual = CompressorSpec::rand_k(d, 2);
  const CostModel cost;

  const std::size_t samples = 40000;
  Vec sum = Vec::Zero(d);
  Vec sum_sq = Vec::Zero(d);
  Vec x1;
  for (std::size_t r = 0; r < samples; ++r) {
    RunState s = init_state(Algorithm::Marina, p, cfg, x0);
    Streams streams(1000 + r, n);
    const StepContext ctx{p, cfg, streams, cost, nullptr};
    marina_step(s, ctx);
    CHECK_FALSE(s.dual_coin == 1);
    sum += s.g;
    sum_sq += s.g.cwiseAbs2();
    x1 = s.x;
  }
  const Vec mean = sum / static_cast<double>(samples);
  const Vec var = sum_sq / static_cast<double>(samples) - mean.cwiseAbs2();
  const Vec truth = p.grad(x1);
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
    const double se = std::sqrt(var[j] / static_cast<double>(samples));
    CHECK(std::abs(mean[j] - truth[j]) <= 5.0 * se + 1e-12);
  }
}

TEST_CASE("MARINA-P mean downlink cost matches p d + (1 - p) k") {
  const std::size_t n = 10, d = 300, steps = 20000;
  const QuadraticEnsemble p = quadratic(n, d, 0.01, 6);
  const ProblemConstants c = quad_constants(p);
  for (double prob : {0.1, 0.02}) {
    AlgoConfig cfg;
    cfg.p = prob;
    cfg.primal = CompressorSpec::perm_k(d, n);
    cfg.gamma = step_marinap_general(c.L, c.L_A, c.L_B, static_cast<double>(n - 1), 0.0, prob);
    const RunResult res = run_experiment(Algorithm::MarinaP, p, cfg, Vec::Zero(d),
                                         iterations(steps), 7);
    const double per_iter = res.trace.back().s2w_cum / static_cast<double>(res.iterations);
    const double expected = expected_coords(prob, static_cast<double>(d / n), d);
    CHECK(std::abs(per_iter - expected) <= 0.03 * expected);
    CHECK(res.trace.back().w2s_cum == static_cast<double>(d * steps));
  }
}

TEST_CASE("M3 momentum and lean mode") {
  const std::size_t n = 4, d = 32, steps = 80;
  const QuadraticEnsemble p = quadratic(n, d, 0.2, 8);
  const ProblemConstants c = quad_constants(p);
  Stream rng = testing::rng_for(53);
  const Vec x0 = testing::gaussian(d, rng);
  AlgoConfig cfg;
  cfg.primal = CompressorSpec::perm_k(d, n);
  cfg.dual = CompressorSpec::rand_k(d, d / n);
  const TheoryParams t = step_m3(c.L, c.L_A, c.L_B, c.L_max, n);
  cfg.gamma = t.gamma;
  cfg.p_P = t.p_P;
  cfg.p_D = t.p_D;

  SUBCASE("beta = 1 keeps z equal to w") {
    cfg.beta = 1.0;
    RunOptions opts = iterations(steps);
    double gap = 0.0;
    opts.observer = [&](const StepObservation& o) {
      gap = std::max(gap, (o.state.z - o.state.w).lpNorm<Eigen::Infinity>());
    };
    run_experiment(Algorithm::M3, p, cfg, x0, opts, 9);
    CHECK(gap == 0.0);
  }
  SUBCASE("z follows the exponential average of w") {
    cfg.beta = t.beta;
    RunOptions opts = iterations(steps);
    Mat z = x0.replicate(1, n);
    double gap = 0.0;
    opts.observer = [&](const StepObservation& o) {
      z = cfg.beta * o.state.w + (1.0 - cfg.beta) * z;
      gap = std::max(gap, (o.state.z - z).lpNorm<Eigen::Infinity>());
    };
    run_experiment(Algorithm::M3, p, cfg, x0, opts, 9);
    CHECK(gap <= 1e-12);
  }
  SUBCASE("lean mode tracks the full estimator") {
    cfg.beta = t.beta;
    const auto full = iterates(Algorithm::M3, p, cfg, x0, steps, 10);
    cfg.lean = true;
    const auto lean = iterates(Algorithm::M3, p, cfg, x0, steps, 10);
    CHECK(max_gap(lean, full) <= 1e-10);
  }
}

TEST_CASE("aggregates match their per-worker parts") {
  const std::size_t n = 5, d = 30, steps = 200;
  const QuadraticEnsemble p = quadratic(n, d, 0.3, 11);
  const ProblemConstants c = quad_constants(p);
  Stream rng = testing::rng_for(54);
  const Vec x0 = testing::gaussian(d, rng);
  AlgoConfig cfg;
  cfg.gamma = 0.5 / c.L;
  cfg.p = 0.2;
  cfg.p_P = 0.2;
  cfg.p_D = 0.2;
  cfg.beta = 0.5;
  cfg.primal = CompressorSpec::perm_k(d, n);
  cfg.dual = CompressorSpec::rand_k(d, 6);
  for (Algorithm a : {Algorithm::Marina, Algorithm::MarinaP, Algorithm::M3}) {
    CAPTURE(to_string(a));
    RunOptions opts = iterations(steps);
    double gap = 0.0;
    opts.observer = [&](const StepObservation& o) {
      const RunState& s = o.state;
      if (a != Algorithm::MarinaP) {
        gap = std::max(gap, (s.g_i.rowwise().mean() - s.g).lpNorm<Eigen::Infinity>());
      }
      if (a != Algorithm::Marina) {
        gap = std::max(gap, (s.w.rowwise().mean() - s.w_mean).lpNorm<Eigen::Infinity>());
      }
      if (a == Algorithm::MarinaP) {
        // The estimator is the mean gradient at the worker shifts.
        Vec mean = Vec::Zero(d);
        for (std::size_t i = 0; i < n; ++i) mean += p.worker_grad(i, s.w.col(i)) / double(n);
        gap = std::max(gap, (mean - s.g).lpNorm<Eigen::Infinity>());
      }
    };
    run_experiment(a, p, cfg, x0, opts, 12);
    CHECK(gap <= 1e-12);
  }
}

TEST_CASE("smoothness descent inequality holds at every step") {
  // f(x+) <= f(x) - gamma/2 |grad|^2 - (1/(2 gamma) - L/2) |dx|^2 + gamma/2 |g - grad|^2
  const std::size_t n = 5, d = 30;
  const QuadraticEnsemble p = quadratic(n, d, 0.3, 13);
  const ProblemConstants c = quad_constants(p);
  Stream rng = testing::rng_for(55);
  const Vec x0 = testing::gaussian(d, rng);
  AlgoConfig cfg;
  cfg.gamma = step_marinap_general(c.L, c.L_A, c.L_B, double(n - 1), 0.0, 0.2);
  cfg.p = 0.2;
  cfg.primal = CompressorSpec::perm_k(d, n);
  RunOptions opts = iterations(500);
  std::size_t violations = 0;
  opts.observer = [&](const StepObservation& o) {
    const double g = o.gamma;
    const double bound = o.f_before - 0.5 * g * o.grad_before.squaredNorm() -
                         (0.5 / g - 0.5 * c.L) * (o.x_after - o.x_before).squaredNorm() +
                         0.5 * g * (o.g_used - o.grad_before).squaredNorm();
    if (o.f_after > bound + 1e-12 * (1.0 + std::abs(bound))) ++violations;
  };
  run_experiment(Algorithm::MarinaP, p, cfg, x0, opts, 14);
  CHECK(violations == 0);
}

TEST_CASE("every charged event shows up in the trace") {
  const std::size_t n = 4, d = 24;
  const QuadraticEnsemble p = quadratic(n, d, 0.2, 15);
  AlgoConfig cfg;
  cfg.gamma = 0.5 / quad_constants(p).L;
  cfg.p = 0.3;
  cfg.p_P = 0.3;
  cfg.p_D = 0.4;
  cfg.beta = 0.5;
  cfg.primal = CompressorSpec::compose(CompressorSpec::natural(d), CompressorSpec::perm_k(d, n));
  cfg.dual = CompressorSpec::rand_k(d, 5);
  CostModel bits;
  bits.unit = CostUnit::Bits;
  for (Algorithm a : {Algorithm::GD, Algorithm::Marina, Algorithm::MarinaP, Algorithm::M3}) {
    for (const CostModel& model : {CostModel{}, bits}) {
      CAPTURE(to_string(a));
      EventLog log;
      RunOptions opts = iterations(150);
      opts.stride = 7;
      opts.cost = model;
      opts.log = &log;
      const RunResult res = run_experiment(a, p, cfg, Vec::Ones(d), opts, 16);
      double s2w = 0.0, w2s = 0.0;
      std::size_t k = 0;
      bool exact = true;
      for (const auto& r : res.trace) {
        while (k < log.size() && log[k].t <= r.t) {
          (log[k].direction == Direction::ServerToWorker ? s2w : w2s) += charge(log[k], model);
          ++k;
        }
        exact = exact && r.s2w_cum == s2w / double(n) && r.w2s_cum == w2s / double(n);
        if (k > 0 && r.t > 0) exact = exact && log[k - 1].t == r.t;
      }
      CHECK(exact);
      CHECK(k == log.size());
      for (std::size_t j = 1; j < res.trace.size(); ++j) {
        CHECK(res.trace[j].s2w_cum >= res.trace[j - 1].s2w_cum);
        CHECK(res.trace[j].w2s_cum >= res.trace[j - 1].w2s_cum);
      }
    }
  }
}

TEST_CASE("runs are deterministic in the seed") {
  const std::size_t n = 4, d = 24;
  const QuadraticEnsemble p = quadratic(n, d, 0.2, 17);
  AlgoConfig cfg;
  cfg.gamma = 0.5 / quad_constants(p).L;
  cfg.p = 0.3;
  cfg.primal = CompressorSpec::perm_k(d, n);
  const auto same = [&](std::uint64_t s1, std::uint64_t s2) {
    const auto a = run_experiment(Algorithm::MarinaP, p, cfg, Vec::Ones(d), iterations(100), s1);
    const auto b = run_experiment(Algorithm::MarinaP, p, cfg, Vec::Ones(d), iterations(100), s2);
    bool eq = a.trace.size() == b.trace.size();
    for (std::size_t k = 0; eq && k < a.trace.size(); ++k) {
      eq = a.trace[k].f == b.trace[k].f && a.trace[k].s2w_cum == b.trace[k].s2w_cum &&
           a.trace[k].primal_coin == b.trace[k].primal_coin;
    }
    return eq;
  };
  CHECK(same(3, 3));
  CHECK_FALSE(same(3, 4));
}

TEST_CASE("stopping and divergence") {
  const QuadraticEnsemble p = quadratic(3, 20, 0.1, 18);
  const double L = quad_constants(p).L;
  AlgoConfig cfg;
  cfg.gamma = 1.0 / L;
  RunOptions opts = iterations(1000000);
  opts.stop.eps = 1e-3;
  const RunResult res = run_experiment(Algorithm::GD, p, cfg, Vec::Ones(20), opts, 1);
  CHECK(res.reached);
  CHECK(res.trace.back().grad_norm_sq <= 1e-3);
  CHECK(res.trace[res.trace.size() - 2].grad_norm_sq > 1e-3);

  cfg.gamma = 50.0 / L;
  CHECK_THROWS_AS(run_experiment(Algorithm::GD, p, cfg, Vec::Ones(20), iterations(10000), 1),
                  DivergenceError);
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(run_experiment(Algorithm::GD, p, cfg, Vec::Ones(20), iterations(10), 1),
                  ParameterError);
}

TEST_CASE("configuration checks") {
  const QuadraticEnsemble p = quadratic(4, 20, 0.1, 19);
  AlgoConfig cfg;
  cfg.gamma = 0.1;
  CHECK_THROWS(run_experiment(Algorithm::MarinaP, p, cfg, Vec::Zero(20), iterations(1), 1));
  cfg.primal = CompressorSpec::perm_k(20, 5);
  CHECK_THROWS_AS(run_experiment(Algorithm::MarinaP, p, cfg, Vec::Zero(20), iterations(1), 1),
                  UnsupportedShapeError);
  cfg.primal = CompressorSpec::perm_k(20, 4);
  CHECK_THROWS_AS(run_experiment(Algorithm::EF21P, p, cfg, Vec::Zero(20), iterations(1), 1),
                  ParameterError);
  cfg.p = 1.5;
  CHECK_THROWS_AS(run_experiment(Algorithm::MarinaP, p, cfg, Vec::Zero(20), iterations(1), 1),
                  ParameterError);
  cfg.p = 0.5;
  CHECK_THROWS_AS(run_experiment(Algorithm::MarinaP, p, cfg, Vec::Zero(7), iterations(1), 1),
                  DimensionError);
  CHECK(parse_algorithm("marina_p") == Algorithm::MarinaP);
  CHECK_THROWS_AS(parse_algorithm("adam"), ParameterError);
}

TEST_CASE("non-quadratic problems take the generic gradient path") {
  Stream rng = testing::rng_for(56);
  const std::size_t d1 = 8, d2 = 2, n = 4;
  Mat samples(16, d1);
  for (Eigen::Index r = 0; r < samples.rows(); ++r) samples.row(r) = testing::gaussian(d1, rng);
  const MatrixFactorizationProblem p(d1, d2, samples, 0.01, n);
  const std::size_t d = p.dim();
  const Vec x0 = testing::gaussian(d, rng, 0.1);
  AlgoConfig cfg;
  cfg.gamma = 0.05;
  cfg.primal = CompressorSpec::perm_k(d, n);
  const auto gd = gd_reference(p, x0, cfg.gamma, 40);
  CHECK(max_gap(iterates(Algorithm::MarinaP, p, cfg, x0, 40, 1), gd) <= 1e-12);
  cfg.p = 0.2;
  RunOptions opts = iterations(200);
  double gap = 0.0;
  opts.observer = [&](const StepObservation& o) {
    Vec mean = Vec::Zero(d);
    for (std::size_t i = 0; i < n; ++i) mean += p.worker_grad(i, o.state.w.col(i)) / double(n);
    gap = std::max(gap, (mean - o.state.g).lpNorm<Eigen::Infinity>());
  };
  run_experiment(Algorithm::MarinaP, p, cfg, x0, opts, 2);
  CHECK(gap <= 1e-12);
}
