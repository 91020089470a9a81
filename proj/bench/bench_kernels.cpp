// Serial reference against the OpenMP path for the per-worker kernels.
// Every benchmark takes (exec, n) as arguments: exec 0 = serial, 1 = parallel.
#include <benchmark/benchmark.h>

#include <random>

#include "commsim/algorithms.hpp"
#include "commsim/kernels.hpp"

using namespace commsim;

namespace {

constexpr std::size_t kDim = 1000;

Exec exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Exec::Serial : Exec::Parallel;
}

std::size_t workers_of(const benchmark::State& state) {
  return static_cast<std::size_t>(state.range(1));
}

QuadraticEnsemble make_problem(std::size_t n) {
  QuadraticGenerator gen;
  gen.n = n;
  gen.d = kDim;
  gen.sigma = 0.1;
  gen.v0 = 0.5;
  Stream rng = make_stream(1, StreamRole::Problem, 0);
  return generate_het_quadratic(gen, rng);
}

Mat random_columns(std::size_t n) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  Mat m(static_cast<Eigen::Index>(kDim), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
  }
  return m;
}

void label(benchmark::State& state) {
  state.SetLabel(exec_of(state) == Exec::Serial ? "serial" : "parallel");
}

void BM_WorkerGradients(benchmark::State& state) {
  const std::size_t n = workers_of(state);
  const QuadraticEnsemble p = make_problem(n);
  const Mat points = random_columns(n);
  Mat out;
  for (auto _ : state) {
    worker_gradients(p, points, exec_of(state), out);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_MeanHessianMessages(benchmark::State& state) {
  const std::size_t n = workers_of(state);
  const QuadraticEnsemble p = make_problem(n);
  const Mat cols = random_columns(1);
  std::vector<SparseMessage> msgs(n);
  Streams streams(3, n);
  compress_collection(CompressorSpec::perm_k(kDim, n), cols.col(0), streams, msgs);
  HessianWorkspace ws;
  Vec acc = Vec::Zero(kDim);
  for (auto _ : state) {
    mean_hessian_messages(p, msgs, 1.0, exec_of(state), ws, acc);
    benchmark::DoNotOptimize(acc.data());
  }
  label(state);
}

void BM_CompressEach(benchmark::State& state) {
  const std::size_t n = workers_of(state);
  const Mat inputs = random_columns(n);
  const auto spec =
      CompressorSpec::compose(CompressorSpec::natural(kDim), CompressorSpec::rand_k(kDim, kDim / n));
  std::vector<SparseMessage> msgs(n);
  Streams streams(5, n);
  for (auto _ : state) {
    compress_each(spec, inputs, streams, msgs, exec_of(state));
    benchmark::DoNotOptimize(msgs.data());
  }
  label(state);
}

void BM_EstimateOmega(benchmark::State& state) {
  const Vec x = random_columns(1).col(0);
  const auto spec = CompressorSpec::rand_k(kDim, 10);
  for (auto _ : state) {
    Stream rng = make_stream(9, StreamRole::Estimator, 0);
    benchmark::DoNotOptimize(estimate_omega(spec, x, 10000, rng, exec_of(state)));
  }
  label(state);
}

void BM_M3Iterations(benchmark::State& state) {
  const std::size_t n = workers_of(state);
  const QuadraticEnsemble p = make_problem(n);
  AlgoConfig cfg;
  cfg.gamma = 0.01;
  cfg.p_P = 1.0 / static_cast<double>(n);
  cfg.p_D = cfg.p_P;
  cfg.beta = 0.5;
  cfg.primal = CompressorSpec::perm_k(kDim, n);
  cfg.dual = CompressorSpec::rand_k(kDim, kDim / n);
  cfg.exec = exec_of(state);
  RunOptions opts;
  opts.stop.max_iters = 100;
  opts.stride = 100;
  for (auto _ : state) {
    const RunResult res = run_experiment(Algorithm::M3, p, cfg, Vec::Zero(kDim), opts, 1);
    benchmark::DoNotOptimize(res.state.x.data());
  }
  state.SetItemsProcessed(state.iterations() * 100);
  label(state);
}

void exec_and_workers(benchmark::internal::Benchmark* b) {
  for (int exec : {0, 1}) {
    for (int n : {10, 100}) b->Args({exec, n});
  }
}

}  // namespace

BENCHMARK(BM_WorkerGradients)->Apply(exec_and_workers);
BENCHMARK(BM_MeanHessianMessages)->Apply(exec_and_workers);
BENCHMARK(BM_CompressEach)->Apply(exec_and_workers);
BENCHMARK(BM_EstimateOmega)->Args({0, 1})->Args({1, 1});
BENCHMARK(BM_M3Iterations)->Apply(exec_and_workers);

BENCHMARK_MAIN();
