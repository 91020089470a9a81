#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "commsim/error.hpp"
#include "commsim/harness.hpp"

namespace commsim {

namespace {

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

using Suite = std::function<std::vector<Check>()>;

Vec gaussian(std::size_t d, Stream& rng) {
  std::normal_distribution<double> normal;
  Vec x(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
  return x;
}

std::vector<Check> compressor_suite() {
  const std::size_t d = 20;
  const std::size_t samples = 20000;
  const std::vector<std::pair<std::string, CompressorSpec>> specs = {
      {"rand_k", CompressorSpec::rand_k(d, 5)},
      {"same_rand_k", CompressorSpec::same_rand_k(d, 5)},
      {"perm_k", CompressorSpec::perm_k(d, 4)},
      {"natural", CompressorSpec::natural(d)},
      {"natural_perm_k",
       CompressorSpec::compose(CompressorSpec::natural(d), CompressorSpec::perm_k(d, 4))}};
  std::vector<Check> out;
  Stream rng = make_stream(11, StreamRole::Estimator, 0);
  for (const auto& [name, spec] : specs) {
    double worst_z = 0.0;
    double worst_ratio = 0.0;
    for (int probe = 0; probe < 5; ++probe) {
      const Vec x = gaussian(d, rng);
      const MomentEstimate m = estimate_moments(spec, x, samples, rng);
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (m.std_error[j] > 0.0) {
          worst_z = std::max(worst_z, std::abs(m.bias[j]) / m.std_error[j]);
        } else if (m.bias[j] != 0.0) {
          worst_z = std::numeric_limits<double>::infinity();
        }
      }
      worst_ratio = std::max(worst_ratio, m.relative_variance / *spec.omega());
    }
    out.push_back({name + " unbiased", worst_z <= 4.0,
                   fmt::format("max |bias| / stderr = {:.3f}", worst_z)});
    out.push_back({name + " variance", worst_ratio <= 1.05,
                   fmt::format("max omega_hat / omega = {:.4f}", worst_ratio)});
  }
  return out;
}

std::vector<Check> permk_suite() {
  std::vector<Check> out;
  Stream rng = make_stream(12, StreamRole::Estimator, 0);
  for (auto [d, n] : {std::pair<std::size_t, std::size_t>{12, 3}, {100, 10}}) {
    double worst = 0.0;
    std::vector<SparseMessage> msgs(n);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec x = gaussian(d, rng);
      apply_perm_k_collection(x, n, rng, msgs);
      Vec avg = Vec::Zero(x.size());
      for (const auto& m : msgs) add_to(m, 1.0 / static_cast<double>(n), avg);
      worst = std::max(worst, (avg - x).lpNorm<Eigen::Infinity>());
    }
    out.push_back({fmt::format("perm_k exact average d={} n={}", d, n), worst <= 1e-12,
                   fmt::format("max error {:.3g}", worst)});
    const double theta = estimate_theta(CompressorSpec::perm_k(d, n), n, gaussian(d, rng), 10000, rng);
    out.push_back({fmt::format("perm_k theta d={} n={}", d, n), theta == 0.0,
                   fmt::format("theta = {}", theta)});
  }
  return out;
}

QuadraticEnsemble small_quadratic(std::size_t d, std::size_t n, double sigma, std::uint64_t seed) {
  QuadraticGenerator gen;
  gen.n = n;
  gen.d = d;
  gen.sigma = sigma;
  Stream rng = make_stream(seed, StreamRole::Problem, 0);
  return generate_het_quadratic(gen, rng);
}

std::vector<Check> gd_equivalence_suite() {
  const std::size_t d = 60, n = 6;
  const QuadraticEnsemble ens = small_quadratic(d, n, 0.0, 3);
  const double gamma = 1.0 / quad_constants(ens).L;
  AlgoConfig mp;
  mp.gamma = gamma;
  mp.p = 1.0 / static_cast<double>(n);
  mp.primal = CompressorSpec::perm_k(d, n);
  AlgoConfig gd;
  gd.gamma = gamma;
  RunOptions opts;
  opts.stop.max_iters = 200;
  const Vec x0 = Vec::Zero(d);
  const RunResult a = run_experiment(Algorithm::MarinaP, ens, mp, x0, opts, 5);
  const RunResult b = run_experiment(Algorithm::GD, ens, gd, x0, opts, 5);
  const double gap = (a.state.x - b.state.x).lpNorm<Eigen::Infinity>();
  return {{"marina_p perm_k matches gd", gap <= 1e-10, fmt::format("max |x - x_gd| = {:.3g}", gap)}};
}

std::vector<Check> constants_suite() {
  std::vector<Check> out;
  const ProblemConstants homog = quad_constants(small_quadratic(30, 5, 0.0, 4));
  out.push_back({"homogeneous L_A", homog.L_A == 0.0, fmt::format("L_A = {}", homog.L_A)});

  const std::size_t d = 8;
  const std::vector<double> Ls = {0.5, 1.0, 2.0, 3.5};
  std::vector<SymmetricMatrix> blocks;
  for (double l : Ls) blocks.emplace_back(Mat(l * Mat::Identity(d, d)));
  const auto ens = QuadraticEnsemble::dense(blocks, Mat::Zero(d, Ls.size()), Vec::Zero(Ls.size()));
  double mean = 0.0;
  for (double l : Ls) mean += l / static_cast<double>(Ls.size());
  double spread = 0.0;
  for (double l : Ls) spread = std::max(spread, std::abs(l - mean));
  const double expected = std::sqrt(2.0) * spread;
  const double got = quad_constants(ens).L_A;
  out.push_back({"scaled identity L_A", std::abs(got - expected) <= 1e-10,
                 fmt::format("L_A = {:.12g}, expected {:.12g}", got, expected)});

  Stream rng = make_stream(13, StreamRole::Estimator, 0);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const QuadraticEnsemble q = small_quadratic(20, 4, 0.3, 100 + s);
    const ProblemConstants c = quad_constants(q);
    const double ratio = verify_functional_inequality(q, c.L_A, c.L_B, 10000, 1.0, rng);
    out.push_back({fmt::format("functional inequality ensemble {}", s), ratio <= 1.0,
                   fmt::format("max ratio {:.4f}", ratio)});
  }
  return out;
}

std::vector<Check> chain_suite() {
  const std::size_t T = 50;
  Stream rng = make_stream(14, StreamRole::Estimator, 0);
  std::uniform_int_distribution<std::size_t> depth(0, T - 1);
  std::normal_distribution<double> normal(0.0, 2.0);
  bool norm_ok = true, inf_ok = true, prog_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    Vec x = Vec::Zero(T);
    const std::size_t k = depth(rng);
    for (std::size_t j = 0; j < k; ++j) x[static_cast<Eigen::Index>(j)] = normal(rng);
    Vec g;
    chain_eval(x, &g);
    norm_ok = norm_ok && g.norm() > 1.0;
    inf_ok = inf_ok && g.lpNorm<Eigen::Infinity>() <= ChainProblem::kGammaInf;
    prog_ok = prog_ok && prog(g) <= prog(x) + 1;
  }
  const double f0 = chain_eval(Vec::Zero(T), nullptr);
  const double expected = -std::sqrt(std::exp(1.0) * M_PI / 2.0);
  return {{"chain gradient norm > 1", norm_ok, "1000 points"},
          {"chain gradient inf-norm <= 23", inf_ok, "1000 points"},
          {"chain progress grows by at most one", prog_ok, "1000 points"},
          {"chain F(0)", std::abs(f0 - expected) <= 1e-8,
           fmt::format("F(0) = {:.12g}", f0)}};
}

double fd_error(const Problem& p, const Vec& x, double h) {
  const Vec g = p.grad(x);
  Vec fd(x.size());
  Vec y = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    y[j] = x[j] + h;
    const double up = p.value(y);
    y[j] = x[j] - h;
    const double down = p.value(y);
    y[j] = x[j];
    fd[j] = (up - down) / (2.0 * h);
  }
  return (g - fd).norm() / std::max(g.norm(), 1e-12);
}

std::vector<Check> gradient_suite() {
  Stream rng = make_stream(15, StreamRole::Estimator, 0);
  const QuadraticEnsemble quad = small_quadratic(15, 3, 0.2, 7);
  Stream mrng = make_stream(7, StreamRole::Problem, 0);
  const MatrixFactorizationProblem mf = generate_matfac(6, 3, 12, 0.01, 3, mrng);
  const ChainProblem chain(10, 1.5, 2.0, 2);
  std::vector<Check> out;
  for (const Problem* p : {static_cast<const Problem*>(&quad), static_cast<const Problem*>(&mf),
                           static_cast<const Problem*>(&chain)}) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      worst = std::max(worst, fd_error(*p, gaussian(p->dim(), rng), 1e-5));
    }
    out.push_back({p->family() + " gradient", worst <= 1e-5,
                   fmt::format("max relative error {:.3g}", worst)});
  }
  return out;
}

std::vector<Check> descent_suite() {
  const std::size_t d = 50, n = 5;
  const QuadraticEnsemble ens = small_quadratic(d, n, 0.1, 9);
  const double L = quad_constants(ens).L;
  std::vector<Check> out;
  for (Algorithm alg : {Algorithm::GD, Algorithm::Marina, Algorithm::MarinaP, Algorithm::M3,
                        Algorithm::EF21P}) {
    AlgoConfig cfg;
    cfg.gamma = 0.5 / L;
    cfg.p = 0.2;
    cfg.p_P = 0.2;
    cfg.p_D = 0.2;
    cfg.beta = 0.5;
    cfg.primal = alg == Algorithm::EF21P ? CompressorSpec::top_k(d, 10)
                                         : CompressorSpec::perm_k(d, n);
    cfg.dual = CompressorSpec::rand_k(d, 10);
    double worst = -std::numeric_limits<double>::infinity();
    RunOptions opts;
    opts.stop.max_iters = 100;
    opts.observer = [&](const StepObservation& o) {
      const double step = (o.x_after - o.x_before).squaredNorm();
      const double rhs = o.f_before - 0.5 * o.gamma * o.grad_before.squaredNorm() -
                         (0.5 / o.gamma - 0.5 * L) * step +
                         0.5 * o.gamma * (o.g_used - o.grad_before).squaredNorm();
      worst = std::max(worst, o.f_after - rhs);
    };
    run_experiment(alg, ens, cfg, Vec::Zero(d), opts, 21);
    out.push_back({to_string(alg) + " descent inequality", worst <= 1e-8,
                   fmt::format("max violation {:.3g}", worst)});
  }
  return out;
}

const std::vector<std::pair<std::string, Suite>>& suites() {
  static const std::vector<std::pair<std::string, Suite>> all = {
      {"compressors", compressor_suite}, {"permk", permk_suite},
      {"gd_equivalence", gd_equivalence_suite}, {"constants", constants_suite},
      {"chain", chain_suite}, {"gradients", gradient_suite}, {"descent", descent_suite}};
  return all;
}

}  // namespace

std::vector<std::string> verify_suites() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : suites()) names.push_back(name);
  names.emplace_back("all");
  return names;
}

CommandReport cmd_verify(const std::string& suite, std::ostream& out) {
  CommandReport report;
  bool found = false;
  for (const auto& [name, fn] : suites()) {
    if (suite != "all" && suite != name) continue;
    found = true;
    for (const Check& c : fn()) {
      out << (c.ok ? "PASS " : "FAIL ") << name << ": " << c.name << " (" << c.detail << ")\n";
      report.ok = report.ok && c.ok;
    }
  }
  if (!found) throw ConfigError("suite", "unknown verify suite '" + suite + "'");
  return report;
}

}  // namespace commsim
