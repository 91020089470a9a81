#include "commsim/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "commsim/error.hpp"

namespace commsim {

namespace {

void check_worker(const Problem& p, std::size_t i) {
  if (i >= p.workers()) {
    throw ParameterError("worker index " + std::to_string(i) + " out of range (n = " +
                         std::to_string(p.workers()) + ")");
  }
}

void check_point(const Problem& p, const Vec& x) {
  if (static_cast<std::size_t>(x.size()) != p.dim()) {
    throw DimensionError("point has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(p.dim()));
  }
}

Vec gaussian(std::size_t d, Stream& rng) {
  std::normal_distribution<double> normal;
  Vec v(d);
  for (auto& e : v) e = normal(rng);
  return v;
}

// Uniform draw from the ball of the given radius.
Vec ball_sample(std::size_t d, double radius, Stream& rng) {
  Vec v = gaussian(d, rng);
  const double nrm = v.norm();
  if (nrm == 0.0) return v;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
  return v * (r / nrm);
}

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

// Problem

double Problem::value(const Vec& x) const {
  double total = 0.0;
  for (std::size_t i = 0; i < workers(); ++i) total += worker_value(i, x);
  return total / static_cast<double>(workers());
}

void Problem::grad(const Vec& x, Vec& out) const {
  out = Vec::Zero(dim());
  Vec gi(dim());
  for (std::size_t i = 0; i < workers(); ++i) {
    worker_grad(i, x, gi);
    out += gi;
  }
  out /= static_cast<double>(workers());
}

Vec Problem::grad(const Vec& x) const {
  Vec out(dim());
  grad(x, out);
  return out;
}

Vec Problem::worker_grad(std::size_t i, const Vec& x) const {
  Vec out(dim());
  worker_grad(i, x, out);
  return out;
}

void Problem::hessian_sparse_add(std::size_t, std::span<const std::uint32_t>,
                                 std::span<const double>, double, Eigen::Ref<Vec>) const {
  throw ParameterError(family() + " problem has no constant Hessian");
}

void Problem::hessian_sparse_terms(std::size_t, std::span<const std::uint32_t>,
                                   std::span<const double>, double,
                                   std::vector<SparseTerm>&) const {
  throw ParameterError(family() + " problem has no constant Hessian");
}

double Problem::value_and_grad(const Vec& x, Vec& out) const {
  grad(x, out);
  return value(x);
}

void Problem::hessian_add(std::size_t, const Vec&, double, Vec&) const {
  throw ParameterError(family() + " problem has no constant Hessian");
}

// QuadraticEnsemble

QuadraticEnsemble QuadraticEnsemble::scaled(SymmetricMatrix base, std::vector<double> scales,
                                            Mat b, Vec c) {
  if (scales.empty()) throw ParameterError("quadratic ensemble needs at least one worker");
  if (base.dim() == 0) throw ParameterError("quadratic ensemble needs d >= 1");
  QuadraticEnsemble ens;
  ens.base_ = std::move(base);
  ens.scales_ = std::move(scales);
  ens.b_ = std::move(b);
  ens.c_ = std::move(c);
  if (static_cast<std::size_t>(ens.b_.rows()) != ens.base_.dim() ||
      static_cast<std::size_t>(ens.b_.cols()) != ens.scales_.size()) {
    throw DimensionError("linear terms must be d x n");
  }
  ens.finish();
  return ens;
}

QuadraticEnsemble QuadraticEnsemble::dense(std::vector<SymmetricMatrix> blocks, Mat b, Vec c) {
  if (blocks.empty()) throw ParameterError("quadratic ensemble needs at least one worker");
  const std::size_t d = blocks.front().dim();
  if (d == 0) throw ParameterError("quadratic ensemble needs d >= 1");
  for (const auto& a : blocks) {
    if (a.dim() != d) throw DimensionError("all blocks must share dimension d");
  }
  QuadraticEnsemble ens;
  ens.blocks_ = std::move(blocks);
  ens.b_ = std::move(b);
  ens.c_ = std::move(c);
  if (static_cast<std::size_t>(ens.b_.rows()) != d ||
      static_cast<std::size_t>(ens.b_.cols()) != ens.blocks_.size()) {
    throw DimensionError("linear terms must be d x n");
  }
  ens.finish();
  return ens;
}

void QuadraticEnsemble::finish() {
  const std::size_t n = workers();
  if (static_cast<std::size_t>(c_.size()) != n) throw DimensionError("offsets must have length n");
  if (!b_.allFinite() || !c_.allFinite()) throw ParameterError("quadratic data is not finite");
  b_mean_ = b_.rowwise().mean();
  c_mean_ = c_.mean();
  if (is_scaled()) {
    double s_mean = 0.0;
    for (double s : scales_) {
      if (!std::isfinite(s)) throw ParameterError("quadratic scale is not finite");
      s_mean += s;
    }
    s_mean /= static_cast<double>(n);
    mean_ = base_.scaled(s_mean);
    mean_norm_ = std::abs(s_mean) * spectral_norm(base_);
    const double entry = base_.dense().cwiseAbs().maxCoeff();
    homogeneous_ = std::all_of(scales_.begin(), scales_.end(), [&](double s) {
      return std::abs(s - s_mean) * entry <= 1e-12;
    });
  } else {
    Mat sum = Mat::Zero(dim(), dim());
    for (const auto& a : blocks_) sum += a.dense();
    mean_ = SymmetricMatrix(sum / static_cast<double>(n));
    mean_norm_ = spectral_norm(mean_);
    homogeneous_ = std::all_of(blocks_.begin(), blocks_.end(), [&](const SymmetricMatrix& a) {
      return max_abs_diff(a.dense(), mean_.dense()) <= 1e-12;
    });
  }
}

SymmetricMatrix QuadraticEnsemble::matrix(std::size_t i) const {
  check_worker(*this, i);
  return is_scaled() ? base_.scaled(scales_[i]) : blocks_[i];
}

double QuadraticEnsemble::worker_value(std::size_t i, const Vec& x) const {
  check_worker(*this, i);
  check_point(*this, x);
  Vec ax(dim());
  if (is_scaled()) {
    base_.apply(x, ax);
    ax *= scales_[i];
  } else {
    blocks_[i].apply(x, ax);
  }
  return 0.5 * x.dot(ax) + b_.col(static_cast<Eigen::Index>(i)).dot(x) + c_[i];
}

void QuadraticEnsemble::worker_grad(std::size_t i, const Vec& x, Vec& out) const {
  check_worker(*this, i);
  check_point(*this, x);
  out = b_.col(static_cast<Eigen::Index>(i));
  if (is_scaled()) {
    base_.apply_add(x, scales_[i], out);
  } else {
    blocks_[i].apply_add(x, 1.0, out);
  }
}

double QuadraticEnsemble::value(const Vec& x) const {
  check_point(*this, x);
  Vec ax(dim());
  mean_.apply(x, ax);
  return 0.5 * x.dot(ax) + b_mean_.dot(x) + c_mean_;
}

void QuadraticEnsemble::grad(const Vec& x, Vec& out) const {
  check_point(*this, x);
  out = b_mean_;
  mean_.apply_add(x, 1.0, out);
}

void QuadraticEnsemble::hessian_sparse_add(std::size_t i, std::span<const std::uint32_t> indices,
                                           std::span<const double> values, double alpha,
                                           Eigen::Ref<Vec> acc) const {
  if (is_scaled()) {
    base_.apply_sparse_add(indices, values, alpha * scales_[i], acc);
  } else {
    blocks_[i].apply_sparse_add(indices, values, alpha, acc);
  }
}

void QuadraticEnsemble::hessian_add(std::size_t i, const Vec& v, double alpha, Vec& acc) const {
  if (is_scaled()) {
    base_.apply_add(v, alpha * scales_[i], acc);
  } else {
    blocks_[i].apply_add(v, alpha, acc);
  }
}

void QuadraticEnsemble::hessian_sparse_terms(std::size_t i,
                                             std::span<const std::uint32_t> indices,
                                             std::span<const double> values, double alpha,
                                             std::vector<SparseTerm>& out) const {
  if (is_scaled()) {
    base_.sparse_terms(indices, values, alpha * scales_[i], out);
  } else {
    blocks_[i].sparse_terms(indices, values, alpha, out);
  }
}

// With g = A x + b: f = (1/2) x^T A x + b^T x + c = (1/2) x^T (g + b) + c.
double QuadraticEnsemble::value_and_grad(const Vec& x, Vec& out) const {
  grad(x, out);
  return 0.5 * x.dot(out + b_mean_) + c_mean_;
}

std::optional<double> QuadraticEnsemble::smoothness() const { return mean_norm_; }

Vec quad_grad(const QuadraticEnsemble& ens, std::size_t i, const Vec& x) {
  return ens.worker_grad(i, x);
}

QuadraticEnsemble generate_het_quadratic(const QuadraticGenerator& gen, Stream& rng) {
  if (gen.n < 1) throw ParameterError("generate_het_quadratic: n must be >= 1");
  if (gen.d < 2) throw ParameterError("generate_het_quadratic: d must be >= 2");
  if (!(gen.sigma >= 0.0) || !std::isfinite(gen.sigma)) {
    throw ParameterError("generate_het_quadratic: sigma must be >= 0");
  }
  if (gen.v0 && !(*gen.v0 > 0.0)) {
    throw ParameterError("generate_het_quadratic: v0 must be > 0");
  }
  if (!std::isfinite(gen.v)) throw ParameterError("generate_het_quadratic: v is not finite");

  std::vector<double> scales(gen.n, gen.v);
  if (gen.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, gen.sigma);
    for (auto& s : scales) {
      double xi = noise(rng);
      if (gen.v0) {
        constexpr int kMaxRejections = 1000000;
        int tries = 0;
        while (std::abs(xi) > *gen.v0) {
          if (++tries > kMaxRejections) {
            throw ParameterError("generate_het_quadratic: truncation window too narrow");
          }
          xi = noise(rng);
        }
      }
      s += xi;
    }
  }
  std::normal_distribution<double> normal;
  Mat b(gen.d, gen.n);
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, j) = normal(rng);
  }
  SymmetricMatrix base = gen.base == QuadraticBase::Tridiagonal
                             ? SymmetricMatrix::tridiagonal_base(gen.d)
                             : SymmetricMatrix::identity(gen.d);
  return QuadraticEnsemble::scaled(std::move(base), std::move(scales), std::move(b),
                                   Vec::Zero(gen.n));
}

// Constants

namespace {

void finish_constants(ProblemConstants& c) {
  const double n = static_cast<double>(c.L_i.size());
  c.L_max = *std::max_element(c.L_i.begin(), c.L_i.end());
  double sq = 0.0;
  double sum = 0.0;
  for (double l : c.L_i) {
    sq += l * l;
    sum += l;
  }
  c.L_hat = std::sqrt(sq / n);
  c.L_A = std::sqrt(2.0) * *std::max_element(c.D_i.begin(), c.D_i.end());
  c.L_B = std::sqrt(2.0) * sum / n;
}

}  // namespace

ProblemConstants quad_constants(const QuadraticEnsemble& ens) {
  const std::size_t n = ens.workers();
  ProblemConstants c;
  c.L_i.resize(n);
  c.D_i.resize(n);
  if (ens.is_scaled()) {
    const double xn = spectral_norm(ens.base());
    double s_mean = 0.0;
    for (double s : ens.scales()) s_mean += s;
    s_mean /= static_cast<double>(n);
    c.L = *ens.smoothness();
    for (std::size_t i = 0; i < n; ++i) {
      c.L_i[i] = std::abs(ens.scales()[i]) * xn;
      c.D_i[i] = std::abs(ens.scales()[i] - s_mean) * xn;
    }
  } else {
    c.L = *ens.smoothness();
    for (std::size_t i = 0; i < n; ++i) {
      const SymmetricMatrix block = ens.matrix(i);
      const Mat& a = block.dense();
      c.L_i[i] = spectral_norm(a);
      c.D_i[i] = spectral_norm(Mat(a - ens.mean_matrix().dense()));
    }
  }
  finish_constants(c);
  if (ens.homogeneous()) {
    c.L_A = 0.0;
    c.L_B = c.L;
    std::fill(c.D_i.begin(), c.D_i.end(), 0.0);
  }
  return c;
}

ProblemConstants sampled_constants(const Problem& problem, const Vec& center,
                                   const SamplingOptions& opts, Stream& rng) {
  check_point(problem, center);
  if (opts.draws < 1) throw ParameterError("sampled_constants: draws must be >= 1");
  if (!(opts.radius > 0.0) || !(opts.fd_step > 0.0)) {
    throw ParameterError("sampled_constants: radius and fd_step must be > 0");
  }
  const std::size_t n = problem.workers();
  const std::size_t d = problem.dim();
  ProblemConstants c;
  c.sampled = true;
  c.L_i.assign(n, 0.0);
  c.D_i.assign(n, 0.0);

  Vec gx(d), gy(d);
  for (std::size_t s = 0; s < opts.draws; ++s) {
    const Vec x = center + ball_sample(d, opts.radius, rng);
    const Vec y = x + ball_sample(d, 0.1 * opts.radius, rng);
    const double dist = (x - y).norm();
    if (dist == 0.0) continue;
    problem.grad(x, gx);
    problem.grad(y, gy);
    c.L = std::max(c.L, (gx - gy).norm() / dist);
    for (std::size_t i = 0; i < n; ++i) {
      problem.worker_grad(i, x, gx);
      problem.worker_grad(i, y, gy);
      c.L_i[i] = std::max(c.L_i[i], (gx - gy).norm() / dist);
    }

    // Hessian-vector products at independent points z_i along one direction v.
    Vec v = gaussian(d, rng);
    v.normalize();
    const double h = opts.fd_step * (1.0 + center.norm());
    Mat hv(d, n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec z = center + ball_sample(d, opts.radius, rng);
      problem.worker_grad(i, z + h * v, gx);
      problem.worker_grad(i, z - h * v, gy);
      hv.col(static_cast<Eigen::Index>(i)) = (gx - gy) / (2.0 * h);
    }
    const Vec mean = hv.rowwise().mean();
    for (std::size_t i = 0; i < n; ++i) {
      c.D_i[i] = std::max(c.D_i[i], (hv.col(static_cast<Eigen::Index>(i)) - mean).norm());
    }
  }
  if (auto exact = problem.smoothness()) {
    c.L = *exact;
    if (problem.homogeneous()) std::fill(c.L_i.begin(), c.L_i.end(), *exact);
  }
  finish_constants(c);
  return c;
}

ProblemConstants problem_constants(const Problem& problem, const Vec& center, Stream& rng) {
  if (const auto* quad = dynamic_cast<const QuadraticEnsemble*>(&problem)) {
    return quad_constants(*quad);
  }
  return sampled_constants(problem, center, SamplingOptions{}, rng);
}

double verify_functional_inequality(const Problem& problem, double L_A, double L_B,
                                    std::size_t num_draws, double radius, Stream& rng) {
  if (num_draws < 1) throw ParameterError("verify_functional_inequality: num_draws must be >= 1");
  if (!(radius > 0.0)) throw ParameterError("verify_functional_inequality: radius must be > 0");
  const std::size_t n = problem.workers();
  const std::size_t d = problem.dim();
  const double inv_n = 1.0 / static_cast<double>(n);
  double worst = 0.0;
  Vec g0(d), g1(d), lhs(d), u_mean(d);
  std::vector<Vec> u(n);
  for (std::size_t s = 0; s < num_draws; ++s) {
    const Vec x = ball_sample(d, radius, rng);
    double u_sq = 0.0;
    u_mean.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = ball_sample(d, radius, rng);
      u_sq += u[i].squaredNorm() * inv_n;
      u_mean += u[i] * inv_n;
    }
    if (u_sq == 0.0) continue;
    lhs.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      problem.worker_grad(i, x + u[i], g1);
      problem.worker_grad(i, x, g0);
      lhs += (g1 - g0) * inv_n;
    }
    const double rhs = L_A * L_A * u_sq + L_B * L_B * u_mean.squaredNorm();
    const double l = lhs.squaredNorm();
    if (rhs == 0.0) {
      if (l > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    worst = std::max(worst, l / rhs);
  }
  return worst;
}

// MatrixFactorizationProblem

MatrixFactorizationProblem::MatrixFactorizationProblem(std::size_t d1, std::size_t d2,
                                                       Mat samples, double lambda,
                                                       std::size_t n)
    : d1_(d1), d2_(d2), lambda_(lambda) {
  if (d1 < 1 || d2 < 1) throw ParameterError("matfac: layer sizes must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("matfac: lambda must be >= 0");
  }
  if (static_cast<std::size_t>(samples.cols()) != d1) {
    throw DimensionError("matfac: samples must have d1 columns");
  }
  const auto m = static_cast<std::size_t>(samples.rows());
  if (m < 1) throw ParameterError("matfac: need at least one sample");
  if (n < 1 || m % n != 0) {
    throw ParameterError("matfac: sample count " + std::to_string(m) +
                         " must split evenly over n = " + std::to_string(n));
  }
  const auto shard = static_cast<Eigen::Index>(m / n);
  second_moments_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto rows = samples.middleRows(static_cast<Eigen::Index>(i) * shard, shard);
    second_moments_.push_back(rows.transpose() * rows / static_cast<double>(shard));
  }
}

double MatrixFactorizationProblem::eval(std::size_t i, const Vec& x, Vec* grad) const {
  check_worker(*this, i);
  check_point(*this, x);
  const auto r1 = static_cast<Eigen::Index>(d1_);
  const auto r2 = static_cast<Eigen::Index>(d2_);
  const Eigen::Map<const Mat> D(x.data(), r1, r2);
  const Eigen::Map<const Mat> E(x.data() + r1 * r2, r2, r1);
  const Mat& S = second_moments_[i];
  Mat R = D * E;
  R.diagonal().array() -= 1.0;
  const Mat RS = R * S;
  const double value = RS.cwiseProduct(R).sum() + 0.5 * lambda_ * R.squaredNorm();
  if (grad != nullptr) {
    grad->resize(x.size());
    const Mat G = 2.0 * RS + lambda_ * R;
    Eigen::Map<Mat>(grad->data(), r1, r2) = G * E.transpose();
    Eigen::Map<Mat>(grad->data() + r1 * r2, r2, r1) = D.transpose() * G;
  }
  return value;
}

double MatrixFactorizationProblem::worker_value(std::size_t i, const Vec& x) const {
  return eval(i, x, nullptr);
}

void MatrixFactorizationProblem::worker_grad(std::size_t i, const Vec& x, Vec& out) const {
  eval(i, x, &out);
}

ValueGrad matfac_eval(const MatrixFactorizationProblem& p, const Vec& x) {
  ValueGrad out;
  out.grad = Vec::Zero(p.dim());
  Vec gi;
  for (std::size_t i = 0; i < p.workers(); ++i) {
    out.value += p.eval(i, x, &gi);
    out.grad += gi;
  }
  const double n = static_cast<double>(p.workers());
  out.value /= n;
  out.grad /= n;
  return out;
}

MatrixFactorizationProblem generate_matfac(std::size_t d1, std::size_t d2, std::size_t m,
                                           double lambda, std::size_t n, Stream& rng) {
  std::normal_distribution<double> normal;
  Mat samples(m, d1);
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) samples(r, j) = normal(rng);
  }
  return MatrixFactorizationProblem(d1, d2, std::move(samples), lambda, n);
}

// Chain

double chain_psi(double x) {
  if (x <= 0.5) return 0.0;
  const double t = 2.0 * x - 1.0;
  return std::exp(1.0 - 1.0 / (t * t));
}

double chain_psi_prime(double x) {
  if (x <= 0.5) return 0.0;
  const double t = 2.0 * x - 1.0;
  return chain_psi(x) * 4.0 / (t * t * t);
}

double chain_phi(double x) {
  // sqrt(e) * int_{-inf}^x exp(-t^2/2) dt = sqrt(2 pi e) * NormalCDF(x)
  static const double kScale = 0.5 * std::sqrt(2.0 * std::numbers::pi * std::numbers::e);
  return kScale * std::erfc(-x / std::numbers::sqrt2);
}

double chain_phi_prime(double x) { return std::exp(0.5 - 0.5 * x * x); }

double chain_eval(const Vec& x, Vec* grad) {
  const Eigen::Index T = x.size();
  if (T < 1) throw DimensionError("chain_eval: need T >= 1");
  const double psi1 = chain_psi(1.0);
  double value = -psi1 * chain_phi(x[0]);
  for (Eigen::Index i = 1; i < T; ++i) {
    value += chain_psi(-x[i - 1]) * chain_phi(-x[i]) - chain_psi(x[i - 1]) * chain_phi(x[i]);
  }
  if (grad != nullptr) {
    grad->resize(T);
    for (Eigen::Index j = 0; j < T; ++j) {
      double g = 0.0;
      if (j == 0) {
        g -= psi1 * chain_phi_prime(x[0]);
      } else {
        g -= chain_psi(-x[j - 1]) * chain_phi_prime(-x[j]) +
             chain_psi(x[j - 1]) * chain_phi_prime(x[j]);
      }
      if (j + 1 < T) {
        g -= chain_psi_prime(-x[j]) * chain_phi(-x[j + 1]) +
             chain_psi_prime(x[j]) * chain_phi(x[j + 1]);
      }
      (*grad)[j] = g;
    }
  }
  return value;
}

std::size_t prog(const Vec& x) {
  for (Eigen::Index i = x.size(); i > 0; --i) {
    if (x[i - 1] != 0.0) return static_cast<std::size_t>(i);
  }
  return 0;
}

ChainProblem::ChainProblem(std::size_t T, double lambda, double L_target, std::size_t n)
    : T_(T), lambda_(lambda), L_(L_target), n_(n) {
  if (T < 1) throw ParameterError("chain: T must be >= 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("chain: lambda must be > 0");
  if (!(L_target > 0.0) || !std::isfinite(L_target)) throw ParameterError("chain: L must be > 0");
  if (n < 1) throw ParameterError("chain: n must be >= 1");
}

double ChainProblem::value(const Vec& x) const {
  check_point(*this, x);
  return L_ * lambda_ * lambda_ / kL1 * chain_eval(x / lambda_, nullptr);
}

void ChainProblem::grad(const Vec& x, Vec& out) const {
  check_point(*this, x);
  chain_eval(x / lambda_, &out);
  out *= L_ * lambda_ / kL1;
}

double ChainProblem::worker_value(std::size_t i, const Vec& x) const {
  check_worker(*this, i);
  return value(x);
}

void ChainProblem::worker_grad(std::size_t i, const Vec& x, Vec& out) const {
  check_worker(*this, i);
  grad(x, out);
}

}  // namespace commsim
