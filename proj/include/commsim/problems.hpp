#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "commsim/linalg.hpp"
#include "commsim/rng.hpp"

namespace commsim {

/// A finite-sum objective f = (1/n) sum_i f_i split over n workers.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string family() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t workers() const = 0;

  virtual double worker_value(std::size_t i, const Vec& x) const = 0;
  virtual void worker_grad(std::size_t i, const Vec& x, Vec& out) const = 0;

  virtual double value(const Vec& x) const;
  virtual void grad(const Vec& x, Vec& out) const;
  Vec grad(const Vec& x) const;
  Vec worker_grad(std::size_t i, const Vec& x) const;

  /// True when every f_i has a constant Hessian, so gradient differences can
  /// be formed from a Hessian product alone.
  virtual bool constant_hessian() const { return false; }
  /// acc += alpha * H_i v for the sparse v given by (indices, values).
  /// Only valid when constant_hessian() is true.
  virtual void hessian_sparse_add(std::size_t i, std::span<const std::uint32_t> indices,
                                  std::span<const double> values, double alpha,
                                  Eigen::Ref<Vec> acc) const;
  /// Appends the entries of alpha * H_i v as (row, value) terms.
  virtual void hessian_sparse_terms(std::size_t i, std::span<const std::uint32_t> indices,
                                    std::span<const double> values, double alpha,
                                    std::vector<SparseTerm>& out) const;

  /// f(x), writing grad f(x) to out.
  virtual double value_and_grad(const Vec& x, Vec& out) const;
  /// acc += alpha * H_i v. Only valid when constant_hessian() is true.
  virtual void hessian_add(std::size_t i, const Vec& v, double alpha, Vec& acc) const;

  /// Exact smoothness constant of f when the family knows it.
  virtual std::optional<double> smoothness() const { return std::nullopt; }
  /// All f_i identical.
  virtual bool homogeneous() const { return false; }
};

/// n quadratics f_i(x) = (1/2) x^T A_i x + b_i^T x + c_i.
///
/// Two storage forms: A_i = s_i X over a shared base X, or one explicit
/// symmetric block per worker.
class QuadraticEnsemble final : public Problem {
 public:
  static QuadraticEnsemble scaled(SymmetricMatrix base, std::vector<double> scales, Mat b,
                                  Vec c);
  static QuadraticEnsemble dense(std::vector<SymmetricMatrix> blocks, Mat b, Vec c);

  std::string family() const override { return "quadratic"; }
  std::size_t dim() const override { return static_cast<std::size_t>(b_.rows()); }
  std::size_t workers() const override { return static_cast<std::size_t>(b_.cols()); }

  double worker_value(std::size_t i, const Vec& x) const override;
  void worker_grad(std::size_t i, const Vec& x, Vec& out) const override;
  double value(const Vec& x) const override;
  void grad(const Vec& x, Vec& out) const override;
  using Problem::grad;
  using Problem::worker_grad;

  bool constant_hessian() const override { return true; }
  void hessian_sparse_add(std::size_t i, std::span<const std::uint32_t> indices,
                          std::span<const double> values, double alpha,
                          Eigen::Ref<Vec> acc) const override;
  void hessian_sparse_terms(std::size_t i, std::span<const std::uint32_t> indices,
                            std::span<const double> values, double alpha,
                            std::vector<SparseTerm>& out) const override;
  double value_and_grad(const Vec& x, Vec& out) const override;
  void hessian_add(std::size_t i, const Vec& v, double alpha, Vec& acc) const override;
  std::optional<double> smoothness() const override;
  bool homogeneous() const override { return homogeneous_; }

  bool is_scaled() const { return blocks_.empty(); }
  const SymmetricMatrix& base() const { return base_; }
  const std::vector<double>& scales() const { return scales_; }
  SymmetricMatrix matrix(std::size_t i) const;
  const SymmetricMatrix& mean_matrix() const { return mean_; }
  const Mat& linear_terms() const { return b_; }
  const Vec& offsets() const { return c_; }
  const Vec& mean_linear() const { return b_mean_; }

 private:
  QuadraticEnsemble() = default;
  void finish();

  SymmetricMatrix base_;
  std::vector<double> scales_;
  std::vector<SymmetricMatrix> blocks_;
  SymmetricMatrix mean_;
  Mat b_;
  Vec c_;
  Vec b_mean_;
  double c_mean_ = 0.0;
  bool homogeneous_ = false;
  double mean_norm_ = 0.0;
};

/// A_i x + b_i.
Vec quad_grad(const QuadraticEnsemble& ens, std::size_t i, const Vec& x);

/// Which shared matrix the generator scales.
enum class QuadraticBase { Tridiagonal, Identity };

struct QuadraticGenerator {
  std::size_t n = 10;
  std::size_t d = 300;
  double v = 1.0;
  double sigma = 0.0;
  /// Truncation bound for the scale noise; nullopt means no truncation.
  std::optional<double> v0;
  QuadraticBase base = QuadraticBase::Tridiagonal;
};

/// A_i = (v + xi_i) X with xi_i ~ N(0, sigma^2) truncated to [-v0, v0],
/// b_i ~ N(0, I), c_i = 0.
QuadraticEnsemble generate_het_quadratic(const QuadraticGenerator& gen, Stream& rng);

struct ProblemConstants {
  double L = 0.0;
  std::vector<double> L_i;
  double L_max = 0.0;
  double L_hat = 0.0;
  double L_A = 0.0;
  double L_B = 0.0;
  std::vector<double> D_i;
  /// Values are sampled lower estimates rather than exact.
  bool sampled = false;
};

ProblemConstants quad_constants(const QuadraticEnsemble& ens);

struct SamplingOptions {
  std::size_t draws = 64;
  double radius = 1.0;
  double fd_step = 1e-5;
};

/// Sampled lower estimates for a general problem. L_i and L come from
/// gradient-difference quotients; D_i from finite-difference Hessian-vector
/// products at independently drawn points per worker.
ProblemConstants sampled_constants(const Problem& problem, const Vec& center,
                                   const SamplingOptions& opts, Stream& rng);

/// Exact constants for quadratics, sampled ones otherwise.
ProblemConstants problem_constants(const Problem& problem, const Vec& center, Stream& rng);

/// Samples x and u_1..u_n in a ball of the given radius and returns the largest
/// observed ratio
///   ||(1/n) sum (grad f_i(x + u_i) - grad f_i(x))||^2
///   / (L_A^2 (1/n) sum ||u_i||^2 + L_B^2 ||(1/n) sum u_i||^2).
double verify_functional_inequality(const Problem& problem, double L_A, double L_B,
                                    std::size_t num_draws, double radius, Stream& rng);

/// Autoencoder objective with synthetic data:
///   f_i(D, E) = (1/m_i) sum_{b in shard i} ||D E b - b||^2 + (lambda/2) ||D E - I||_F^2
/// with x = vec(D) ++ vec(E) (column-major), D: d1 x d2, E: d2 x d1.
class MatrixFactorizationProblem final : public Problem {
 public:
  /// `samples` holds one sample per row (m x d1); rows are split into n equal
  /// contiguous shards.
  MatrixFactorizationProblem(std::size_t d1, std::size_t d2, Mat samples, double lambda,
                             std::size_t n);

  std::string family() const override { return "matfac"; }
  std::size_t dim() const override { return 2 * d1_ * d2_; }
  std::size_t workers() const override { return second_moments_.size(); }

  double worker_value(std::size_t i, const Vec& x) const override;
  void worker_grad(std::size_t i, const Vec& x, Vec& out) const override;
  using Problem::worker_grad;

  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }
  double lambda() const { return lambda_; }

  /// Value and gradient of the objective on a single shard.
  double eval(std::size_t i, const Vec& x, Vec* grad) const;

 private:
  std::size_t d1_;
  std::size_t d2_;
  double lambda_;
  std::vector<Mat> second_moments_;
};

struct ValueGrad {
  double value = 0.0;
  Vec grad;
};

/// Value and gradient of the full objective (1/n) sum_i f_i.
ValueGrad matfac_eval(const MatrixFactorizationProblem& p, const Vec& x);

/// Standard-normal samples, then the problem above.
MatrixFactorizationProblem generate_matfac(std::size_t d1, std::size_t d2, std::size_t m,
                                           double lambda, std::size_t n, Stream& rng);

/// Worst-case chain function f(x) = (L lambda^2 / 152) F_T(x / lambda), held
/// identically by every worker.
class ChainProblem final : public Problem {
 public:
  static constexpr double kDelta0 = 12.0;
  static constexpr double kL1 = 152.0;
  static constexpr double kGammaInf = 23.0;

  ChainProblem(std::size_t T, double lambda, double L_target, std::size_t n = 1);

  std::string family() const override { return "chain"; }
  std::size_t dim() const override { return T_; }
  std::size_t workers() const override { return n_; }

  double worker_value(std::size_t i, const Vec& x) const override;
  void worker_grad(std::size_t i, const Vec& x, Vec& out) const override;
  double value(const Vec& x) const override;
  void grad(const Vec& x, Vec& out) const override;
  using Problem::grad;
  using Problem::worker_grad;

  std::optional<double> smoothness() const override { return L_; }
  bool homogeneous() const override { return true; }

  double lambda() const { return lambda_; }

 private:
  std::size_t T_;
  double lambda_;
  double L_;
  std::size_t n_;
};

double chain_psi(double x);
double chain_psi_prime(double x);
double chain_phi(double x);
double chain_phi_prime(double x);

/// F_T(x) and (optionally) its gradient, T = x.size().
double chain_eval(const Vec& x, Vec* grad);

/// Largest 1-based index of a nonzero coordinate, 0 for the zero vector.
std::size_t prog(const Vec& x);

}  // namespace commsim
