#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace commsim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct SparseTerm {
  std::uint32_t row;
  double value;
};

/// Dense symmetric matrix that remembers its bandwidth so products skip the
/// structurally zero part (the Algorithm-3 base is tridiagonal, F.1 uses I).
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;

  /// Throws ParameterError if `dense` is not square or not symmetric to 1e-12.
  explicit SymmetricMatrix(Mat dense);

  static SymmetricMatrix identity(std::size_t dim);
  /// (1/4) tridiag(-1, 2, -1).
  static SymmetricMatrix tridiagonal_base(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t bandwidth() const { return bandwidth_; }
  const Mat& dense() const { return data_; }

  /// out = M x
  void apply(const Vec& x, Vec& out) const;
  /// out += alpha * M x
  void apply_add(const Vec& x, double alpha, Vec& out) const;
  /// out += alpha * M v for the sparse vector v = sum_j values[j] e_{indices[j]}
  void apply_sparse_add(std::span<const std::uint32_t> indices,
                        std::span<const double> values, double alpha,
                        Eigen::Ref<Vec> out) const;

  /// Appends the entries of alpha * M v (same products as apply_sparse_add,
  /// one term per touched row and nonzero of v) without summing them.
  void sparse_terms(std::span<const std::uint32_t> indices, std::span<const double> values,
                    double alpha, std::vector<SparseTerm>& out) const;

  SymmetricMatrix scaled(double s) const;

  /// Diagonals 0..bandwidth (diagonal k has dim - k entries).
  std::vector<std::vector<double>> diagonals() const;
  static SymmetricMatrix from_diagonals(const std::vector<std::vector<double>>& diagonals);

 private:
  void store_bands();

  Mat data_;
  std::size_t bandwidth_ = 0;
  // Diagonals 0..bandwidth as contiguous arrays; empty when the band is wide
  // enough that the dense product is used.
  std::vector<std::vector<double>> bands_;
};

/// Largest |eigenvalue| of a symmetric matrix. Runs Lanczos (power iteration
/// with the Krylov space kept and reorthogonalized) and reads off both ends of
/// the spectrum, so +/- pairs of equal magnitude need no special handling.
/// Stops once the extreme Ritz values move by less than tol (relative) between
/// checks; throws ConvergenceError with the last relative movement otherwise.
double spectral_norm(const SymmetricMatrix& m, double tol = 1e-10,
                     int max_iters = 10000);
double spectral_norm(const Mat& m, double tol = 1e-10, int max_iters = 10000);

}  // namespace commsim
