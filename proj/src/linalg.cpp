#include "commsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "commsim/error.hpp"
#include "commsim/rng.hpp"

namespace commsim {

namespace {

std::size_t detect_bandwidth(const Mat& m) {
  const Eigen::Index d = m.rows();
  std::size_t band = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j + 1; i < d; ++i) {
      if (m(i, j) != 0.0) band = std::max(band, static_cast<std::size_t>(i - j));
    }
  }
  return band;
}

struct KrylovResult {
  double norm = 0.0;
  bool converged = false;
  double last_gap = std::numeric_limits<double>::infinity();
};

// Lanczos with full reorthogonalization: the power iteration's Krylov space
// yields both ends of the spectrum at once.
constexpr std::size_t kCheckEvery = 8;

KrylovResult lanczos_extremes(const SymmetricMatrix& m, double tol, int max_iters) {
  const std::size_t d = m.dim();
  Stream rng = make_stream(0x5eed, StreamRole::Init, d);
  std::normal_distribution<double> normal;
  Vec v(d);
  for (auto& e : v) e = normal(rng);
  v.normalize();

  const std::size_t cap = std::min<std::size_t>(d, static_cast<std::size_t>(max_iters));
  Mat basis(d, cap);
  std::vector<double> alpha;
  std::vector<double> beta;
  Vec w(d);
  KrylovResult res;
  double prev_lo = std::numeric_limits<double>::infinity();
  double prev_hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cap; ++k) {
    basis.col(static_cast<Eigen::Index>(k)) = v;
    m.apply(v, w);
    alpha.push_back(v.dot(w));
    const double applied = w.norm();
    // Two Gram-Schmidt passes against the whole basis.
    for (int pass = 0; pass < 2; ++pass) {
      const auto q = basis.leftCols(static_cast<Eigen::Index>(k + 1));
      w -= q * (q.transpose() * w);
    }
    const double b = w.norm();
    // A residual at rounding level means the Krylov space is invariant and the
    // Ritz values are already exact.
    const bool invariant = b <= 1e-12 * applied;
    const bool last = k + 1 == cap || invariant;
    if ((k + 1) % kCheckEvery != 0 && !last) {
      beta.push_back(b);
      v = w / b;
      continue;
    }

    const auto size = static_cast<Eigen::Index>(alpha.size());
    Vec diag = Eigen::Map<const Vec>(alpha.data(), size);
    Vec sub = Eigen::Map<const Vec>(beta.data(), size - 1);
    Eigen::SelfAdjointEigenSolver<Mat> eig;
    eig.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()[0];
    const double hi = eig.eigenvalues()[size - 1];
    const double scale = std::max(std::abs(lo), std::abs(hi));
    // Extreme Ritz values move monotonically outward; stop once both settle.
    const double moved = std::max(std::abs(lo - prev_lo), std::abs(hi - prev_hi));
    res.norm = scale;
    res.last_gap = moved / std::max(scale, std::numeric_limits<double>::min());
    prev_lo = lo;
    prev_hi = hi;
    if (invariant || res.last_gap <= tol || b <= tol * scale * 1e-3 || k + 1 == d) {
      res.converged = true;
      return res;
    }
    beta.push_back(b);
    v = w / b;
  }
  return res;
}

}  // namespace

SymmetricMatrix::SymmetricMatrix(Mat dense) : data_(std::move(dense)) {
  if (data_.rows() != data_.cols()) {
    throw ParameterError("SymmetricMatrix: matrix is not square");
  }
  if (data_.size() > 0) {
    const double asym = (data_ - data_.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= 1e-12)) {
      throw ParameterError("SymmetricMatrix: asymmetry " + std::to_string(asym) +
                           " exceeds 1e-12");
    }
  }
  bandwidth_ = detect_bandwidth(data_);
  store_bands();
}

void SymmetricMatrix::store_bands() {
  bands_.clear();
  if (2 * static_cast<Eigen::Index>(bandwidth_) + 1 >= data_.rows()) return;
  bands_ = diagonals();
}

SymmetricMatrix SymmetricMatrix::identity(std::size_t dim) {
  return SymmetricMatrix(Mat::Identity(dim, dim));
}

SymmetricMatrix SymmetricMatrix::tridiagonal_base(std::size_t dim) {
  Mat m = Mat::Zero(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    m(i, i) = 0.5;
    if (i + 1 < dim) {
      m(i, i + 1) = -0.25;
      m(i + 1, i) = -0.25;
    }
  }
  return SymmetricMatrix(std::move(m));
}

void SymmetricMatrix::apply(const Vec& x, Vec& out) const {
  out.setZero(data_.rows());
  apply_add(x, 1.0, out);
}

void SymmetricMatrix::apply_add(const Vec& x, double alpha, Vec& out) const {
  if (bands_.empty()) {
    out.noalias() += alpha * (data_ * x);
    return;
  }
  const std::size_t d = dim();
  const double* __restrict xv = x.data();
  double* __restrict o = out.data();
  const double* __restrict main = bands_[0].data();
  for (std::size_t r = 0; r < d; ++r) o[r] += alpha * (main[r] * xv[r]);
  for (std::size_t k = 1; k < bands_.size(); ++k) {
    const double* __restrict diag = bands_[k].data();
    const std::size_t len = d - k;
    for (std::size_t r = 0; r < len; ++r) o[r] += alpha * (diag[r] * xv[r + k]);
    for (std::size_t r = 0; r < len; ++r) o[r + k] += alpha * (diag[r] * xv[r]);
  }
}

void SymmetricMatrix::apply_sparse_add(std::span<const std::uint32_t> indices,
                                       std::span<const double> values,
                                       double alpha, Eigen::Ref<Vec> out) const {
  const Eigen::Index d = data_.rows();
  const auto band = static_cast<Eigen::Index>(bandwidth_);
  const double* m = data_.data();
  double* o = out.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(indices[k]);
    const double xj = alpha * values[k];
    const Eigen::Index lo = std::max<Eigen::Index>(0, j - band);
    const Eigen::Index hi = std::min<Eigen::Index>(d - 1, j + band);
    const double* col = m + j * d;
    for (Eigen::Index r = lo; r <= hi; ++r) o[r] += xj * col[r];
  }
}

void SymmetricMatrix::sparse_terms(std::span<const std::uint32_t> indices,
                                   std::span<const double> values, double alpha,
                                   std::vector<SparseTerm>& out) const {
  const Eigen::Index d = data_.rows();
  const auto band = static_cast<Eigen::Index>(bandwidth_);
  const double* m = data_.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(indices[k]);
    const double xj = alpha * values[k];
    const Eigen::Index lo = std::max<Eigen::Index>(0, j - band);
    const Eigen::Index hi = std::min<Eigen::Index>(d - 1, j + band);
    const double* col = m + j * d;
    for (Eigen::Index r = lo; r <= hi; ++r) {
      out.push_back(SparseTerm{static_cast<std::uint32_t>(r), xj * col[r]});
    }
  }
}

std::vector<std::vector<double>> SymmetricMatrix::diagonals() const {
  const Eigen::Index d = data_.rows();
  std::vector<std::vector<double>> out;
  for (Eigen::Index k = 0; k <= static_cast<Eigen::Index>(bandwidth_) && k < d; ++k) {
    std::vector<double> diag(static_cast<std::size_t>(d - k));
    for (Eigen::Index j = 0; j + k < d; ++j) diag[static_cast<std::size_t>(j)] = data_(j + k, j);
    out.push_back(std::move(diag));
  }
  return out;
}

SymmetricMatrix SymmetricMatrix::from_diagonals(const std::vector<std::vector<double>>& diagonals) {
  if (diagonals.empty() || diagonals[0].empty()) throw DimensionError("no diagonals given");
  const auto d = static_cast<Eigen::Index>(diagonals[0].size());
  if (static_cast<Eigen::Index>(diagonals.size()) > d) throw DimensionError("too many diagonals");
  Mat m = Mat::Zero(d, d);
  for (std::size_t k = 0; k < diagonals.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (static_cast<Eigen::Index>(diagonals[k].size()) != d - kk) {
      throw DimensionError("diagonal " + std::to_string(k) + " has the wrong length");
    }
    for (Eigen::Index j = 0; j + kk < d; ++j) {
      m(j + kk, j) = diagonals[k][static_cast<std::size_t>(j)];
      m(j, j + kk) = diagonals[k][static_cast<std::size_t>(j)];
    }
  }
  return SymmetricMatrix(std::move(m));
}

SymmetricMatrix SymmetricMatrix::scaled(double s) const {
  SymmetricMatrix out;
  out.data_ = s * data_;
  out.bandwidth_ = s == 0.0 ? 0 : bandwidth_;
  out.store_bands();
  return out;
}

double spectral_norm(const SymmetricMatrix& m, double tol, int max_iters) {
  const std::size_t d = m.dim();
  if (d == 0) return 0.0;
  if (!m.dense().allFinite()) throw ParameterError("spectral_norm: non-finite entries");
  if (!(tol > 0.0) || max_iters < 1) throw ParameterError("spectral_norm: bad tolerance");
  const KrylovResult res = lanczos_extremes(m, tol, max_iters);
  if (!res.converged) {
    throw ConvergenceError("spectral_norm: no convergence in " + std::to_string(max_iters) +
                               " iterations (relative residual " +
                               std::to_string(res.last_gap) + ")",
                           res.last_gap);
  }
  return res.norm;
}

double spectral_norm(const Mat& m, double tol, int max_iters) {
  return spectral_norm(SymmetricMatrix(m), tol, max_iters);
}

}  // namespace commsim
