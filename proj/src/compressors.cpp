#include "commsim/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "commsim/error.hpp"

namespace commsim {

void SparseMessage::reset(std::size_t d) {
  dim = d;
  indices.clear();
  values.clear();
  cost = 0.0;
  encoding = Encoding::Float;
}

bool SparseMessage::valid() const {
  if (indices.size() != values.size()) return false;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= dim) return false;
    if (j > 0 && indices[j] <= indices[j - 1]) return false;
  }
  return cost >= 0.0;
}

Vec densify(const SparseMessage& msg) {
  Vec out = Vec::Zero(static_cast<Eigen::Index>(msg.dim));
  for (std::size_t j = 0; j < msg.indices.size(); ++j) out[msg.indices[j]] = msg.values[j];
  return out;
}

void add_to(const SparseMessage& msg, double scale, Eigen::Ref<Vec> target) {
  for (std::size_t j = 0; j < msg.indices.size(); ++j) {
    target[msg.indices[j]] += scale * msg.values[j];
  }
}

SparseMessage full_message(const Vec& x) {
  SparseMessage msg;
  msg.reset(static_cast<std::size_t>(x.size()));
  msg.indices.resize(msg.dim);
  std::iota(msg.indices.begin(), msg.indices.end(), 0u);
  msg.values.assign(x.data(), x.data() + x.size());
  msg.cost = static_cast<double>(msg.dim);
  return msg;
}

// ---------------------------------------------------------------------------
// CompressorSpec

namespace {

void require_dim(std::size_t dim) {
  if (dim == 0) throw ParameterError("compressor dimension must be positive");
}

void require_k(std::size_t dim, std::size_t k, const char* who) {
  if (k < 1 || k > dim) {
    throw ParameterError(std::string(who) + ": k = " + std::to_string(k) +
                         " outside [1, " + std::to_string(dim) + "]");
  }
}

}  // namespace

CompressorSpec CompressorSpec::identity(std::size_t dim) {
  require_dim(dim);
  CompressorSpec s;
  s.kind_ = CompressorKind::Identity;
  s.dim_ = dim;
  s.k_ = dim;
  return s;
}

CompressorSpec CompressorSpec::rand_k(std::size_t dim, std::size_t k) {
  require_dim(dim);
  require_k(dim, k, "RandK");
  CompressorSpec s;
  s.kind_ = CompressorKind::RandK;
  s.dim_ = dim;
  s.k_ = k;
  return s;
}

CompressorSpec CompressorSpec::same_rand_k(std::size_t dim, std::size_t k) {
  CompressorSpec s = rand_k(dim, k);
  s.kind_ = CompressorKind::SameRandK;
  return s;
}

CompressorSpec CompressorSpec::perm_k(std::size_t dim, std::size_t workers) {
  require_dim(dim);
  if (workers == 0) throw ParameterError("PermK: worker count must be positive");
  if (dim < workers || dim % workers != 0) {
    throw UnsupportedShapeError("PermK requires d >= n and n | d (got d = " +
                                std::to_string(dim) + ", n = " + std::to_string(workers) +
                                ")");
  }
  CompressorSpec s;
  s.kind_ = CompressorKind::PermK;
  s.dim_ = dim;
  s.workers_ = workers;
  s.k_ = dim / workers;
  return s;
}

CompressorSpec CompressorSpec::top_k(std::size_t dim, std::size_t k) {
  require_dim(dim);
  require_k(dim, k, "TopK");
  CompressorSpec s;
  s.kind_ = CompressorKind::TopK;
  s.dim_ = dim;
  s.k_ = k;
  return s;
}

CompressorSpec CompressorSpec::natural(std::size_t dim) {
  require_dim(dim);
  CompressorSpec s;
  s.kind_ = CompressorKind::Natural;
  s.dim_ = dim;
  s.k_ = dim;
  return s;
}

CompressorSpec CompressorSpec::compose(const CompressorSpec& outer,
                                       const CompressorSpec& inner) {
  if (outer.dim() != inner.dim()) {
    throw DimensionError("compose: outer dimension " + std::to_string(outer.dim()) +
                         " != inner dimension " + std::to_string(inner.dim()));
  }
  if (outer.biased() || inner.biased()) {
    throw ParameterError("compose: only unbiased stages can be composed");
  }
  if (outer.kind() == CompressorKind::PermK || outer.kind() == CompressorKind::SameRandK) {
    throw ParameterError("compose: collection-level kinds can only be the inner stage");
  }
  CompressorSpec s;
  s.kind_ = CompressorKind::Compose;
  s.dim_ = inner.dim();
  s.k_ = std::min(outer.k(), inner.k());
  s.workers_ = inner.workers();
  s.outer_ = std::make_shared<const CompressorSpec>(outer);
  s.inner_ = std::make_shared<const CompressorSpec>(inner);
  return s;
}

bool CompressorSpec::biased() const {
  if (kind_ == CompressorKind::TopK) return true;
  if (kind_ == CompressorKind::Compose) return outer_->biased() || inner_->biased();
  return false;
}

std::optional<double> CompressorSpec::omega() const {
  switch (kind_) {
    case CompressorKind::Identity:
      return 0.0;
    case CompressorKind::RandK:
    case CompressorKind::SameRandK:
      return static_cast<double>(dim_) / static_cast<double>(k_) - 1.0;
    case CompressorKind::PermK:
      return static_cast<double>(workers_) - 1.0;
    case CompressorKind::Natural:
      return kNaturalOmega;
    case CompressorKind::TopK:
      return std::nullopt;
    case CompressorKind::Compose: {
      const auto a = outer_->omega();
      const auto b = inner_->omega();
      if (!a || !b) return std::nullopt;
      return (*a + 1.0) * (*b + 1.0) - 1.0;
    }
  }
  return std::nullopt;
}

std::optional<double> CompressorSpec::alpha() const {
  if (kind_ == CompressorKind::TopK) {
    return static_cast<double>(k_) / static_cast<double>(dim_);
  }
  return std::nullopt;
}

CollectionMode CompressorSpec::mode() const {
  switch (kind_) {
    case CompressorKind::SameRandK:
      return CollectionMode::Same;
    case CompressorKind::PermK:
      return CollectionMode::Correlated;
    case CompressorKind::Compose:
      return inner_->mode();
    default:
      return CollectionMode::Independent;
  }
}

std::optional<double> CompressorSpec::theta(std::size_t n) const {
  const auto w = omega();
  if (!w || n == 0) return std::nullopt;
  if (kind_ == CompressorKind::PermK) return 0.0;
  if (kind_ == CompressorKind::Compose && inner_->kind() == CompressorKind::PermK) {
    // Outer noise is independent per worker on disjoint supports.
    return outer_->omega();
  }
  switch (mode()) {
    case CollectionMode::Same:
      return *w;
    case CollectionMode::Independent:
      return *w / static_cast<double>(n);
    case CollectionMode::Correlated:
      return 0.0;
  }
  return std::nullopt;
}

bool CompressorSpec::uses_natural() const {
  if (kind_ == CompressorKind::Natural) return true;
  if (kind_ == CompressorKind::Compose) return outer_->uses_natural() || inner_->uses_natural();
  return false;
}

std::string CompressorSpec::describe() const {
  switch (kind_) {
    case CompressorKind::Identity:
      return "Identity";
    case CompressorKind::RandK:
      return "RandK(k=" + std::to_string(k_) + ")";
    case CompressorKind::SameRandK:
      return "SameRandK(k=" + std::to_string(k_) + ")";
    case CompressorKind::PermK:
      return "PermK(n=" + std::to_string(workers_) + ")";
    case CompressorKind::TopK:
      return "TopK(k=" + std::to_string(k_) + ")";
    case CompressorKind::Natural:
      return "Natural";
    case CompressorKind::Compose:
      return outer_->describe() + " o " + inner_->describe();
  }
  return "?";
}

std::string to_string(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::Identity: return "identity";
    case CompressorKind::RandK: return "rand_k";
    case CompressorKind::SameRandK: return "same_rand_k";
    case CompressorKind::PermK: return "perm_k";
    case CompressorKind::TopK: return "top_k";
    case CompressorKind::Natural: return "natural";
    case CompressorKind::Compose: return "compose";
  }
  return "?";
}

std::string to_string(CollectionMode mode) {
  switch (mode) {
    case CollectionMode::Same: return "same";
    case CollectionMode::Independent: return "independent";
    case CollectionMode::Correlated: return "correlated";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Elementary operators

void apply_rand_k(const Vec& x, std::size_t k, Stream& rng, SparseMessage& out) {
  const auto d = static_cast<std::size_t>(x.size());
  require_k(d, k, "RandK");
  out.reset(d);
  auto& idx = out.indices;
  idx.reserve(k);
  // Floyd's sampling; idx stays sorted so membership is a binary search.
  for (std::size_t j = d - k; j < d; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const auto t = static_cast<std::uint32_t>(pick(rng));
    auto pos = std::lower_bound(idx.begin(), idx.end(), t);
    if (pos != idx.end() && *pos == t) {
      const auto jj = static_cast<std::uint32_t>(j);
      idx.insert(std::lower_bound(idx.begin(), idx.end(), jj), jj);
    } else {
      idx.insert(pos, t);
    }
  }
  const double scale = static_cast<double>(d) / static_cast<double>(k);
  out.values.resize(k);
  for (std::size_t j = 0; j < k; ++j) out.values[j] = scale * x[idx[j]];
  out.cost = static_cast<double>(k);
}

SparseMessage apply_rand_k(const Vec& x, std::size_t k, Stream& rng) {
  SparseMessage out;
  apply_rand_k(x, k, rng, out);
  return out;
}

namespace {

void require_perm_shape(std::size_t d, std::size_t n) {
  if (n == 0 || d < n || d % n != 0) {
    throw UnsupportedShapeError("PermK requires d >= n and n | d (got d = " +
                                std::to_string(d) + ", n = " + std::to_string(n) + ")");
  }
}

// Worker i's share of the permutation, scaled by n.
void perm_block(const Eigen::Ref<const Vec>& x, std::span<const std::uint32_t> permutation,
                std::size_t n, std::size_t i, SparseMessage& msg) {
  const auto d = static_cast<std::size_t>(x.size());
  const std::size_t q = d / n;
  const double scale = static_cast<double>(n);
  msg.reset(d);
  msg.indices.assign(permutation.begin() + static_cast<std::ptrdiff_t>(q * i),
                     permutation.begin() + static_cast<std::ptrdiff_t>(q * (i + 1)));
  std::sort(msg.indices.begin(), msg.indices.end());
  msg.values.resize(q);
  for (std::size_t j = 0; j < q; ++j) msg.values[j] = scale * x[msg.indices[j]];
  msg.cost = static_cast<double>(q);
}

std::vector<std::uint32_t> draw_permutation(std::size_t d, Stream& rng) {
  std::vector<std::uint32_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace

void apply_perm_k_with(const Vec& x, std::span<const std::uint32_t> permutation,
                       std::size_t n, std::span<SparseMessage> out) {
  const auto d = static_cast<std::size_t>(x.size());
  require_perm_shape(d, n);
  if (permutation.size() != d) throw DimensionError("PermK: permutation length != d");
  if (out.size() != n) throw DimensionError("PermK: need one output message per worker");
  for (std::size_t i = 0; i < n; ++i) perm_block(x, permutation, n, i, out[i]);
}

void apply_perm_k_collection(const Vec& x, std::size_t n, Stream& rng,
                             std::span<SparseMessage> out) {
  const auto d = static_cast<std::size_t>(x.size());
  require_perm_shape(d, n);
  apply_perm_k_with(x, draw_permutation(d, rng), n, out);
}

std::vector<SparseMessage> apply_perm_k_collection(const Vec& x, std::size_t n,
                                                   Stream& rng) {
  std::vector<SparseMessage> out(n);
  apply_perm_k_collection(x, n, rng, out);
  return out;
}

void apply_top_k(const Vec& x, std::size_t k, SparseMessage& out) {
  const auto d = static_cast<std::size_t>(x.size());
  require_k(d, k, "TopK");
  std::vector<std::uint32_t> order(d);
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&x](std::uint32_t a, std::uint32_t b) {
    const double fa = std::abs(x[a]);
    const double fb = std::abs(x[b]);
    return fa > fb || (fa == fb && a < b);
  };
  if (k < d) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     order.end(), before);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  out.reset(d);
  out.indices = std::move(order);
  out.values.resize(k);
  for (std::size_t j = 0; j < k; ++j) out.values[j] = x[out.indices[j]];
  out.cost = static_cast<double>(k);
}

SparseMessage apply_top_k(const Vec& x, std::size_t k) {
  SparseMessage out;
  apply_top_k(x, k, out);
  return out;
}

double natural_round(double t, Stream& rng) {
  if (!std::isfinite(t)) throw ParameterError("natural compressor: non-finite input");
  if (t == 0.0) return 0.0;
  int exp = 0;
  const double mant = std::frexp(std::abs(t), &exp);  // |t| = mant * 2^exp, mant in [0.5, 1)
  if (mant == 0.5) return t;
  const double lower = std::ldexp(1.0, exp - 1);
  const double upper = std::ldexp(1.0, exp);
  const double p_down = (upper - std::abs(t)) / (upper - lower);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double mag = unif(rng) < p_down ? lower : upper;
  return std::copysign(mag, t);
}

void apply_natural_inplace(SparseMessage& msg, Stream& rng) {
  for (double& v : msg.values) v = natural_round(v, rng);
  msg.encoding = Encoding::Natural;
}

SparseMessage apply_natural(const Vec& x, Stream& rng) {
  SparseMessage msg = full_message(x);
  apply_natural_inplace(msg, rng);
  return msg;
}

// ---------------------------------------------------------------------------
// Spec-driven application

namespace {

void require_input(const CompressorSpec& spec, const Vec& x) {
  if (static_cast<std::size_t>(x.size()) != spec.dim()) {
    throw DimensionError("compressor " + spec.describe() + " expects dimension " +
                         std::to_string(spec.dim()) + ", got " + std::to_string(x.size()));
  }
}

// Applies `outer` to an already-compressed payload.
void apply_outer(const CompressorSpec& outer, SparseMessage& msg, Stream& rng) {
  switch (outer.kind()) {
    case CompressorKind::Identity:
      return;
    case CompressorKind::Natural:
      apply_natural_inplace(msg, rng);
      return;
    default: {
      const Vec intermediate = densify(msg);
      compress(outer, intermediate, rng, msg);
      return;
    }
  }
}

}  // namespace

void compress(const CompressorSpec& spec, const Vec& x, Stream& rng, SparseMessage& out) {
  require_input(spec, x);
  switch (spec.kind()) {
    case CompressorKind::Identity:
      out = full_message(x);
      return;
    case CompressorKind::RandK:
    case CompressorKind::SameRandK:
      apply_rand_k(x, spec.k(), rng, out);
      return;
    case CompressorKind::PermK: {
      std::vector<SparseMessage> all(spec.workers());
      apply_perm_k_collection(x, spec.workers(), rng, all);
      out = std::move(all.front());
      return;
    }
    case CompressorKind::TopK:
      apply_top_k(x, spec.k(), out);
      return;
    case CompressorKind::Natural:
      out = full_message(x);
      apply_natural_inplace(out, rng);
      return;
    case CompressorKind::Compose:
      compress(spec.inner(), x, rng, out);
      apply_outer(spec.outer(), out, rng);
      return;
  }
}

SparseMessage compress(const CompressorSpec& spec, const Vec& x, Stream& rng) {
  SparseMessage out;
  compress(spec, x, rng, out);
  return out;
}

void compress_collection(const CompressorSpec& spec, const Vec& x, Streams& streams,
                         std::span<SparseMessage> out, Exec exec) {
  require_input(spec, x);
  const std::size_t n = out.size();
  if (n == 0) return;
  switch (spec.mode()) {
    case CollectionMode::Same:
      compress(spec, x, streams.server, out[0]);
      for (std::size_t i = 1; i < n; ++i) out[i] = out[0];
      return;
    case CollectionMode::Independent:
      if (streams.workers.size() < n) throw DimensionError("compress_collection: too few worker streams");
      for_each_index(n, exec,
                     [&](std::size_t i) { compress(spec, x, streams.workers[i], out[i]); });
      return;
    case CollectionMode::Correlated: {
      const CompressorSpec* base = &spec;
      if (spec.kind() == CompressorKind::Compose) base = &spec.inner();
      if (base->kind() != CompressorKind::PermK) {
        throw ParameterError("compress_collection: correlated mode needs a PermK stage");
      }
      if (base->workers() != n) {
        throw DimensionError("PermK built for " + std::to_string(base->workers()) +
                             " workers, collection has " + std::to_string(n));
      }
      apply_perm_k_collection(x, n, streams.server, out);
      if (spec.kind() == CompressorKind::Compose) {
        if (streams.workers.size() < n) throw DimensionError("compress_collection: too few worker streams");
        for_each_index(n, exec, [&](std::size_t i) {
          apply_outer(spec.outer(), out[i], streams.workers[i]);
        });
      }
      return;
    }
  }
}


void compress_each(const CompressorSpec& spec, const Mat& inputs, Streams& streams,
                   std::span<SparseMessage> out, Exec exec) {
  const std::size_t n = out.size();
  if (static_cast<std::size_t>(inputs.rows()) != spec.dim() ||
      static_cast<std::size_t>(inputs.cols()) != n) {
    throw DimensionError("compress_each: inputs must be dim x n");
  }
  if (n == 0) return;
  auto column = [&](std::size_t i) -> Vec { return inputs.col(static_cast<Eigen::Index>(i)); };
  switch (spec.mode()) {
    case CollectionMode::Same: {
      // Every worker replays the server stream from the same state.
      const Stream start = streams.server;
      std::vector<Stream> ends(n, start);
      for_each_index(n, exec, [&](std::size_t i) { compress(spec, column(i), ends[i], out[i]); });
      streams.server = ends.back();
      return;
    }
    case CollectionMode::Independent:
      if (streams.workers.size() < n) throw DimensionError("compress_each: too few worker streams");
      for_each_index(n, exec, [&](std::size_t i) {
        compress(spec, column(i), streams.workers[i], out[i]);
      });
      return;
    case CollectionMode::Correlated: {
      const CompressorSpec* base = &spec;
      if (spec.kind() == CompressorKind::Compose) base = &spec.inner();
      if (base->kind() != CompressorKind::PermK || base->workers() != n) {
        throw DimensionError("compress_each: PermK stage must be built for " +
                             std::to_string(n) + " workers");
      }
      if (streams.workers.size() < n) throw DimensionError("compress_each: too few worker streams");
      const auto perm = draw_permutation(spec.dim(), streams.server);
      for_each_index(n, exec, [&](std::size_t i) {
        perm_block(inputs.col(static_cast<Eigen::Index>(i)), perm, n, i, out[i]);
        if (spec.kind() == CompressorKind::Compose) {
          apply_outer(spec.outer(), out[i], streams.workers[i]);
        }
      });
      return;
    }
  }
}

}  // namespace commsim
