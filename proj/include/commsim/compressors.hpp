#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "commsim/linalg.hpp"
#include "commsim/parallel.hpp"
#include "commsim/rng.hpp"

namespace commsim {

enum class CompressorKind { Identity, RandK, SameRandK, PermK, TopK, Natural, Compose };

/// How the server builds the n messages of one round.
enum class CollectionMode { Same, Independent, Correlated };

/// Payload encoding, used by the cost model in bits mode.
enum class Encoding : std::uint8_t { Float, Natural };

/// Output of a compressor: sorted unique indices, matching values, and the
/// payload size in coordinates.
struct SparseMessage {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  double cost = 0.0;
  Encoding encoding = Encoding::Float;

  /// Clears the payload but keeps the allocated capacity.
  void reset(std::size_t d);
  std::size_t nnz() const { return indices.size(); }
  /// Checks the sorted/unique/in-range/length invariants.
  bool valid() const;
};

Vec densify(const SparseMessage& msg);
/// target += scale * densify(msg), touching only msg.indices.
void add_to(const SparseMessage& msg, double scale, Eigen::Ref<Vec> target);
/// Uncompressed message carrying every coordinate of x.
SparseMessage full_message(const Vec& x);

class CompressorSpec {
 public:
  static CompressorSpec identity(std::size_t dim);
  static CompressorSpec rand_k(std::size_t dim, std::size_t k);
  static CompressorSpec same_rand_k(std::size_t dim, std::size_t k);
  /// Requires dim >= workers and workers | dim.
  static CompressorSpec perm_k(std::size_t dim, std::size_t workers);
  static CompressorSpec top_k(std::size_t dim, std::size_t k);
  static CompressorSpec natural(std::size_t dim);
  /// Applies `inner` first, then `outer` to the intermediate payload.
  static CompressorSpec compose(const CompressorSpec& outer, const CompressorSpec& inner);

  CompressorKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  /// Surviving coordinates for RandK/SameRandK/TopK, d/n for PermK.
  std::size_t k() const { return k_; }
  /// PermK worker count (0 for other kinds).
  std::size_t workers() const { return workers_; }

  bool biased() const;
  /// Variance parameter of an unbiased kind; nullopt for biased kinds.
  std::optional<double> omega() const;
  /// Contraction parameter of a biased kind (k/d for TopK).
  std::optional<double> alpha() const;
  CollectionMode mode() const;
  /// theta of the collection of n compressors of this kind.
  std::optional<double> theta(std::size_t n) const;
  /// Whether any stage rounds values with the natural compressor.
  bool uses_natural() const;

  const CompressorSpec& outer() const { return *outer_; }
  const CompressorSpec& inner() const { return *inner_; }

  std::string describe() const;

 private:
  CompressorKind kind_ = CompressorKind::Identity;
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
  std::size_t workers_ = 0;
  std::shared_ptr<const CompressorSpec> outer_;
  std::shared_ptr<const CompressorSpec> inner_;
};

inline constexpr double kNaturalOmega = 1.0 / 8.0;

// Elementary operators.

void apply_rand_k(const Vec& x, std::size_t k, Stream& rng, SparseMessage& out);
SparseMessage apply_rand_k(const Vec& x, std::size_t k, Stream& rng);

/// One shared random permutation; worker i gets coordinates
/// pi[q i .. q (i+1)) scaled by n.
void apply_perm_k_collection(const Vec& x, std::size_t n, Stream& rng,
                             std::span<SparseMessage> out);
std::vector<SparseMessage> apply_perm_k_collection(const Vec& x, std::size_t n,
                                                   Stream& rng);
/// Same with a caller-supplied permutation (0-based).
void apply_perm_k_with(const Vec& x, std::span<const std::uint32_t> permutation,
                       std::size_t n, std::span<SparseMessage> out);

/// k largest-magnitude coordinates, unscaled; ties go to the lower index.
void apply_top_k(const Vec& x, std::size_t k, SparseMessage& out);
SparseMessage apply_top_k(const Vec& x, std::size_t k);

/// Unbiased stochastic rounding of t to a neighbouring power of two.
double natural_round(double t, Stream& rng);
SparseMessage apply_natural(const Vec& x, Stream& rng);
/// Rounds the payload values in place; the support (and cost) is kept.
void apply_natural_inplace(SparseMessage& msg, Stream& rng);

// Spec-driven application.

/// Applies one compressor of the given spec. For PermK this is member 0 of a
/// freshly drawn collection.
void compress(const CompressorSpec& spec, const Vec& x, Stream& rng, SparseMessage& out);
SparseMessage compress(const CompressorSpec& spec, const Vec& x, Stream& rng);

/// Builds the n = out.size() messages of one round according to spec.mode():
/// Same draws once from streams.server and copies, Independent uses
/// streams.workers[i] for message i, Correlated draws the permutation from
/// streams.server. Per-worker draws only touch their own stream, so the
/// parallel path produces the same messages as the serial one.
void compress_collection(const CompressorSpec& spec, const Vec& x, Streams& streams,
                         std::span<SparseMessage> out, Exec exec = Exec::Serial);

/// Like compress_collection, but message i compresses inputs.col(i). Same mode
/// replays one server draw for every column; correlated mode hands worker i its
/// block of one shared permutation applied to its own column.
void compress_each(const CompressorSpec& spec, const Mat& inputs, Streams& streams,
                   std::span<SparseMessage> out, Exec exec = Exec::Serial);

// Monte-Carlo estimators.

struct MomentEstimate {
  Vec bias;        // componentwise sample mean of C(x) - x
  Vec std_error;   // componentwise standard error of that mean
  double relative_variance = 0.0;  // mean ||C(x) - x||^2 / ||x||^2
  std::size_t samples = 0;
};

/// Draws `samples` outputs of a single compressor at x.
MomentEstimate estimate_moments(const CompressorSpec& spec, const Vec& x,
                                std::size_t samples, Stream& rng,
                                Exec exec = Exec::Serial);

/// Estimate of E||C(x) - x||^2 / ||x||^2. Requires x != 0 and samples >= 1e4.
double estimate_omega(const CompressorSpec& spec, const Vec& x, std::size_t samples,
                      Stream& rng, Exec exec = Exec::Serial);

/// Estimate of E||(1/n) sum_i C_i(x) - x||^2 / ||x||^2 for a collection of n
/// compressors of this spec. A pure PermK collection returns 0 exactly.
double estimate_theta(const CompressorSpec& spec, std::size_t n, const Vec& x,
                      std::size_t samples, Stream& rng, Exec exec = Exec::Serial);

std::string to_string(CompressorKind kind);
std::string to_string(CollectionMode mode);

}  // namespace commsim
