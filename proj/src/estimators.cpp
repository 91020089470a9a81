#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "commsim/compressors.hpp"
#include "commsim/error.hpp"

namespace commsim {

namespace {

constexpr std::size_t kChunks = 64;

void require_probe(const Vec& x, std::size_t samples, std::size_t min_samples) {
  if (!x.allFinite()) throw ParameterError("estimator: probe vector is not finite");
  if (x.squaredNorm() == 0.0) throw ParameterError("estimator: probe vector is zero");
  if (samples < min_samples) {
    throw ParameterError("estimator: need at least " + std::to_string(min_samples) +
                         " samples, got " + std::to_string(samples));
  }
}

// Sample counts per chunk; the split depends only on `samples`.
std::vector<std::size_t> chunk_sizes(std::size_t samples) {
  const std::size_t chunks = std::min(kChunks, samples);
  std::vector<std::size_t> sizes(chunks, samples / chunks);
  for (std::size_t c = 0; c < samples % chunks; ++c) ++sizes[c];
  return sizes;
}

std::vector<std::uint64_t> chunk_seeds(Stream& rng, std::size_t chunks) {
  std::vector<std::uint64_t> seeds(chunks);
  for (auto& s : seeds) s = rng();
  return seeds;
}

struct ChunkMoments {
  Vec sum;
  Vec sum_sq;
  double sq_error = 0.0;
};

}  // namespace

MomentEstimate estimate_moments(const CompressorSpec& spec, const Vec& x,
                                std::size_t samples, Stream& rng, Exec exec) {
  require_probe(x, samples, 2);
  if (static_cast<std::size_t>(x.size()) != spec.dim()) {
    throw DimensionError("estimate_moments: probe dimension mismatch");
  }
  const auto sizes = chunk_sizes(samples);
  const auto seeds = chunk_seeds(rng, sizes.size());
  std::vector<ChunkMoments> parts(sizes.size());

  for_each_index(sizes.size(), exec, [&](std::size_t c) {
    Stream local(seeds[c]);
    ChunkMoments& m = parts[c];
    m.sum = Vec::Zero(x.size());
    m.sum_sq = Vec::Zero(x.size());
    SparseMessage msg;
    Vec err(x.size());
    for (std::size_t s = 0; s < sizes[c]; ++s) {
      compress(spec, x, local, msg);
      err = -x;
      add_to(msg, 1.0, err);
      m.sum += err;
      m.sum_sq += err.cwiseAbs2();
      m.sq_error += err.squaredNorm();
    }
  });

  Vec sum = Vec::Zero(x.size());
  Vec sum_sq = Vec::Zero(x.size());
  double sq_error = 0.0;
  for (const auto& m : parts) {
    sum += m.sum;
    sum_sq += m.sum_sq;
    sq_error += m.sq_error;
  }
  const double n = static_cast<double>(samples);
  MomentEstimate est;
  est.samples = samples;
  est.bias = sum / n;
  est.std_error.resize(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double var = std::max(0.0, (sum_sq[j] - sum[j] * sum[j] / n) / (n - 1.0));
    est.std_error[j] = std::sqrt(var / n);
  }
  est.relative_variance = sq_error / (n * x.squaredNorm());
  return est;
}

double estimate_omega(const CompressorSpec& spec, const Vec& x, std::size_t samples,
                      Stream& rng, Exec exec) {
  require_probe(x, samples, 10000);
  return estimate_moments(spec, x, samples, rng, exec).relative_variance;
}

double estimate_theta(const CompressorSpec& spec, std::size_t n, const Vec& x,
                      std::size_t samples, Stream& rng, Exec exec) {
  require_probe(x, samples, 10000);
  if (static_cast<std::size_t>(x.size()) != spec.dim()) {
    throw DimensionError("estimate_theta: probe dimension mismatch");
  }
  if (n == 0) throw ParameterError("estimate_theta: empty collection");
  // (1/n) sum_i C_i(x) = x holds deterministically for PermK.
  if (spec.kind() == CompressorKind::PermK) return 0.0;

  const auto sizes = chunk_sizes(samples);
  const auto seeds = chunk_seeds(rng, sizes.size());
  std::vector<double> parts(sizes.size(), 0.0);
  for_each_index(sizes.size(), exec, [&](std::size_t c) {
    Streams streams(seeds[c], n);
    std::vector<SparseMessage> msgs(n);
    Vec avg(x.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t s = 0; s < sizes[c]; ++s) {
      compress_collection(spec, x, streams, msgs);
      avg = -x;
      for (const auto& m : msgs) add_to(m, inv_n, avg);
      parts[c] += avg.squaredNorm();
    }
  });
  double total = 0.0;
  for (double p : parts) total += p;
  return total / (static_cast<double>(samples) * x.squaredNorm());
}

}  // namespace commsim
