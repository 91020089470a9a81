#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace commsim {

using Stream = std::mt19937_64;

enum class StreamRole : std::uint64_t {
  Coins = 1,
  Server = 2,
  Worker = 3,
  Problem = 4,
  Estimator = 5,
  Init = 6,
};

/// Independent stream keyed by (seed, role, index).
Stream make_stream(std::uint64_t seed, StreamRole role, std::uint64_t index = 0);

/// The streams one run owns: shared coins, the server's compressor draws and
/// one stream per worker.
struct Streams {
  Stream coins;
  Stream server;
  std::vector<Stream> workers;

  Streams(std::uint64_t seed, std::size_t n);
  /// Derives a full set from draws of an existing stream.
  static Streams split(Stream& parent, std::size_t n);
};

}  // namespace commsim
