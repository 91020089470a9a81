#include "commsim/rng.hpp"

namespace commsim {

Stream make_stream(std::uint64_t seed, StreamRole role, std::uint64_t index) {
  const auto r = static_cast<std::uint64_t>(role);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Stream(seq);
}

Streams::Streams(std::uint64_t seed, std::size_t n)
    : coins(make_stream(seed, StreamRole::Coins)),
      server(make_stream(seed, StreamRole::Server)) {
  workers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    workers.push_back(make_stream(seed, StreamRole::Worker, i));
  }
}

Streams Streams::split(Stream& parent, std::size_t n) { return Streams(parent(), n); }

}  // namespace commsim
