#pragma once

#include <random>

#include "commsim/linalg.hpp"
#include "commsim/rng.hpp"

namespace testing {

inline commsim::Vec gaussian(std::size_t d, commsim::Stream& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  commsim::Vec x(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
  return x;
}

inline commsim::Stream rng_for(std::uint64_t seed) {
  return commsim::make_stream(seed, commsim::StreamRole::Estimator, 977);
}

}  // namespace testing
