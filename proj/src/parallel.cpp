#include "commsim/parallel.hpp"

#include <cstdlib>
#include <string>

#include "commsim/error.hpp"

namespace commsim {

int configure_threads_from_env() {
  const char* raw = std::getenv("COMMSIM_THREADS");
  if (raw != nullptr && *raw != '\0') {
    int threads = 0;
    try {
      std::size_t used = 0;
      threads = std::stoi(raw, &used);
      if (used != std::string(raw).size()) threads = 0;
    } catch (const std::exception&) {
      threads = 0;
    }
    if (threads < 1) {
      throw ParameterError(std::string("COMMSIM_THREADS must be a positive integer, got '") +
                           raw + "'");
    }
    omp_set_num_threads(threads);
  }
  return omp_get_max_threads();
}

}  // namespace commsim
