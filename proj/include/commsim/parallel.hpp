#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

namespace commsim {

/// Serial is the reference path; Parallel must give bit-identical results.
enum class Exec { Serial, Parallel };

/// Calls fn(i) for i in [0, n). Each index must only touch state it owns.
template <typename Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::Serial || n < 2 || omp_in_parallel()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Same as for_each_index but schedules dynamically; for uneven work such as
/// sweep points of different length.
template <typename Fn>
void for_each_task(std::size_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::Serial || n < 2 || omp_in_parallel()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Applies COMMSIM_THREADS (if set) to the OpenMP runtime. Returns the thread
/// count in effect.
int configure_threads_from_env();

}  // namespace commsim
