#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#include <omp.h>

namespace saqe {

// Serial is the reference path; Parallel distributes indices over OpenMP
// threads. Callers write results into per-index slots, so both paths produce
// identical output.
enum class Execution { serial, parallel };

inline int available_threads() { return omp_get_max_threads(); }

// Runs f(i) for i in [0, n). An exception thrown by f is captured and the one
// with the lowest index is rethrown once the loop has finished.
template <class F>
void for_each_index(std::size_t n, Execution exec, int threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const bool go_parallel = exec == Execution::parallel && threads != 1 && !omp_in_parallel() && n > 1;
  if (go_parallel) {
    const int team = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(team)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      try {
        f(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace saqe
