#pragma once

#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cobra {

template <typename Body>
void for_each_index(std::size_t n, Execution exec, int max_workers, Body&& body) {
  if (n == 0) return;
  if (exec == Execution::Serial || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
#ifdef _OPENMP
  int threads = omp_get_max_threads();
  if (max_workers > 0 && max_workers < threads) threads = max_workers;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
#else
  (void)max_workers;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
#endif
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace cobra
