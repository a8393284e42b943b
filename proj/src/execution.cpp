#include "cobra/execution.hpp"

#include "cobra/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cobra {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void weighted_scores(std::span<const OptionDistribution> in, std::span<double> out, Execution exec) {
  if (in.size() != out.size()) throw ValidationError("weighted_scores: size mismatch");
  const auto n = static_cast<long long>(in.size());
  if (exec == Execution::Serial) {
    for (long long i = 0; i < n; ++i) out[i] = weighted_score(in[i]);
    return;
  }
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) out[i] = weighted_score(in[i]);
}

}  // namespace cobra
