#pragma once

// Data-parallel kernels. Every kernel has a serial reference path; the
// OpenMP path must produce bit-identical results (work items are keyed by
// index and reduced in index order).

#include <cstddef>
#include <span>

#include "cobra/cbi.hpp"

namespace cobra {

enum class Execution { Serial, Parallel };

/// Worker threads the parallel path will use (1 without OpenMP).
int max_threads();

/// out[i] = weighted_score(in[i]).
void weighted_scores(std::span<const OptionDistribution> in, std::span<double> out, Execution exec);

/// Runs body(i) for i in [0, n). Exceptions are captured per item and the
/// one with the lowest index is rethrown after the loop. `max_workers` <= 0
/// means no cap.
template <typename Body>
void for_each_index(std::size_t n, Execution exec, int max_workers, Body&& body);

}  // namespace cobra

#include "cobra/detail/execution_impl.hpp"
