#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace cobra {

using Seed = std::uint64_t;

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a, used to turn labels (paradigm ids, agent ids) into seed streams.
std::uint64_t hash_label(std::string_view label);

/// Counter-based seed splitting: every (master, stream, index) triple maps to an
/// independent seed, so per-variant and per-trial seeds do not depend on the
/// order in which work items are executed.
Seed derive_seed(Seed master, std::uint64_t stream, std::uint64_t index = 0);
Seed derive_seed(Seed master, std::string_view stream, std::uint64_t index = 0);

/// mt19937_64 with portable bounded/real draws. The standard distributions are
/// implementation-defined, so they are not used anywhere results must be
/// reproducible across toolchains.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::size_t below(std::size_t n);

  /// Index drawn from a discrete distribution given by non-negative weights.
  template <typename Weights>
  std::size_t categorical(const Weights& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    std::size_t last_positive = 0;
    std::size_t i = 0;
    for (double w : weights) {
      if (w > 0.0) {
        last_positive = i;
        if (u < w) return i;
        u -= w;
      }
      ++i;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace cobra
