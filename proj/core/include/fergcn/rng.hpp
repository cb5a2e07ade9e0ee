#pragma once

#include <cstdint>

namespace fergcn {

/// Counter-based generator: the n-th draw of stream `s` under key `k` is a
/// pure function of (k, s, n), so substreams can be consumed in any order
/// without changing each other's output.
///
/// Uniform and normal variates are derived here rather than through
/// <random> distributions, whose output is implementation-defined.
class CounterRng {
 public:
  CounterRng(std::uint64_t key, std::uint64_t stream) : key_(key), stream_(stream) {}

  /// Derives an independent substream, e.g. one per sample.
  CounterRng substream(std::uint64_t id) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second variate).
  double normal();

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace fergcn
