#include "fergcn/rng.hpp"

#include <cmath>
#include <numbers>

namespace fergcn {

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CounterRng CounterRng::substream(std::uint64_t id) const {
  return CounterRng(key_, mix64(stream_ ^ mix64(id + 0x632be59bd9b4e019ULL)));
}

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t base = mix64(key_ ^ mix64(stream_));
  return mix64(base + 0xd1b54a32d192ed03ULL * ++counter_);
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::below(std::uint64_t n) {
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double CounterRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace fergcn
