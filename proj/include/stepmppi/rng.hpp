#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

#include "stepmppi/numerics.hpp"

namespace stepmppi {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream. Output n of a stream is a pure function of
/// (seed, label path, n), so streams can be derived per sample / time step /
/// batch element and consumed in any order without shared state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::string_view label = "root")
      : seed_(seed), key_(detail::mix64(seed ^ detail::mix64(detail::fnv1a(label)))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  RngStream derive(std::string_view label) const {
    return RngStream(seed_, detail::mix64(key_ ^ detail::fnv1a(label)), Tag{});
  }

  RngStream derive(std::uint64_t index) const {
    return RngStream(seed_, detail::mix64(key_ + detail::mix64(index + detail::kGolden)),
                     Tag{});
  }

  /// Raw 64-bit output at an absolute counter, without advancing.
  std::uint64_t at(std::uint64_t n) const {
    return detail::mix64(key_ + (n + 1) * detail::kGolden);
  }

  std::uint64_t next_u64() { return at(counter_++); }

  /// Uniform in (0, 1].
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  struct Tag {};
  RngStream(std::uint64_t seed, std::uint64_t key, Tag) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace stepmppi
