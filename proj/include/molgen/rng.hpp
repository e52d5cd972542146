#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace molgen {

namespace detail {

// SplitMix64 finalizer. Full-avalanche mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

/// Counter-based deterministic random generator. The state is a (key,
/// counter) pair; draw i of a stream is a pure function of both, so streams
/// can be checkpointed, restored and split without correlation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : key_(detail::mix64(seed + detail::kGolden)), counter_(0) {}

  static Rng from_state(std::uint64_t key, std::uint64_t counter) {
    Rng r(0);
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

  /// Derives an independent stream. Children of distinct ids never collide
  /// with each other or with the parent sequence.
  Rng split(std::uint64_t stream_id) const {
    return from_state(detail::mix64(key_ ^ detail::mix64(stream_id + 0xD6E8FEB86659FD93ULL)), 0);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    return detail::mix64(key_ + detail::kGolden * ++counter_);
  }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1p-53;
  }

  /// Uniform on (0, 1); both endpoints excluded so logs stay finite.
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  /// Standard normal via Box-Muller. Consumes exactly two draws.
  double normal() noexcept {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Standard Gumbel(0, 1).
  double gumbel() noexcept { return -std::log(-std::log(uniform_open())); }

  /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace molgen
