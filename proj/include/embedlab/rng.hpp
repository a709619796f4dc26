#pragma once

// Counter-based pseudorandom numbers.
//
// Every draw is a pure function of (key, counter): the generator holds no
// hidden state beyond the counter, so a stream can be reproduced from its
// seed alone and independent streams are derived by hashing a stream id
// into the key.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace embedlab {

namespace detail {

// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(detail::mix64(seed ^ detail::mix64(stream + detail::kGoldenGamma))) {}

  // Independent child stream; does not advance this generator.
  CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(key_, stream + 1); }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGoldenGamma);
  }

  // Uniform in (0, 1]; never returns 0 so log() in Box-Muller is safe.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n == 0) return 0;
    // Lemire's multiply-shift; bias is < 2^-64 * n and irrelevant here.
    __extension__ using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller. Draws come in pairs; the second is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace embedlab
