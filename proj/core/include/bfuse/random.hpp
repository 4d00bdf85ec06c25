#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace bfuse {

/// xoshiro256** (Blackman & Vigna) seeded through splitmix64.
///
/// Every stochastic component in the library draws from this generator so
/// that streams are reproducible bit-for-bit on any platform and can be
/// re-implemented in other languages:
///   - state[k] = splitmix64 applied four times to the 64-bit seed
///   - uniform() = (next() >> 11) * 2^-53, in [0, 1)
///   - normal()  = Box-Muller cosine branch on two uniforms,
///                 sqrt(-2 ln(1 - u1)) * cos(2 pi u2); one normal per pair
///   - below(n)  = Lemire's multiply-shift with rejection, in [0, n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next() noexcept;
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  double normal() noexcept;
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Fisher-Yates, swapping i with below(i + 1) for i from the back.
  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace bfuse
