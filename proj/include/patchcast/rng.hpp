#pragma once

#include <cmath>
#include <cstdint>

namespace patchcast {

/// SplitMix64 generator. Counter-based: each draw advances the state by a
/// fixed increment and hashes it, so streams are cheap to fork by seed
/// arithmetic and identical seeds give identical sequences on every
/// platform. All stochastic operations in this library take one of these
/// explicitly; there is no hidden global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (second deviate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform index in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates shuffle driven by an explicit generator.
template <typename Container>
void shuffle(Container& c, Rng& rng) {
  if (c.size() < 2) return;
  for (std::size_t i = c.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.index(i + 1));
    std::swap(c[i], c[j]);
  }
}

}  // namespace patchcast
