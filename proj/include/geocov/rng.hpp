#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace geocov {

// Deterministic random source: mt19937_64 engine with an explicit Box-Muller
// transform, so Gaussian sequences are bit-identical across platforms and
// standard-library versions (std::normal_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1) with 53 significant bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal. Box-Muller produces pairs; both members are consumed in
  // order, so draw counts stay reproducible.
  double gauss() {
    if (hasSpare_) {
      hasSpare_ = false;
      return spare_;
    }
    // 1 - uniform() lies in (0, 1], keeping the log argument positive.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    hasSpare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t raw() { return eng_(); }

  // SplitMix64-style mix of (master seed, stream id) giving decorrelated
  // per-trial seeds. Every parallel trial derives its own Rng this way, so
  // results do not depend on thread scheduling.
  static std::uint64_t derive_stream(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  bool hasSpare_ = false;
  double spare_ = 0.0;
};

}  // namespace geocov
