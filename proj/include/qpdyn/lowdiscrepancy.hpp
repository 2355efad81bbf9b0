#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/torus.hpp"

namespace qpdyn {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Halton points on T^k with a Cranley-Patterson rotation derived from the
/// seed. The rotation is the only use of the seed, so a fixed seed gives a
/// fixed point set. Halton (rather than a Kronecker sequence) avoids
/// aligning the samples with an irrational shift of the model.
class HaltonSampler {
 public:
  HaltonSampler(int k, std::uint64_t seed) : k_(k) {
    static constexpr std::array<int, 12> primes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    if (k < 1 || k > static_cast<int>(primes.size())) throw ConfigError("halton: torus dimension must be in [1,12]");
    std::uint64_t state = seed;
    for (int c = 0; c < k; ++c) {
      bases_.push_back(primes[c]);
      shift_.push_back(Phase(seed == 0 ? 0 : splitmix64(state)));
    }
  }

  int dim() const { return k_; }

  /// The i-th point (i >= 0). Index 0 is the rotation itself.
  TorusPoint point(std::uint64_t i) const {
    TorusPoint p(k_);
    for (int c = 0; c < k_; ++c) p[c] = Phase::from_double(radical_inverse(i, bases_[c])) + shift_[c];
    return p;
  }

  std::vector<TorusPoint> points(std::size_t count) const {
    std::vector<TorusPoint> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(point(i));
    return out;
  }

  static double radical_inverse(std::uint64_t i, int base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (i > 0) {
      r += f * static_cast<double>(i % base);
      i /= base;
      f *= inv;
    }
    return r;
  }

 private:
  int k_;
  std::vector<int> bases_;
  std::vector<Phase> shift_;
};

}  // namespace qpdyn
