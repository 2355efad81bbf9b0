#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace qpdyn {

/// A point of the circle R/Z stored in 64-bit fixed point (value = raw / 2^64).
///
/// Addition and integer multiples wrap modulo 2^64, which is exactly reduction
/// modulo 1. Orbit points T^w(theta) therefore carry no accumulated rounding,
/// and group identities such as T^{w+w'} = T^w T^{w'} hold bit for bit.
class Phase {
 public:
  constexpr Phase() = default;
  constexpr explicit Phase(std::uint64_t raw) : raw_(raw) {}

  static Phase from_double(double x) {
    double frac = x - std::floor(x);
    if (!(frac < 1.0) || frac < 0.0) frac = 0.0;
    return Phase(static_cast<std::uint64_t>(std::ldexp(frac, 64)));
  }

  /// Value in [0, 1).
  double to_double() const {
    double x = std::ldexp(static_cast<double>(raw_), -64);
    return x < 1.0 ? x : std::nextafter(1.0, 0.0);
  }

  constexpr std::uint64_t raw() const { return raw_; }

  friend constexpr Phase operator+(Phase a, Phase b) { return Phase(a.raw_ + b.raw_); }
  friend constexpr Phase operator-(Phase a, Phase b) { return Phase(a.raw_ - b.raw_); }
  friend constexpr Phase operator*(std::int64_t n, Phase a) {
    return Phase(static_cast<std::uint64_t>(n) * a.raw_);
  }
  friend constexpr bool operator==(Phase a, Phase b) = default;

  /// Distance to the nearest integer, in [0, 1/2].
  double norm() const {
    std::uint64_t d = raw_ <= (~raw_ + 1) ? raw_ : (~raw_ + 1);
    return std::ldexp(static_cast<double>(d), -64);
  }

 private:
  std::uint64_t raw_ = 0;
};

using TorusPoint = std::vector<Phase>;

inline TorusPoint torus_point(std::span<const double> coords) {
  TorusPoint p;
  p.reserve(coords.size());
  for (double c : coords) p.push_back(Phase::from_double(c));
  return p;
}

inline TorusPoint torus_point(std::initializer_list<double> coords) {
  return torus_point(std::span<const double>(coords.begin(), coords.size()));
}

inline std::vector<double> to_doubles(const TorusPoint& p) {
  std::vector<double> out;
  out.reserve(p.size());
  for (Phase c : p) out.push_back(c.to_double());
  return out;
}

/// Max-norm distance on T^k.
inline double torus_distance(const TorusPoint& a, const TorusPoint& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    d = std::max(d, (a[i] - b[i]).norm());
  return d;
}

}  // namespace qpdyn
