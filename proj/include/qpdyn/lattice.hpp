#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpdyn/error.hpp"

namespace qpdyn {

using Site = std::vector<int>;

/// Max-norm of a lattice vector.
inline int max_norm(std::span<const int> w) {
  int n = 0;
  for (int c : w) n = std::max(n, std::abs(c));
  return n;
}

inline Site operator-(const Site& a, const Site& b) {
  Site d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

inline Site operator+(const Site& a, const Site& b) {
  Site d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] + b[i];
  return d;
}

inline std::string to_string(const Site& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Finite box prod_i [lo_i, hi_i] in Z^nu containing the origin.
/// Sites are indexed lexicographically, first coordinate most significant.
class Volume {
 public:
  Volume() = default;

  Volume(Site lo, Site hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.empty() || lo_.size() != hi_.size())
      throw ConfigError("volume: lo/hi must be non-empty and of equal dimension");
    for (std::size_t i = 0; i < lo_.size(); ++i) {
      if (lo_[i] > hi_[i]) throw ConfigError("volume: empty interval in coordinate " + std::to_string(i));
    }
    strides_.assign(lo_.size(), 1);
    size_ = 1;
    for (std::size_t i = lo_.size(); i-- > 0;) {
      strides_[i] = size_;
      size_ *= static_cast<std::size_t>(hi_[i] - lo_[i] + 1);
    }
  }

  /// [lo, hi] in Z.
  static Volume interval(int lo, int hi) { return Volume({lo}, {hi}); }

  /// [-half_width, half_width]^nu.
  static Volume cube(int nu, int half_width) {
    return Volume(Site(nu, -half_width), Site(nu, half_width));
  }

  int dim() const { return static_cast<int>(lo_.size()); }
  std::size_t size() const { return size_; }
  const Site& lo() const { return lo_; }
  const Site& hi() const { return hi_; }

  bool contains(std::span<const int> s) const {
    for (std::size_t i = 0; i < lo_.size(); ++i)
      if (s[i] < lo_[i] || s[i] > hi_[i]) return false;
    return true;
  }

  bool contains_origin() const { return contains(Site(lo_.size(), 0)); }

  std::optional<std::size_t> index(std::span<const int> s) const {
    if (!contains(s)) return std::nullopt;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < lo_.size(); ++i)
      idx += static_cast<std::size_t>(s[i] - lo_[i]) * strides_[i];
    return idx;
  }

  Site site(std::size_t idx) const {
    Site s(lo_.size());
    for (std::size_t i = 0; i < lo_.size(); ++i) {
      s[i] = lo_[i] + static_cast<int>(idx / strides_[i]);
      idx %= strides_[i];
    }
    return s;
  }

  std::size_t origin_index() const {
    auto idx = index(Site(lo_.size(), 0));
    if (!idx) throw ConfigError("volume does not contain the origin");
    return *idx;
  }

  Volume translated(const Site& u) const { return Volume(lo_ + u, hi_ + u); }

  /// Whether `other` is a subset of this box.
  bool includes(const Volume& other) const {
    for (std::size_t i = 0; i < lo_.size(); ++i)
      if (other.lo_[i] < lo_[i] || other.hi_[i] > hi_[i]) return false;
    return true;
  }

  /// Smallest box containing both.
  static Volume hull(const Volume& a, const Volume& b) {
    Site lo(a.lo_), hi(a.hi_);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      lo[i] = std::min(lo[i], b.lo_[i]);
      hi[i] = std::max(hi[i], b.hi_[i]);
    }
    return Volume(lo, hi);
  }

  /// Box enlarged by r in every direction.
  Volume grown(int r) const { return Volume(lo_ - Site(lo_.size(), r), hi_ + Site(hi_.size(), r)); }

  friend bool operator==(const Volume& a, const Volume& b) { return a.lo_ == b.lo_ && a.hi_ == b.hi_; }

  std::string describe() const {
    std::string out;
    for (std::size_t i = 0; i < lo_.size(); ++i) {
      if (i) out += "x";
      out += "[" + std::to_string(lo_[i]) + "," + std::to_string(hi_[i]) + "]";
    }
    return out;
  }

 private:
  Site lo_, hi_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// The four intervals [-L,R], [-L+1,R], [-L,R-1], [-L+1,R-1] with
/// L = floor(N/2), R = L + N, used to turn transfer-matrix large deviations
/// into Green-function large deviations in one dimension.
inline std::vector<Volume> four_interval_family(int n) {
  if (n < 1) throw ConfigError("four_interval_family: N must be >= 1");
  const int l = n / 2;
  const int r = l + n;
  return {Volume::interval(-l, r), Volume::interval(-l + 1, r), Volume::interval(-l, r - 1),
          Volume::interval(-l + 1, r - 1)};
}

}  // namespace qpdyn
