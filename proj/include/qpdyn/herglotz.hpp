#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/model.hpp"
#include "qpdyn/quadrature.hpp"
#include "qpdyn/spectral.hpp"

namespace qpdyn {

/// u(z) = sum_j a_j / (z - b_j) with real masses and strictly increasing real poles.
class RationalFraction {
 public:
  RationalFraction() = default;

  /// Throws ConfigError unless the poles are strictly increasing and
  /// sum |a_j| <= 1 + mass_slack.
  RationalFraction(std::vector<double> masses, std::vector<double> poles, double mass_slack = 1e-12)
      : a_(std::move(masses)), b_(std::move(poles)) {
    if (a_.size() != b_.size()) throw ConfigError("rational fraction: masses and poles differ in length");
    double total = 0.0;
    for (std::size_t j = 0; j < a_.size(); ++j) {
      if (!std::isfinite(a_[j]) || !std::isfinite(b_[j])) throw ConfigError("rational fraction: non-finite input");
      if (j && !(b_[j] > b_[j - 1])) throw ConfigError("rational fraction: poles must be distinct and increasing");
      total += std::abs(a_[j]);
    }
    if (total > 1.0 + mass_slack)
      throw ConfigError("rational fraction: sum |a_j| = " + std::to_string(total) + " exceeds 1");
    mass_ = total;
  }

  /// Sorts the poles and merges masses of poles closer than `merge_tol`
  /// (relative to max(1, |b|)). `merged` receives the number of merges.
  static RationalFraction from_unsorted(std::vector<double> masses, std::vector<double> poles, double merge_tol = 0.0,
                                        std::size_t* merged = nullptr) {
    std::vector<std::size_t> order(poles.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return poles[x] < poles[y]; });
    std::vector<double> a, b;
    std::size_t count = 0;
    for (auto i : order) {
      if (!b.empty() && poles[i] - b.back() <= merge_tol * std::max(1.0, std::abs(poles[i]))) {
        a.back() += masses[i];
        ++count;
        continue;
      }
      a.push_back(masses[i]);
      b.push_back(poles[i]);
    }
    if (merged) *merged = count;
    return RationalFraction(std::move(a), std::move(b));
  }

  std::size_t degree() const { return a_.size(); }
  const std::vector<double>& masses() const { return a_; }
  const std::vector<double>& poles() const { return b_; }
  double total_mass() const { return mass_; }
  /// The same function with zero-mass poles removed.
  RationalFraction stripped() const {
    std::vector<double> a, b;
    for (std::size_t j = 0; j < a_.size(); ++j)
      if (a_[j] != 0.0) {
        a.push_back(a_[j]);
        b.push_back(b_[j]);
      }
    return RationalFraction(std::move(a), std::move(b), std::numeric_limits<double>::infinity());
  }

  bool is_zero() const {
    return std::all_of(a_.begin(), a_.end(), [](double x) { return x == 0.0; });
  }

  double operator()(double x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < a_.size(); ++j) s += a_[j] / (x - b_[j]);
    return s;
  }
  std::complex<double> operator()(std::complex<double> z) const {
    std::complex<double> s = 0.0;
    for (std::size_t j = 0; j < a_.size(); ++j) s += a_[j] / (z - b_[j]);
    return s;
  }
  double derivative(double x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < a_.size(); ++j) s -= a_[j] / ((x - b_[j]) * (x - b_[j]));
    return s;
  }

 private:
  std::vector<double> a_, b_;
  double mass_ = 0.0;
};

/// E -> G_{E,Lambda}(0, v) as a fraction: poles lambda_j, masses -psi_j(0) psi_j(v).
/// Eigenvalues closer than 1e-13 (relative) are merged.
inline RationalFraction from_green(const SpectralData& s, std::size_t v_index, std::size_t* merged = nullptr) {
  std::vector<double> a(s.size()), b(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    a[j] = -s.eigenvectors(static_cast<Eigen::Index>(s.origin), jj) * s.eigenvectors(static_cast<Eigen::Index>(v_index), jj);
    b[j] = s.eigenvalues[jj];
  }
  return RationalFraction::from_unsorted(std::move(a), std::move(b), 1e-13, merged);
}

// ---------------------------------------------------------------------------
// Finite unions of open intervals
// ---------------------------------------------------------------------------

class IntervalSet {
 public:
  IntervalSet() = default;
  /// Normalizes: drops empty pieces, sorts, merges overlapping or touching ones.
  explicit IntervalSet(std::vector<std::pair<double, double>> pieces) {
    std::sort(pieces.begin(), pieces.end());
    for (const auto& [lo, hi] : pieces) {
      if (!(hi > lo)) continue;
      if (!iv_.empty() && lo <= iv_.back().second)
        iv_.back().second = std::max(iv_.back().second, hi);
      else
        iv_.emplace_back(lo, hi);
    }
  }

  static IntervalSet everything() {
    const double inf = std::numeric_limits<double>::infinity();
    return IntervalSet({{-inf, inf}});
  }

  const std::vector<std::pair<double, double>>& intervals() const { return iv_; }
  bool empty() const { return iv_.empty(); }

  double measure() const {
    double m = 0.0;
    for (const auto& [lo, hi] : iv_) m += hi - lo;
    return m;
  }

  bool contains(double x) const {
    auto it = std::upper_bound(iv_.begin(), iv_.end(), x, [](double v, const auto& p) { return v < p.second; });
    return it != iv_.end() && it->first < x && x < it->second;
  }

  /// Poisson measure mu_z, z = x + iy, y != 0.
  double poisson_measure(std::complex<double> z) const {
    const double y = std::abs(z.imag());
    if (!(y > 0.0)) throw ConfigError("poisson_measure: Im z must be nonzero");
    double m = 0.0;
    for (const auto& [lo, hi] : iv_) m += (std::atan((hi - z.real()) / y) - std::atan((lo - z.real()) / y));
    return m / std::numbers::pi;
  }

  friend IntervalSet set_union(const IntervalSet& a, const IntervalSet& b) {
    std::vector<std::pair<double, double>> all = a.iv_;
    all.insert(all.end(), b.iv_.begin(), b.iv_.end());
    return IntervalSet(std::move(all));
  }

  friend IntervalSet set_intersection(const IntervalSet& a, const IntervalSet& b) {
    std::vector<std::pair<double, double>> out;
    std::size_t i = 0, j = 0;
    while (i < a.iv_.size() && j < b.iv_.size()) {
      const double lo = std::max(a.iv_[i].first, b.iv_[j].first);
      const double hi = std::min(a.iv_[i].second, b.iv_[j].second);
      if (hi > lo) out.emplace_back(lo, hi);
      if (a.iv_[i].second < b.iv_[j].second)
        ++i;
      else
        ++j;
    }
    return IntervalSet(std::move(out));
  }

 private:
  std::vector<std::pair<double, double>> iv_;
};

// ---------------------------------------------------------------------------
// Level sets
// ---------------------------------------------------------------------------

struct RootDiagnostics {
  std::size_t merged = 0;    // roots closer than 1e-12 collapsed into one
  std::size_t repaired = 0;  // sign changes missed by the eigenvalue seeds, found by bisection
};

namespace detail {

inline constexpr double root_merge = 1e-12;

// Seeds for u(x) = level. For level != 0 these are the eigenvalues of the
// diagonal-plus-rank-one matrix diag(b) + (1/level) 1 a^T; for level = 0 the
// finite generalized eigenvalues of the pencil ([[0, a^T], [1, diag(b)]], diag(0, I)).
inline std::vector<double> root_seeds(const std::vector<double>& a, const std::vector<double>& b, double level) {
  const auto d = static_cast<Eigen::Index>(a.size());
  std::vector<double> seeds;
  if (d == 0) return seeds;
  if (level != 0.0) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = a[j] / level;
      m(i, i) += b[i];
    }
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto ev = es.eigenvalues()[i];
      if (std::abs(ev.imag()) <= 1e-6 * (1.0 + std::abs(ev.real()))) seeds.push_back(ev.real());
    }
  } else {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(d + 1, d + 1), q = Eigen::MatrixXd::Zero(d + 1, d + 1);
    for (Eigen::Index j = 0; j < d; ++j) {
      p(0, j + 1) = a[j];
      p(j + 1, 0) = 1.0;
      p(j + 1, j + 1) = b[j];
      q(j + 1, j + 1) = 1.0;
    }
    Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges(p, q, false);
    for (Eigen::Index i = 0; i <= d; ++i) {
      const auto al = ges.alphas()[i];
      const double be = ges.betas()[i];
      if (std::abs(be) <= 1e-14 * std::abs(al)) continue;
      const auto ev = al / be;
      if (std::isfinite(ev.real()) && std::abs(ev.imag()) <= 1e-6 * (1.0 + std::abs(ev.real()))) seeds.push_back(ev.real());
    }
  }
  return seeds;
}

}  // namespace detail

/// Real solutions of u(x) = level, sorted, polished by Newton inside their
/// pole bracket, and checked for missed sign changes between breakpoints.
inline std::vector<double> level_roots(const RationalFraction& u, double level, RootDiagnostics* diag = nullptr) {
  // zero masses carry no pole
  const RationalFraction w = u.stripped();
  const std::vector<double>& a = w.masses();
  const std::vector<double>& b = w.poles();
  auto f = [&](double x) { return w(x) - level; };
  const double inf = std::numeric_limits<double>::infinity();
  auto bracket = [&](double x) {
    auto it = std::upper_bound(b.begin(), b.end(), x);
    return std::pair<double, double>{it == b.begin() ? -inf : *(it - 1), it == b.end() ? inf : *it};
  };

  std::vector<double> roots;
  for (double x : detail::root_seeds(a, b, level)) {
    const auto [lo, hi] = bracket(x);
    if (!(x > lo && x < hi)) continue;
    for (int it = 0; it < 60; ++it) {
      const double d = w.derivative(x);
      if (d == 0.0 || !std::isfinite(d)) break;
      const double nx = x - f(x) / d;
      if (!(nx > lo && nx < hi) || !std::isfinite(nx)) break;
      const double step = std::abs(nx - x);
      x = nx;
      if (step <= 4e-16 * std::max(1.0, std::abs(x))) break;
    }
    roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end());

  auto bisect = [&](double lo, double hi) {
    double flo = f(lo);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (!(mid > lo && mid < hi)) break;
      const double fm = f(mid);
      if ((fm > 0) == (flo > 0)) {
        lo = mid;
        flo = fm;
      } else {
        hi = mid;
      }
    }
    return 0.5 * (lo + hi);
  };

  std::size_t repaired = 0;
  for (int pass = 0; pass < 8; ++pass) {
    std::vector<double> pts = b;
    pts.insert(pts.end(), roots.begin(), roots.end());
    std::sort(pts.begin(), pts.end());
    double span = 1.0 + (b.empty() ? 0.0 : b.back() - b.front()) + (level != 0.0 ? u.total_mass() / std::abs(level) : 0.0);
    std::vector<double> added;
    for (std::size_t i = 0; i <= pts.size(); ++i) {
      double lo = i == 0 ? (pts.empty() ? -span : pts[0] - 10.0 * span) : pts[i - 1];
      double hi = i == pts.size() ? (pts.empty() ? span : pts.back() + 10.0 * span) : pts[i];
      if (!(hi > lo)) continue;
      const double g = hi - lo;
      const double probes[5] = {lo + 1e-9 * g, lo + 0.25 * g, lo + 0.5 * g, lo + 0.75 * g, hi - 1e-9 * g};
      for (int k = 0; k + 1 < 5; ++k) {
        const double p0 = probes[k], p1 = probes[k + 1];
        if (!(p1 > p0)) continue;
        const double f0 = f(p0), f1 = f(p1);
        if (std::isfinite(f0) && std::isfinite(f1) && ((f0 > 0) != (f1 > 0)) && f0 != 0.0 && f1 != 0.0) {
          // a sign change with no breakpoint in between: a root was missed
          added.push_back(bisect(p0, p1));
        }
      }
    }
    if (added.empty()) break;
    repaired += added.size();
    roots.insert(roots.end(), added.begin(), added.end());
    std::sort(roots.begin(), roots.end());
  }

  std::vector<double> out;
  std::size_t merged = 0;
  for (double r : roots) {
    if (!out.empty() && r - out.back() <= detail::root_merge * std::max(1.0, std::abs(r))) {
      ++merged;
      continue;
    }
    out.push_back(r);
  }
  if (diag) {
    diag->merged += merged;
    diag->repaired += repaired;
  }
  return out;
}

enum class LevelSide { above, below, absolute };  // {u > l}, {u < -l}, {|u| > l}

/// The superlevel set for l > 0 as a finite union of open intervals.
inline IntervalSet superlevel_set(const RationalFraction& u, double level, LevelSide side = LevelSide::absolute,
                                  RootDiagnostics* diag = nullptr) {
  if (!(level > 0.0)) throw ConfigError("superlevel_set: level must be positive");
  const RationalFraction w = u.stripped();
  std::vector<double> pts = w.poles();
  if (pts.empty()) return {};
  if (side != LevelSide::below) {
    auto r = level_roots(w, level, diag);
    pts.insert(pts.end(), r.begin(), r.end());
  }
  if (side != LevelSide::above) {
    auto r = level_roots(w, -level, diag);
    pts.insert(pts.end(), r.begin(), r.end());
  }
  std::sort(pts.begin(), pts.end());
  auto inside = [&](double x) {
    const double v = w(x);
    switch (side) {
      case LevelSide::above:
        return v > level;
      case LevelSide::below:
        return v < -level;
      case LevelSide::absolute:
        return std::abs(v) > level;
    }
    return false;
  };
  std::vector<std::pair<double, double>> pieces;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if (!(pts[i + 1] > pts[i])) continue;
    if (inside(0.5 * (pts[i] + pts[i + 1]))) pieces.emplace_back(pts[i], pts[i + 1]);
  }
  return IntervalSet(std::move(pieces));
}

/// mes{x : |u(x)| > l}.
inline double superlevel_measure(const RationalFraction& u, double level, RootDiagnostics* diag = nullptr) {
  return superlevel_set(u, level, LevelSide::absolute, diag).measure();
}

// ---------------------------------------------------------------------------
// Poisson averages
// ---------------------------------------------------------------------------

/// int f(|u(t)|) d mu_z(t), d mu_z = (|y|/pi) dt / ((t-x)^2 + y^2).
/// Substituting t = x + |y| tan(phi) gives (1/pi) int_{-pi/2}^{pi/2} f(|u|) d phi,
/// integrated adaptively with breakpoints at the poles and zeros of u.
inline QuadratureResult poisson_average(const RationalFraction& u, std::complex<double> z,
                                        const std::function<double(double)>& f, double abs_tol = 1e-8) {
  const double x = z.real(), y = std::abs(z.imag());
  if (!(y > 0.0)) throw ConfigError("poisson_average: Im z must be nonzero");
  if (u.is_zero()) return {f(0.0), 0.0, 0};
  const RationalFraction w = u.stripped();
  std::vector<double> breaks;
  auto to_phi = [&](double t) { return std::atan((t - x) / y); };
  for (double b : w.poles()) breaks.push_back(to_phi(b));
  for (double r : level_roots(w, 0.0)) breaks.push_back(to_phi(r));
  auto g = [&](double phi) { return f(std::abs(w(x + y * std::tan(phi)))) / std::numbers::pi; };
  return integrate_adaptive(g, -std::numbers::pi / 2, std::numbers::pi / 2, breaks, abs_tol, 200000);
}

// ---------------------------------------------------------------------------
// The min-max lemma for families of fractions
// ---------------------------------------------------------------------------

/// u[m][v], 0 <= m < M, v indexing a common vertex set.
struct FractionFamily {
  std::vector<std::vector<RationalFraction>> u;

  std::size_t M() const { return u.size(); }
  std::size_t vertices() const { return u.empty() ? 0 : u[0].size(); }

  void validate() const {
    if (u.empty()) throw ConfigError("fraction family: M must be >= 1");
    for (const auto& row : u)
      if (row.size() != u[0].size()) throw ConfigError("fraction family: ragged vertex index");
  }

  /// {x : min_m max_v |u_{m,v}(x)| > eps} = intersect_m union_v {|u_{m,v}| > eps}.
  IntervalSet exceedance_set(double eps, RootDiagnostics* diag = nullptr) const {
    validate();
    IntervalSet acc = IntervalSet::everything();
    for (const auto& row : u) {
      IntervalSet any;
      for (const auto& f : row) any = set_union(any, superlevel_set(f, eps, LevelSide::absolute, diag));
      acc = set_intersection(acc, any);
    }
    return acc;
  }

  /// min_m max_v |u_{m,v}(z)|.
  double min_max(std::complex<double> z) const {
    validate();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : u) {
      double mx = 0.0;
      for (const auto& f : row) mx = std::max(mx, std::abs(f(z)));
      best = std::min(best, mx);
    }
    return best;
  }
};

struct LemmaCheck {
  double hypothesis_measure = 0.0;  // exact mes{min_m max_v |u| > eps}
  bool hypothesis_met = false;      // hypothesis_measure <= delta
  double lhs = 0.0;                 // min_m max_v |u_{m,v}(z)|
  double rhs_general = std::numeric_limits<double>::infinity();  // 4 eps^{1/(2M)} / |y|, |y| >= 2 delta / pi
  double rhs_sharp = std::numeric_limits<double>::infinity();    // 4 eps^{1 - delta/(pi |y|)} / |y|, M = 1, |y| > delta/pi
  bool general_applies = false;
  bool sharp_applies = false;
  bool holds_general = true;
  bool holds_sharp = true;
  double rhs = std::numeric_limits<double>::infinity();  // the sharpest applicable line
  bool holds = true;
  RootDiagnostics diagnostics;
};

inline LemmaCheck lemma_main_bound(const FractionFamily& fam, double eps, double delta, std::complex<double> z) {
  if (!(eps > 0.0 && eps <= 1.0) || !(delta > 0.0 && delta <= 1.0))
    throw ConfigError("lemma_main_bound: eps and delta must lie in (0,1]");
  fam.validate();
  for (const auto& row : fam.u)
    for (const auto& f : row)
      if (f.total_mass() > 1.0 + 1e-12) throw ConfigError("lemma_main_bound: a fraction has total mass above 1");
  LemmaCheck c;
  c.hypothesis_measure = fam.exceedance_set(eps, &c.diagnostics).measure();
  c.hypothesis_met = c.hypothesis_measure <= delta;
  c.lhs = fam.min_max(z);
  const double y = std::abs(z.imag());
  const double m = static_cast<double>(fam.M());
  if (!c.hypothesis_met || !(y > 0.0)) return c;
  c.general_applies = y >= 2.0 * delta / std::numbers::pi;
  c.sharp_applies = fam.M() == 1 && y > delta / std::numbers::pi;
  if (c.general_applies) {
    c.rhs_general = 4.0 * std::pow(eps, 1.0 / (2.0 * m)) / y;
    c.holds_general = c.lhs <= c.rhs_general;
  }
  if (c.sharp_applies) {
    c.rhs_sharp = 4.0 * std::pow(eps, 1.0 - delta / (std::numbers::pi * y)) / y;
    c.holds_sharp = c.lhs <= c.rhs_sharp;
  }
  c.rhs = std::min(c.rhs_general, c.rhs_sharp);
  c.holds = c.holds_general && c.holds_sharp;
  return c;
}

struct HalfCoverage {
  std::size_t index = 0;         // selected m (0-based)
  std::vector<double> coverage;  // mu_z{x : max_v |u_{m,v}(x)| <= eps} per m
  bool ok = false;               // coverage[index] >= 1/(2M)
};

/// The m maximizing mu_z{max_v |u_{m,v}| <= eps}. When the exceedance set has
/// measure <= delta and |y| >= 2 delta/pi this is at least 1/(2M).
inline HalfCoverage half_coverage_selector(const FractionFamily& fam, double eps, std::complex<double> z) {
  fam.validate();
  HalfCoverage h;
  for (const auto& row : fam.u) {
    IntervalSet any;
    for (const auto& f : row) any = set_union(any, superlevel_set(f, eps));
    h.coverage.push_back(1.0 - any.poisson_measure(z));
  }
  h.index = static_cast<std::size_t>(std::max_element(h.coverage.begin(), h.coverage.end()) - h.coverage.begin());
  h.ok = h.coverage[h.index] >= 1.0 / (2.0 * static_cast<double>(fam.M())) - 1e-12;
  return h;
}

/// u_{m,v}(E) = G_{E,Lambda_m}(0, v) for v in the boundary set of Lambda_m
/// (threshold eps), and 0 otherwise. The vertex index runs over the union of
/// the boundary sets, so the exceedance set at eps is the intersection of the
/// Res*(Lambda_m; eps) over m.
inline FractionFamily family_from_volumes(const std::vector<SpectralData>& spectra, const Kernel& kernel, double eps,
                                          std::size_t* merged = nullptr) {
  std::vector<Site> sites;
  std::vector<std::vector<BoundaryVertex>> bnd;
  for (const auto& s : spectra) {
    bnd.push_back(boundary_vertices(kernel, s.volume, eps));
    for (const auto& b : bnd.back()) sites.push_back(s.volume.site(b.index));
  }
  std::sort(sites.begin(), sites.end());
  sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  FractionFamily fam;
  std::size_t total = 0;
  for (std::size_t m = 0; m < spectra.size(); ++m) {
    std::vector<RationalFraction> row(sites.size());
    for (const auto& b : bnd[m]) {
      const Site v = spectra[m].volume.site(b.index);
      const auto k = static_cast<std::size_t>(std::lower_bound(sites.begin(), sites.end(), v) - sites.begin());
      std::size_t mm = 0;
      row[k] = from_green(spectra[m], b.index, &mm);
      total += mm;
    }
    fam.u.push_back(std::move(row));
  }
  if (merged) *merged = total;
  return fam;
}

}  // namespace qpdyn
