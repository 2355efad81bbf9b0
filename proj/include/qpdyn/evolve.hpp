#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/model.hpp"
#include "qpdyn/parallel.hpp"
#include "qpdyn/quadrature.hpp"
#include "qpdyn/spectral.hpp"

namespace qpdyn {

/// Row e^{itH}(0, .) = sum_j e^{it lambda_j} psi_j(0) psi_j(.).
/// Negative t gives the row of the adjoint e^{-i|t|H}.
inline Eigen::VectorXcd propagator_row(const SpectralData& s, double t) {
  const auto n = static_cast<Eigen::Index>(s.size());
  if (t == 0.0) {
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
    e[static_cast<Eigen::Index>(s.origin)] = 1.0;
    return e;
  }
  const Eigen::VectorXd w0 = s.origin_weights();
  Eigen::VectorXd cr(n), ci(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double ph = t * s.eigenvalues[j];
    cr[j] = std::cos(ph) * w0[j];
    ci[j] = std::sin(ph) * w0[j];
  }
  const Eigen::VectorXd re = s.eigenvectors * cr;
  const Eigen::VectorXd im = s.eigenvectors * ci;
  Eigen::VectorXcd row(n);
  row.real() = re;
  row.imag() = im;
  const double norm2 = re.squaredNorm() + im.squaredNorm();
  if (std::abs(norm2 - 1.0) > 2e-10)
    throw NumericalError("propagator_row: lost unitarity, |row|^2 = " + std::to_string(norm2));
  return row;
}

/// t_i = t0 * ratio^i, i = 0..count-1.
inline std::vector<double> geometric_times(double t0, double ratio, int count) {
  if (!(t0 > 0.0) || !(ratio > 1.0) || count < 1) throw ConfigError("geometric_times: need t0 > 0, ratio > 1, count >= 1");
  std::vector<double> t(count);
  for (int i = 0; i < count; ++i) t[i] = t0 * std::pow(ratio, i);
  return t;
}

/// count points geometrically spaced from t_min to t_max inclusive.
inline std::vector<double> log_spaced_times(double t_min, double t_max, int count) {
  if (count < 2 || !(t_max > t_min)) throw ConfigError("log_spaced_times: need count >= 2 and t_max > t_min");
  return geometric_times(t_min, std::pow(t_max / t_min, 1.0 / (count - 1)), count);
}

/// Transport probabilities P_t(w) on a finite box, moments M_p(t), and a
/// Duhamel estimate of the error made by truncating the lattice to the box.
struct TransportRecord {
  Volume volume;
  std::vector<double> times;
  std::vector<std::vector<double>> probabilities;               // [time][site index]
  std::vector<std::pair<double, std::vector<double>>> moments;  // p -> M_p(t_i)
  std::vector<double> truncation_bound;                         // per time

  const std::vector<double>* moment(double p) const {
    for (const auto& [q, m] : moments)
      if (q == p) return &m;
    return nullptr;
  }
};

/// M_p(t) = sum_w P_t(w) |w|^p, max-norm. p = 0 gives the total probability.
inline std::vector<double> transport_moments(const TransportRecord& rec, double p) {
  if (p < 0.0) throw ConfigError("transport_moments: p must be >= 0");
  std::vector<double> weight(rec.volume.size());
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = std::pow(static_cast<double>(max_norm(rec.volume.site(i))), p);
  std::vector<double> out(rec.times.size());
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    double m = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) m += rec.probabilities[k][i] * weight[i];
    out[k] = m;
  }
  return out;
}

inline void add_moments(TransportRecord& rec, double p) {
  if (!rec.moment(p)) rec.moments.emplace_back(p, transport_moments(rec, p));
}

/// Propagate from the origin at each time. Time points are independent and
/// may run in parallel; the record is filled in time order.
inline TransportRecord evolve(const SpectralData& s, const Kernel& kernel, const std::vector<double>& times,
                              unsigned threads = 1) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0) throw ConfigError("evolve: times must be >= 0");
    if (i && times[i] <= times[i - 1]) throw ConfigError("evolve: times must be increasing");
  }
  TransportRecord rec;
  rec.volume = s.volume;
  rec.times = times;
  rec.probabilities.resize(times.size());
  std::vector<double> shell_norm(times.size());
  const auto shell = boundary_vertices(kernel, s.volume, 0.0);
  parallel_for(times.size(), threads, [&](std::size_t k) {
    const Eigen::VectorXcd row = propagator_row(s, times[k]);
    std::vector<double> p(row.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      p[i] = std::norm(row[i]);
      total += p[i];
    }
    if (std::abs(total - 1.0) > 1e-8) throw NumericalError("evolve: sum_w P_t(w) = " + std::to_string(total));
    double sh = 0.0;
    for (const auto& b : shell) sh += p[b.index];
    shell_norm[k] = std::sqrt(sh);
    rec.probabilities[k] = std::move(p);
  });
  rec.truncation_bound.resize(times.size());
  double worst_shell = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    worst_shell = std::max(worst_shell, shell_norm[k]);
    rec.truncation_bound[k] = times[k] * (kernel.l1_norm() * worst_shell + kernel.tail_bound());
  }
  return rec;
}

struct BallisticFit {
  double c_fit = 0.0;        // decay rate: P_t(w) <= C exp(-c |w|) beyond the light cone
  double C_fit = 0.0;        // smallest prefactor making the bound hold on the used points
  std::size_t points = 0;
  bool degenerate = true;    // too few points beyond the light cone, or non-negative slope
  bool box_too_small = false;
};

/// Least-squares fit of log P_t(w) against |w| for |w| > v t (v the kernel's
/// velocity bound), using the per-radius envelope max_{|w| = r} P_t(w).
/// Values below `floor` are round-off and are ignored.
inline BallisticFit ballistic_check(const TransportRecord& rec, double velocity, double floor = 1e-24) {
  BallisticFit fit;
  int half = std::numeric_limits<int>::max();
  for (int c = 0; c < rec.volume.dim(); ++c) half = std::min({half, -rec.volume.lo()[c], rec.volume.hi()[c]});
  const double t_max = rec.times.empty() ? 0.0 : rec.times.back();
  fit.box_too_small = half < 3.0 * velocity * t_max;

  std::vector<int> radius(rec.volume.size());
  int r_max = 0;
  for (std::size_t i = 0; i < radius.size(); ++i) {
    radius[i] = max_norm(rec.volume.site(i));
    r_max = std::max(r_max, radius[i]);
  }
  std::vector<std::pair<double, double>> pts;  // (r, log P)
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    const double t = rec.times[k];
    if (t <= 0.0) continue;
    std::vector<double> env(r_max + 1, 0.0);
    for (std::size_t i = 0; i < radius.size(); ++i) env[radius[i]] = std::max(env[radius[i]], rec.probabilities[k][i]);
    for (int r = 1; r <= r_max; ++r)
      if (r > velocity * t && env[r] > floor) pts.emplace_back(r, std::log(env[r]));
  }
  fit.points = pts.size();
  bool distinct = false;
  for (const auto& p : pts) distinct |= p.first != pts.front().first;
  if (pts.size() < 3 || !distinct) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0.0)) return fit;
  fit.c_fit = -slope;
  double logc = -std::numeric_limits<double>::infinity();
  for (const auto& [x, y] : pts) logc = std::max(logc, y + fit.c_fit * x);
  fit.C_fit = std::exp(logc);
  fit.degenerate = false;
  return fit;
}

/// max_{w in box1} |e^{itH_box2}(0,w) - e^{itH_box1}(0,w)| for box1 inside box2.
inline double truncation_gap(const SpectralData& inner, const SpectralData& outer, double t) {
  if (!outer.volume.includes(inner.volume)) throw ConfigError("truncation_gap: box1 must lie inside box2");
  if (t == 0.0) return 0.0;
  const Eigen::VectorXcd a = propagator_row(inner, t);
  const Eigen::VectorXcd b = propagator_row(outer, t);
  double gap = 0.0;
  for (std::size_t i = 0; i < inner.size(); ++i) {
    const auto j = *outer.volume.index(inner.volume.site(i));
    gap = std::max(gap, std::abs(b[static_cast<Eigen::Index>(j)] - a[static_cast<Eigen::Index>(i)]));
  }
  return gap;
}

inline double truncation_gap(const OperatorModel& model, const TorusPoint& theta, double t, const Volume& box1,
                             const Volume& box2) {
  return truncation_gap(diagonalize(assemble_operator(model, box1, theta)),
                        diagonalize(assemble_operator(model, box2, theta)), t);
}

/// e^{itH}(0, .) = -(1/2 pi i) \oint e^{itz} G_z(0, .) dz over the boundary of
/// the rectangle |Re z| <= ||H|| + 1, |Im z| <= half_height, counterclockwise.
/// G_z(0, .) comes from a direct LU solve of (H - z) x = e_0, so this route
/// shares nothing with the eigendecomposition.
inline Eigen::VectorXcd contour_propagator_row(const FiniteOperator& op, double t, double half_height = 1.0,
                                               double panel_width = 0.25, int order = 16) {
  const Eigen::MatrixXcd h = op.dense().cast<std::complex<double>>();
  const auto n = h.rows();
  const double re = op.row_sum_norm() + 1.0;
  const std::complex<double> i1(0.0, 1.0);
  Eigen::VectorXcd e0 = Eigen::VectorXcd::Zero(n);
  e0[static_cast<Eigen::Index>(op.volume().origin_index())] = 1.0;
  const GaussRule rule = gauss_legendre(order);
  Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(n);
  const std::complex<double> corners[5] = {{-re, -half_height}, {re, -half_height}, {re, half_height},
                                           {-re, half_height}, {-re, -half_height}};
  for (int edge = 0; edge < 4; ++edge) {
    const std::complex<double> a = corners[edge], b = corners[edge + 1];
    const int panels = std::max(1, static_cast<int>(std::ceil(std::abs(b - a) / panel_width)));
    for (int p = 0; p < panels; ++p) {
      const std::complex<double> pa = a + (b - a) * (static_cast<double>(p) / panels);
      const std::complex<double> pb = a + (b - a) * (static_cast<double>(p + 1) / panels);
      const std::complex<double> mid = 0.5 * (pa + pb), half = 0.5 * (pb - pa);
      for (int q = 0; q < order; ++q) {
        const std::complex<double> z = mid + half * rule.nodes[q];
        Eigen::MatrixXcd shifted = h;
        shifted.diagonal().array() -= z;
        const Eigen::VectorXcd g = shifted.partialPivLu().solve(e0);
        acc += (rule.weights[q] * std::exp(i1 * t * z) * half) * g;
      }
    }
  }
  return acc * (-1.0 / (2.0 * std::numbers::pi * i1));
}

}  // namespace qpdyn
