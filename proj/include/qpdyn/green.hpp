#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/model.hpp"
#include "qpdyn/parallel.hpp"
#include "qpdyn/spectral.hpp"

namespace qpdyn {

using cplx = std::complex<double>;

inline constexpr double singular_tolerance = 1e-12;

struct GreenSample {
  cplx z;
  Volume volume;
  Eigen::VectorXcd row;  // G_{z,Lambda}(0, v) for v in volume order
};

/// G_{z,Lambda}(0, v) = sum_j psi_j(0) psi_j(v) / (lambda_j - z).
inline GreenSample green_row(const SpectralData& s, cplx z) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::VectorXcd c(n);
  const Eigen::VectorXd w0 = s.origin_weights();
  for (Eigen::Index j = 0; j < n; ++j) {
    const cplx d = s.eigenvalues[j] - z;
    if (std::abs(d) <= singular_tolerance)
      throw SingularEnergy("green_row: z = " + std::to_string(z.real()) + "+" + std::to_string(z.imag()) +
                           "i is an eigenvalue");
    c[j] = w0[j] / d;
  }
  return {z, s.volume, s.eigenvectors.cast<cplx>() * c};
}

/// ||(H - z) row - e_0||_inf.
inline double green_residual(const FiniteOperator& op, const GreenSample& g) {
  Eigen::VectorXcd r = op.apply(g.row) - g.z * g.row;
  r[static_cast<Eigen::Index>(op.volume().origin_index())] -= 1.0;
  return r.cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Resonant sets
// ---------------------------------------------------------------------------

struct ResonanceWitness {
  Site v;  // in Lambda, |G_{E,Lambda}(0,v)| > eps
  Site w;  // outside Lambda, |A(v - w)| > eps
};

struct Membership {
  bool member = false;
  bool singular = false;
  std::optional<ResonanceWitness> witness;
};

/// Precomputed Green-row coefficients psi_j(0) psi_j(v) for the boundary set
/// V(Lambda, eps), so each energy costs O(|Lambda| |V|).
class ResonanceProbe {
 public:
  ResonanceProbe(const SpectralData& s, const Kernel& kernel, double eps)
      : volume_(s.volume), eps_(eps), eigenvalues_(s.eigenvalues), boundary_(boundary_vertices(kernel, s.volume, eps)) {
    if (!(eps > 0.0)) throw ConfigError("resonance: epsilon must be positive");
    const Eigen::VectorXd w0 = s.origin_weights();
    coef_.resize(s.eigenvalues.size(), static_cast<Eigen::Index>(boundary_.size()));
    for (std::size_t b = 0; b < boundary_.size(); ++b)
      coef_.col(static_cast<Eigen::Index>(b)) = w0.cwiseProduct(s.eigenvectors.row(boundary_[b].index).transpose());
  }

  const Volume& volume() const { return volume_; }
  const std::vector<BoundaryVertex>& boundary() const { return boundary_; }
  double epsilon() const { return eps_; }

  /// Energies within 1e-12 of an eigenvalue count as |G| = infinity.
  Membership evaluate(cplx z) const {
    Membership out;
    if (boundary_.empty()) return out;
    Eigen::VectorXcd inv(eigenvalues_.size());
    for (Eigen::Index j = 0; j < eigenvalues_.size(); ++j) {
      const cplx d = eigenvalues_[j] - z;
      if (std::abs(d) <= singular_tolerance) {
        out.member = out.singular = true;
        out.witness = ResonanceWitness{volume_.site(boundary_[0].index), boundary_[0].witness};
        return out;
      }
      inv[j] = 1.0 / d;
    }
    for (std::size_t b = 0; b < boundary_.size(); ++b) {
      const cplx g = (coef_.col(static_cast<Eigen::Index>(b)).cast<cplx>().array() * inv.array()).sum();
      if (std::abs(g) > eps_) {
        out.member = true;
        out.witness = ResonanceWitness{volume_.site(boundary_[b].index), boundary_[b].witness};
        return out;
      }
    }
    return out;
  }

  /// max_{v in V} |G_z(0, v)| (infinity at a singular energy, 0 when V is empty).
  double boundary_max(cplx z) const {
    double best = 0.0;
    if (boundary_.empty()) return best;
    Eigen::VectorXcd inv(eigenvalues_.size());
    for (Eigen::Index j = 0; j < eigenvalues_.size(); ++j) {
      const cplx d = eigenvalues_[j] - z;
      if (std::abs(d) <= singular_tolerance) return std::numeric_limits<double>::infinity();
      inv[j] = 1.0 / d;
    }
    for (std::size_t b = 0; b < boundary_.size(); ++b)
      best = std::max(best, std::abs((coef_.col(static_cast<Eigen::Index>(b)).cast<cplx>().array() * inv.array()).sum()));
    return best;
  }

 private:
  Volume volume_;
  double eps_;
  Eigen::VectorXd eigenvalues_;
  std::vector<BoundaryVertex> boundary_;
  Eigen::MatrixXd coef_;  // |Lambda| x |V|
};

/// E in Res*(Lambda; eps)?
inline Membership resonant_membership(const OperatorModel& model, const TorusPoint& theta, const Volume& box, double eps,
                                      double energy) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("resonant_membership: epsilon must lie in (0,1]");
  const ResonanceProbe probe(diagonalize(assemble_operator(model, box, theta)), model.kernel(), eps);
  return probe.evaluate(energy);
}

struct ResonantScanOptions {
  double complexify = 0.0;      // evaluate at E + i*complexify
  bool check_refinement = true;  // recount on the half-step grid
  unsigned threads = 1;
};

struct ResonantScan {
  double epsilon = 0.0;
  std::vector<Volume> volumes;
  std::vector<std::vector<BoundaryVertex>> boundary;  // V per volume
  double lo = 0.0, hi = 0.0;   // [-B-1, B+1], B = sum|A| + g sup|F|
  double step = 0.0;           // effective h (width / count)
  double complexify = 0.0;
  std::vector<double> energies;               // cell midpoints
  std::vector<std::uint8_t> member;           // in the intersection over m
  std::vector<std::optional<ResonanceWitness>> witness;  // witness in Lambda_1 for members
  std::size_t singular_count = 0;
  double delta_hat = 0.0;
  double delta_hat_half_step = std::numeric_limits<double>::quiet_NaN();
  double gap_scale = std::numeric_limits<double>::infinity();  // min over m of the mean level spacing
  bool refinement_flag = false;  // halving h moved delta_hat by >= 10%
  bool step_exceeds_gap = false;  // h > gap_scale / 4
};

namespace detail {

inline std::vector<std::uint8_t> scan_grid(const std::vector<ResonanceProbe>& probes, double lo, double h, std::size_t count,
                                           double y, unsigned threads, std::vector<std::optional<ResonanceWitness>>* witness,
                                           std::size_t* singular) {
  std::vector<std::uint8_t> member(count, 0);
  std::vector<std::uint8_t> sing(count, 0);
  if (witness) witness->assign(count, std::nullopt);
  parallel_for(count, threads, [&](std::size_t i) {
    const cplx z(lo + (static_cast<double>(i) + 0.5) * h, y);
    bool all = true;
    for (std::size_t m = 0; m < probes.size() && all; ++m) {
      const Membership r = probes[m].evaluate(z);
      all = r.member;
      if (r.singular) sing[i] = 1;
      if (m == 0 && r.member && witness) (*witness)[i] = r.witness;
    }
    member[i] = all ? 1 : 0;
    if (!all && witness) (*witness)[i] = std::nullopt;
  });
  if (singular) {
    *singular = 0;
    for (std::size_t i = 0; i < count; ++i) *singular += member[i] && sing[i];
  }
  return member;
}

}  // namespace detail

/// Grid estimate of mes( intersection_m Res*(Lambda_m; eps) ) on [-B-1, B+1].
inline ResonantScan resonant_measure(const OperatorModel& model, const TorusPoint& theta, const std::vector<Volume>& volumes,
                                     double eps, double h, const ResonantScanOptions& opt = {}) {
  if (volumes.empty()) throw ConfigError("resonant_measure: need at least one volume");
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("resonant_measure: epsilon must lie in (0,1]");
  if (!(h > 0.0)) throw ConfigError("resonant_measure: grid step must be positive");
  if (opt.complexify < 0.0) throw ConfigError("resonant_measure: complexify must be >= 0");
  ResonantScan scan;
  scan.epsilon = eps;
  scan.volumes = volumes;
  scan.complexify = opt.complexify;
  const double b = model.norm_bound();
  scan.lo = -b - 1.0;
  scan.hi = b + 1.0;
  const double width = scan.hi - scan.lo;
  const auto count = static_cast<std::size_t>(std::ceil(width / h - 1e-9));
  scan.step = width / static_cast<double>(count);

  std::vector<ResonanceProbe> probes;
  for (const auto& box : volumes) {
    const SpectralData s = diagonalize(assemble_operator(model, box, theta));
    if (s.size() > 1)
      scan.gap_scale = std::min(scan.gap_scale, (s.eigenvalues[s.eigenvalues.size() - 1] - s.eigenvalues[0]) /
                                                    static_cast<double>(s.size() - 1));
    probes.emplace_back(s, model.kernel(), eps);
    scan.boundary.push_back(probes.back().boundary());
  }
  scan.step_exceeds_gap = std::isfinite(scan.gap_scale) && scan.step > scan.gap_scale / 4.0;

  scan.member = detail::scan_grid(probes, scan.lo, scan.step, count, opt.complexify, opt.threads, &scan.witness,
                                  &scan.singular_count);
  scan.energies.resize(count);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < count; ++i) {
    scan.energies[i] = scan.lo + (static_cast<double>(i) + 0.5) * scan.step;
    hits += scan.member[i];
  }
  scan.delta_hat = scan.step * static_cast<double>(hits);

  if (opt.check_refinement) {
    const auto fine = detail::scan_grid(probes, scan.lo, scan.step / 2.0, 2 * count, opt.complexify, opt.threads, nullptr,
                                        nullptr);
    std::size_t fine_hits = 0;
    for (auto m : fine) fine_hits += m;
    scan.delta_hat_half_step = scan.step / 2.0 * static_cast<double>(fine_hits);
    const double ref = std::max(scan.delta_hat, scan.delta_hat_half_step);
    scan.refinement_flag = ref > 0.0 && std::abs(scan.delta_hat - scan.delta_hat_half_step) >= 0.1 * ref;
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Combes-Thomas decay
// ---------------------------------------------------------------------------

struct CombesThomasFit {
  double rate = 0.0;      // c_hat * delta: -slope of log|G_z(0,v)| against |v|
  double c_hat = 0.0;     // rate / delta
  double delta = 0.0;     // min(dist(z, spectrum), 1)
  std::size_t radii = 0;  // usable radii in the fit
  bool too_small = false;  // fewer than 8 usable radii
  bool degenerate = false;  // G_z(0, v) = 0 for all v != 0
};

/// Least-squares fit of log max_{|v| = r} |G_z(0,v)| against r >= 1. Values
/// below 1e-13 max|G| are at round-off level and excluded.
inline CombesThomasFit combes_thomas_fit(const SpectralData& s, cplx z) {
  CombesThomasFit fit;
  const double dist = s.distance_to_spectrum(z);
  if (!(dist > 0.0)) throw ConfigError("combes_thomas_fit: z must lie off the spectrum");
  fit.delta = std::min(dist, 1.0);
  const GreenSample g = green_row(s, z);
  int r_max = 0;
  std::vector<int> radius(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    radius[i] = max_norm(s.volume.site(i));
    r_max = std::max(r_max, radius[i]);
  }
  std::vector<double> env(r_max + 1, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    env[radius[i]] = std::max(env[radius[i]], std::abs(g.row[static_cast<Eigen::Index>(i)]));
  const double floor = 1e-13 * *std::max_element(env.begin(), env.end());
  bool any = false;
  for (int r = 1; r <= r_max; ++r) any |= env[r] != 0.0;
  if (!any) {
    fit.degenerate = fit.too_small = true;
    fit.rate = std::numeric_limits<double>::infinity();
    return fit;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int r = 1; r <= r_max; ++r) {
    if (!(env[r] > floor)) continue;
    const double y = std::log(env[r]);
    sx += r;
    sy += y;
    sxx += static_cast<double>(r) * r;
    sxy += r * y;
    ++fit.radii;
  }
  fit.too_small = fit.radii < 8;
  if (fit.radii < 2) return fit;
  const double n = static_cast<double>(fit.radii);
  fit.rate = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.c_hat = fit.rate / fit.delta;
  return fit;
}

// ---------------------------------------------------------------------------
// Second resolvent identity off the box
// ---------------------------------------------------------------------------

struct OffBoxBound {
  double direct = 0.0;           // |G_z(0, w)| on the ambient box
  double resolvent_sum = 0.0;    // sum_{v in Lambda, u notin Lambda} |G_Lambda(0,v)| |A(v-u)| |G(u,w)|
  double threshold_bound = 0.0;  // eps * sum max(|A(v-u)|, |G_Lambda(0,v)|) |G(u,w)|
  double boundary_green_max = 0.0;  // max_{v in V} |G_Lambda(0, v)|
  bool hypothesis_met = false;   // boundary_green_max <= eps
  bool holds = false;            // direct <= resolvent_sum (and <= threshold_bound if hypothesis_met)
  bool inconclusive = false;     // ambient box does not contain Lambda grown by the kernel range, or w
};

/// Both sides of the second-resolvent chain for w outside Lambda, computed
/// on `ambient`. On the ambient box the identity
///   G(0,w) = -sum_{v in Lambda, u notin Lambda} G_Lambda(0,v) A(v-u) G(u,w)
/// is exact, so `direct <= resolvent_sum` up to rounding.
inline OffBoxBound offbox_green_bound(const OperatorModel& model, const TorusPoint& theta, const Volume& box, cplx z,
                                      const Site& w, const Volume& ambient, double eps) {
  if (box.contains(w)) throw ConfigError("offbox_green_bound: w must lie outside the box");
  if (!(eps > 0.0)) throw ConfigError("offbox_green_bound: epsilon must be positive");
  OffBoxBound out;
  const int reach = model.kernel().cutoff_radius();
  out.inconclusive = !ambient.includes(box.grown(reach + 1)) || !ambient.contains(w);
  if (!ambient.includes(box) || !ambient.contains(w)) {
    out.inconclusive = true;
    return out;
  }
  const SpectralData s = diagonalize(assemble_operator(model, box, theta));
  const GreenSample gl = green_row(s, z);

  const FiniteOperator amb = assemble_operator(model, ambient, theta);
  Eigen::MatrixXcd shifted = amb.dense().cast<cplx>();
  shifted.diagonal().array() -= z;
  Eigen::VectorXcd ew = Eigen::VectorXcd::Zero(shifted.rows());
  ew[static_cast<Eigen::Index>(*ambient.index(w))] = 1.0;
  const Eigen::VectorXcd col = shifted.partialPivLu().solve(ew);  // G(u, w)
  out.direct = std::abs(col[static_cast<Eigen::Index>(ambient.origin_index())]);

  for (const auto& b : boundary_vertices(model.kernel(), box, eps))
    out.boundary_green_max = std::max(out.boundary_green_max, std::abs(gl.row[static_cast<Eigen::Index>(b.index)]));
  out.hypothesis_met = out.boundary_green_max <= eps;

  for (std::size_t i = 0; i < box.size(); ++i) {
    const Site v = box.site(i);
    const double gv = std::abs(gl.row[static_cast<Eigen::Index>(i)]);
    for (const auto& e : model.kernel().entries()) {
      const Site u = v - e.offset;
      if (box.contains(u)) continue;
      auto ui = ambient.index(u);
      if (!ui) continue;
      const double gu = std::abs(col[static_cast<Eigen::Index>(*ui)]);
      out.resolvent_sum += gv * std::abs(e.weight) * gu;
      out.threshold_bound += eps * std::max(std::abs(e.weight), gv) * gu;
    }
  }
  const double slack = 1e-12 * (1.0 + out.resolvent_sum);
  out.holds = out.direct <= out.resolvent_sum + slack;
  if (out.hypothesis_met) out.holds = out.holds && out.resolvent_sum <= out.threshold_bound + slack;
  return out;
}

}  // namespace qpdyn
