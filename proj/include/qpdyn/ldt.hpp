#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/green.hpp"
#include "qpdyn/lattice.hpp"
#include "qpdyn/lowdiscrepancy.hpp"
#include "qpdyn/model.hpp"
#include "qpdyn/parallel.hpp"

namespace qpdyn {

/// Phi = Q R with Q a rotation and R = [[e^a, c e^s], [0, e^b]], s = max(a, b).
/// Only logarithms of the diagonal are stored, so products of any length stay finite.
class TransferMatrix {
 public:
  TransferMatrix() = default;
  TransferMatrix(double energy, std::size_t steps) : energy_(energy), steps_(steps) {}

  /// Left-multiplies by the one-step matrix [[e - v, -1], [1, 0]].
  void step(double e_minus_v) {
    // M = S Q
    const double m00 = e_minus_v * cos_ - sin_, m01 = -e_minus_v * sin_ - cos_;
    const double m10 = cos_, m11 = -sin_;
    const double r = std::hypot(m00, m10);
    const double c = m00 / r, s = m10 / r;
    const double p12 = c * m01 + s * m11;
    const double p22 = -s * m01 + c * m11;
    cos_ = c;
    sin_ = s;
    // R' R with R' = [[r, p12], [0, p22]]
    const double s_old = std::max(a_, b_);
    const double b_old = b_;
    // det S = 1 and r > 0 give p22 = 1/r > 0
    a_ += std::log(r);
    b_ += std::log(p22);
    const double s_new = std::max(a_, b_);
    c_ = r * c_ * std::exp(s_old - s_new) + p12 * std::exp(b_old - s_new);
    ++steps_;
  }

  double energy() const { return energy_; }
  std::size_t steps() const { return steps_; }

  /// log ||Phi||_2.
  double log_norm() const {
    const double s = std::max(a_, b_);
    Eigen::Matrix2d r;
    r << std::exp(a_ - s), c_, 0.0, std::exp(b_ - s);
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(r);
    return s + std::log(svd.singularValues()[0]);
  }

  /// log |det Phi| = a + b.
  double log_abs_det() const { return a_ + b_; }
  double det() const { return std::exp(log_abs_det()); }

  /// The product itself; overflows for long hyperbolic products.
  Eigen::Matrix2d matrix() const {
    const double s = std::max(a_, b_);
    Eigen::Matrix2d q, r;
    q << cos_, -sin_, sin_, cos_;
    r << std::exp(a_), c_ * std::exp(s), 0.0, std::exp(b_);
    return q * r;
  }

 private:
  double energy_ = 0.0;
  std::size_t steps_ = 0;
  double cos_ = 1.0, sin_ = 0.0;
  double a_ = 0.0, b_ = 0.0, c_ = 0.0;
};

inline void require_schrodinger(const OperatorModel& model, const char* what) {
  if (!model.kernel().is_schrodinger())
    throw UnsupportedModel(std::string(what) + ": transfer matrices need the one-dimensional nearest-neighbour kernel");
}

/// Phi_N(E; theta) = S_{N-1} ... S_0 with S_n = [[E - V_theta(n), -1], [1, 0]].
inline TransferMatrix transfer_matrix(const OperatorModel& model, double energy, const TorusPoint& theta, std::size_t n) {
  require_schrodinger(model, "transfer_matrix");
  TransferMatrix t(energy, 0);
  for (std::size_t i = 0; i < n; ++i) t.step(energy - model.potential(Site{static_cast<int>(i)}, theta));
  return t;
}

/// log ||Phi_N(E; theta_i)|| for the first S points of a Halton sampler.
struct LogNormSample {
  double energy = 0.0;
  std::size_t n = 0;
  std::vector<double> log_norms;

  std::size_t size() const { return log_norms.size(); }
  double gamma_hat() const {
    if (log_norms.empty() || n == 0) return 0.0;
    return std::accumulate(log_norms.begin(), log_norms.end(), 0.0) / (static_cast<double>(log_norms.size()) * n);
  }
  double gamma_stderr() const {
    const auto s = log_norms.size();
    if (s < 2 || n == 0) return std::numeric_limits<double>::infinity();
    const double mean = gamma_hat() * static_cast<double>(n);
    double var = 0.0;
    for (double x : log_norms) var += (x - mean) * (x - mean);
    var /= static_cast<double>(s - 1);
    return std::sqrt(var / static_cast<double>(s)) / static_cast<double>(n);
  }
  /// Fraction of samples with |log||Phi|| - gamma N| >= zeta N.
  double deviation_fraction(double zeta, double gamma) const {
    if (log_norms.empty()) return 0.0;
    std::size_t hits = 0;
    for (double x : log_norms) hits += std::abs(x - gamma * static_cast<double>(n)) >= zeta * static_cast<double>(n);
    return static_cast<double>(hits) / static_cast<double>(log_norms.size());
  }
};

inline LogNormSample sample_log_norms(const OperatorModel& model, double energy, std::size_t n, std::size_t samples,
                                      std::uint64_t seed, unsigned threads = 1) {
  require_schrodinger(model, "sample_log_norms");
  if (samples < 1) throw ConfigError("sample_log_norms: need at least one phase sample");
  const HaltonSampler sampler(model.torus_dim(), seed);
  LogNormSample out{energy, n, std::vector<double>(samples)};
  parallel_for(samples, threads, [&](std::size_t i) {
    out.log_norms[i] = transfer_matrix(model, energy, sampler.point(i + 1), n).log_norm();
  });
  return out;
}

struct LyapunovEstimate {
  double gamma = 0.0;
  double standard_error = 0.0;
  std::size_t n = 0;
  std::size_t samples = 0;
};

/// Phase average of (1/N) log ||Phi_N(E; theta)||.
inline LyapunovEstimate lyapunov(const OperatorModel& model, double energy, std::size_t n, std::size_t samples,
                                 std::uint64_t seed = 0, unsigned threads = 1) {
  if (n < 1) throw ConfigError("lyapunov: N must be >= 1");
  const auto s = sample_log_norms(model, energy, n, samples, seed, threads);
  return {std::max(0.0, s.gamma_hat()), s.gamma_stderr(), n, samples};
}

struct LdtEstimate {
  double energy = 0.0;
  std::size_t n = 0;
  double zeta = 0.0;
  std::size_t samples = 0;
  double gamma_hat = 0.0;
  double gamma_stderr = 0.0;
  double p_hat = 0.0;
  bool below_resolution = false;  // p_hat = 0: only p <= 1/S is known
};

/// Empirical P{|log||Phi_N|| - gamma N| >= zeta N}. gamma defaults to the
/// sample mean at this N.
inline LdtEstimate ld_probability(const OperatorModel& model, double energy, std::size_t n, double zeta,
                                  std::size_t samples, std::uint64_t seed = 0, unsigned threads = 1,
                                  std::optional<double> gamma = std::nullopt) {
  if (!(zeta >= 0.0)) throw ConfigError("ld_probability: zeta must be >= 0");
  if (n < 1) throw ConfigError("ld_probability: N must be >= 1");
  const auto s = sample_log_norms(model, energy, n, samples, seed, threads);
  LdtEstimate e;
  e.energy = energy;
  e.n = n;
  e.zeta = zeta;
  e.samples = samples;
  e.gamma_hat = gamma.value_or(std::max(0.0, s.gamma_hat()));
  e.gamma_stderr = s.gamma_stderr();
  e.p_hat = s.deviation_fraction(zeta, e.gamma_hat);
  e.below_resolution = e.p_hat == 0.0;
  return e;
}

/// log(-log p) = log r + rho log N over the rungs with p in [10/S, 1/2].
struct LdtExponentFit {
  double rho = std::numeric_limits<double>::quiet_NaN();
  double r = std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  bool sufficient = false;  // at least two usable rungs
};

inline LdtExponentFit fit_ld_exponent(const std::vector<LdtEstimate>& ladder) {
  std::vector<double> x, y;
  for (const auto& e : ladder) {
    const double lo = 10.0 / static_cast<double>(e.samples);
    if (e.p_hat >= lo && e.p_hat <= 0.5 && e.n >= 1) {
      x.push_back(std::log(static_cast<double>(e.n)));
      y.push_back(std::log(-std::log(e.p_hat)));
    }
  }
  LdtExponentFit f;
  f.used = x.size();
  if (x.size() < 2) return f;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) return f;
  f.rho = sxy / sxx;
  f.r = std::exp(my - f.rho * mx);
  f.sufficient = true;
  return f;
}

/// Large-deviation exponents from the literature, used as reference values.
struct LdtPreset {
  std::string name;
  double rho = std::numeric_limits<double>::quiet_NaN();  // NaN when only implicit
  bool strict_supremum = false;                           // rho is a value approached from below ("a + 0")
  std::string conditions;
};

inline std::vector<LdtPreset> ldt_presets(int k, double kappa) {
  if (k < 1) throw ConfigError("ldt_presets: k must be >= 1");
  if (!(kappa >= 1.0)) throw ConfigError("ldt_presets: kappa must be >= 1");
  const double k3 = static_cast<double>(k) * k * k;
  std::vector<LdtPreset> out;
  out.push_back({"shift-1d-schrodinger", 1.0 / (k3 * kappa * kappa), true,
                 "nu=1, Schrodinger kernel, positive Lyapunov exponent, analytic F, DC(kappa)"});
  out.push_back({"shift-1d-longrange", 1.0 / (k3 * kappa * kappa), true,
                 "nu=1, any admissible kernel, g >= g0, analytic F, DC(kappa)"});
  if (k == 1) {
    out.push_back({"shift-1d-gevrey-a", std::numeric_limits<double>::quiet_NaN(), false,
                   "nu=1, k=1, Schrodinger kernel, g >= g0, Gevrey F (implicit rho)"});
    out.push_back({"shift-1d-gevrey-b", std::numeric_limits<double>::quiet_NaN(), false,
                   "nu=1, k=1, Schrodinger kernel, g >= g0, Gevrey F (implicit rho)"});
    out.push_back({"shift-nd-one-frequency", 1.0, true, "nu >= 1, k=1, any admissible kernel, g >= g0, analytic F"});
  }
  if (k == 2 && kappa < 13.0 / 12.0) {
    const double v = 3.25 - 3.0 * kappa;
    out.push_back({"shift-2d-two-frequency", v * v, true,
                   "nu=2, k=2, diagonal DC(kappa) frequencies with kappa < 13/12, F non-constant on lines, g >= g0"});
  }
  out.push_back({"skew-shift-analytic", 1.0 / (std::pow(4.0, k - 1) * k3 * kappa * kappa), true,
                 "skew-shift on T^k, analytic F, g large (rho below this value)"});
  return out;
}

// ---------------------------------------------------------------------------
// From transfer matrices to Green functions
// ---------------------------------------------------------------------------

struct LdGreenBridge {
  std::vector<Volume> volumes;  // [-L,R], [-L+1,R], [-L,R-1], [-L+1,R-1], L = N/2, R = L + N
  double epsilon = 0.0;         // e^{-r N^rho}
  bool degenerate = false;      // epsilon >= max |A|: no boundary coupling exceeds the threshold
  bool member = false;          // E in the intersection of Res*(Lambda_m; epsilon)
  std::vector<Membership> per_volume;
};

inline LdGreenBridge ld_to_green_bridge(const OperatorModel& model, double energy, const TorusPoint& theta, int n,
                                        double r, double rho) {
  require_schrodinger(model, "ld_to_green_bridge");
  if (!(r >= 0.0) || !(rho > 0.0)) throw ConfigError("ld_to_green_bridge: need r >= 0 and rho > 0");
  LdGreenBridge b;
  b.volumes = four_interval_family(n);
  b.epsilon = std::exp(-r * std::pow(static_cast<double>(n), rho));
  if (b.epsilon >= model.kernel().sup()) {
    b.degenerate = true;
    return b;
  }
  b.member = true;
  for (const auto& box : b.volumes) {
    b.per_volume.push_back(resonant_membership(model, theta, box, b.epsilon, energy));
    b.member = b.member && b.per_volume.back().member;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Moment envelopes from escape bounds at a ladder of scales
// ---------------------------------------------------------------------------

enum class EscapeRegime { diophantine, weak, subsequence };

struct EscapeEnvelope {
  EscapeRegime regime = EscapeRegime::diophantine;
  double p = 0.0;
  double rho = 0.0;
  double r = 0.0;
  double kappa = 1.0;
  double exponent = 0.0;        // M_p(t) <~ log^{exponent}(t + e)
  double growth_constant = 0.0; // max_j N_{j+1} / N_j^kappa (diophantine regime)
  double kappa_tail = 0.0;      // max of log N_{j+1} / log N_j over the upper half of the ladder
  std::vector<double> weak_ratios;  // N_j^{-rho} log N_{j+1}
  bool sub_power_law = false;       // weak regime: ratios strictly decrease over the upper half of the ladder
  std::vector<double> times;        // subsequence regime: t_j = exp(r N_j^rho / (2p + 1))

  double envelope(double t) const { return std::pow(std::log(t + std::exp(1.0)), exponent); }
};

inline EscapeEnvelope moment_bound_from_escape(const std::vector<long long>& scales, double rho, double r,
                                               EscapeRegime regime, double p, double kappa = 1.0) {
  if (scales.empty()) throw ConfigError("moment_bound_from_escape: empty scale ladder");
  for (std::size_t j = 0; j < scales.size(); ++j) {
    if (scales[j] < 1) throw ConfigError("moment_bound_from_escape: scales must be positive");
    if (j && scales[j] <= scales[j - 1]) throw ConfigError("moment_bound_from_escape: scales must be strictly increasing");
  }
  if (!(rho > 0.0) || !(r > 0.0) || !(p > 0.0)) throw ConfigError("moment_bound_from_escape: rho, r, p must be positive");
  if (!(kappa >= 1.0)) throw ConfigError("moment_bound_from_escape: kappa must be >= 1");
  EscapeEnvelope e;
  e.regime = regime;
  e.p = p;
  e.rho = rho;
  e.r = r;
  e.kappa = kappa;
  for (std::size_t j = scales.size() / 2; j + 1 < scales.size(); ++j)
    if (scales[j] >= 2)
      e.kappa_tail = std::max(e.kappa_tail, std::log(double(scales[j + 1])) / std::log(double(scales[j])));
  switch (regime) {
    case EscapeRegime::diophantine:
      e.exponent = kappa * p / rho;
      for (std::size_t j = 0; j + 1 < scales.size(); ++j)
        e.growth_constant =
            std::max(e.growth_constant, double(scales[j + 1]) / std::pow(double(scales[j]), kappa));
      break;
    case EscapeRegime::weak: {
      e.exponent = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j + 1 < scales.size(); ++j)
        e.weak_ratios.push_back(std::log(double(scales[j + 1])) / std::pow(double(scales[j]), rho));
      e.sub_power_law = e.weak_ratios.size() >= 2;
      for (std::size_t j = std::max<std::size_t>(1, e.weak_ratios.size() / 2); j < e.weak_ratios.size(); ++j)
        e.sub_power_law = e.sub_power_law && e.weak_ratios[j] < e.weak_ratios[j - 1];
      break;
    }
    case EscapeRegime::subsequence:
      e.exponent = p / rho;
      for (long long n : scales) e.times.push_back(std::exp(r * std::pow(double(n), rho) / (2.0 * p + 1.0)));
      break;
  }
  return e;
}

}  // namespace qpdyn
