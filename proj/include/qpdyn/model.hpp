#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/lattice.hpp"
#include "qpdyn/torus.hpp"

namespace qpdyn {

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

struct KernelEntry {
  Site offset;
  double weight = 0.0;
};

/// Symmetric hopping kernel A: Z^nu -> R with finite support.
///
/// An exponentially decaying kernel is truncated at `cutoff_radius`; the
/// discarded mass sum_{|w| > R} |A(w)| is kept in `tail_bound()` so callers
/// can add it to error budgets.
class Kernel {
 public:
  Kernel() = default;

  static Kernel from_entries(int nu, std::vector<KernelEntry> entries, double decay_rate, int cutoff_radius,
                             double tail_bound = 0.0) {
    Kernel k;
    k.nu_ = nu;
    k.decay_rate_ = decay_rate;
    k.cutoff_ = cutoff_radius;
    k.tail_bound_ = tail_bound;
    if (nu < 1) throw ConfigError("kernel: dimension must be >= 1");
    if (!(decay_rate > 0.0)) throw ConfigError("kernel: decay rate must be positive");
    if (cutoff_radius < 0) throw ConfigError("kernel: cutoff radius must be >= 0");
    std::map<Site, double> table;
    for (auto& e : entries) {
      if (static_cast<int>(e.offset.size()) != nu) throw ConfigError("kernel: offset of wrong dimension");
      if (!std::isfinite(e.weight)) throw ConfigError("kernel: non-finite weight at " + to_string(e.offset));
      if (max_norm(e.offset) > cutoff_radius)
        throw ConfigError("kernel: offset " + to_string(e.offset) + " beyond cutoff radius");
      if (e.weight == 0.0) continue;
      if (!table.emplace(e.offset, e.weight).second)
        throw ConfigError("kernel: duplicate offset " + to_string(e.offset));
    }
    for (const auto& [w, a] : table) {
      Site neg(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) neg[i] = -w[i];
      auto it = table.find(neg);
      if (it == table.end() || it->second != a)
        throw ConfigError("kernel: not symmetric, A" + to_string(w) + " != A" + to_string(neg));
    }
    for (const auto& [w, a] : table) k.entries_.push_back({w, a});
    k.weighted_sum_ = 0.0;
    for (const auto& e : k.entries_) k.weighted_sum_ += std::abs(e.weight) * std::exp(decay_rate * max_norm(e.offset));
    if (!std::isfinite(k.weighted_sum_)) throw ConfigError("kernel: weighted decay sum is not finite");
    return k;
  }

  /// A = indicator of the nearest neighbours {+-e_i}.
  static Kernel laplacian(int nu) {
    std::vector<KernelEntry> e;
    for (int i = 0; i < nu; ++i) {
      Site p(nu, 0), m(nu, 0);
      p[i] = 1;
      m[i] = -1;
      e.push_back({p, 1.0});
      e.push_back({m, 1.0});
    }
    return from_entries(nu, std::move(e), 1.0, 1);
  }

  /// A(w) = exp(-rate |w|) for 1 <= |w| <= radius. The decay constant
  /// reported for the summability condition is rate/2.
  static Kernel exp_decay(int nu, double rate, int radius) {
    if (!(rate > 0.0)) throw ConfigError("exp_decay kernel: rate must be positive");
    if (radius < 1) throw ConfigError("exp_decay kernel: radius must be >= 1");
    std::vector<KernelEntry> e;
    const Volume box = Volume::cube(nu, radius);
    for (std::size_t i = 0; i < box.size(); ++i) {
      Site w = box.site(i);
      int n = max_norm(w);
      if (n >= 1) e.push_back({w, std::exp(-rate * n)});
    }
    // sum over the shells |w| = n > R of ((2n+1)^nu - (2n-1)^nu) e^{-rate n}
    double tail = 0.0;
    for (int n = radius + 1; n < radius + 10000; ++n) {
      double shell = std::pow(2.0 * n + 1, nu) - std::pow(2.0 * n - 1, nu);
      double term = shell * std::exp(-rate * n);
      tail += term;
      if (term < 1e-18 * tail) break;
    }
    return from_entries(nu, std::move(e), rate / 2.0, radius, tail);
  }

  static Kernel zero(int nu) { return from_entries(nu, {}, 1.0, 0); }

  int dim() const { return nu_; }
  const std::vector<KernelEntry>& entries() const { return entries_; }
  double decay_rate() const { return decay_rate_; }
  int cutoff_radius() const { return cutoff_; }
  double tail_bound() const { return tail_bound_; }
  double weighted_sum() const { return weighted_sum_; }
  bool is_zero() const { return entries_.empty(); }

  double at(const Site& w) const {
    for (const auto& e : entries_)
      if (e.offset == w) return e.weight;
    return 0.0;
  }

  double l1_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) s += std::abs(e.weight);
    return s;
  }

  double sup() const {
    double s = 0.0;
    for (const auto& e : entries_) s = std::max(s, std::abs(e.weight));
    return s;
  }

  /// Light-cone speed 2 * sum |A(w)| max(|w|, 1).
  double velocity_bound() const {
    double s = 0.0;
    for (const auto& e : entries_) s += std::abs(e.weight) * std::max(max_norm(e.offset), 1);
    return 2.0 * s;
  }

  /// One-dimensional discrete Schroedinger kernel: exactly 1 at +-1.
  bool is_schrodinger() const {
    return nu_ == 1 && entries_.size() == 2 && at({1}) == 1.0 && at({-1}) == 1.0;
  }

 private:
  int nu_ = 1;
  std::vector<KernelEntry> entries_;
  double decay_rate_ = 1.0;
  int cutoff_ = 0;
  double tail_bound_ = 0.0;
  double weighted_sum_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hull function
// ---------------------------------------------------------------------------

struct TrigTerm {
  std::vector<int> frequency;  // m in Z^k
  double cos_coef = 0.0;
  double sin_coef = 0.0;
};

enum class HullKind { trig_polynomial, cosine, table };

/// F: T^k -> R.
class HullFunction {
 public:
  HullFunction() = default;

  /// amplitude * cos(2 pi x_1).
  static HullFunction cosine(int k, double amplitude = 2.0) {
    std::vector<int> m(k, 0);
    m[0] = 1;
    HullFunction f = trig_polynomial(k, {{m, amplitude, 0.0}});
    f.kind_ = HullKind::cosine;
    return f;
  }

  /// sum_m c_m cos(2 pi m.x) + s_m sin(2 pi m.x).
  static HullFunction trig_polynomial(int k, std::vector<TrigTerm> terms) {
    if (k < 1) throw ConfigError("hull: torus dimension must be >= 1");
    HullFunction f;
    f.kind_ = HullKind::trig_polynomial;
    f.k_ = k;
    for (const auto& t : terms) {
      if (static_cast<int>(t.frequency.size()) != k) throw ConfigError("hull: trig term frequency of wrong dimension");
      if (!std::isfinite(t.cos_coef) || !std::isfinite(t.sin_coef)) throw ConfigError("hull: non-finite coefficient");
    }
    f.terms_ = std::move(terms);
    f.lipschitz_ = 0.0;
    f.sup_ = 0.0;
    bool constant = true;
    for (const auto& t : f.terms_) {
      int l1 = 0;
      for (int m : t.frequency) l1 += std::abs(m);
      double amp = std::abs(t.cos_coef) + std::abs(t.sin_coef);
      f.lipschitz_ += 2.0 * std::numbers::pi * l1 * amp;
      f.sup_ += amp;
      if (l1 != 0 && amp != 0.0) constant = false;
    }
    f.constant_ = constant;
    return f;
  }

  /// Periodic multilinear interpolation of samples on the uniform grid
  /// prod_c {j / n_c}. `values` is in lexicographic order, first coordinate
  /// most significant.
  static HullFunction table(std::vector<int> shape, std::vector<double> values) {
    if (shape.empty()) throw ConfigError("hull table: empty shape");
    std::size_t total = 1;
    for (int n : shape) {
      if (n < 1) throw ConfigError("hull table: grid sizes must be >= 1");
      total *= static_cast<std::size_t>(n);
    }
    if (values.size() != total) throw ConfigError("hull table: value count does not match grid shape");
    for (double v : values)
      if (!std::isfinite(v)) throw ConfigError("hull table: non-finite value");
    HullFunction f;
    f.kind_ = HullKind::table;
    f.k_ = static_cast<int>(shape.size());
    f.shape_ = std::move(shape);
    f.values_ = std::move(values);
    f.sup_ = 0.0;
    for (double v : f.values_) f.sup_ = std::max(f.sup_, std::abs(v));
    f.constant_ = std::all_of(f.values_.begin(), f.values_.end(), [&](double v) { return v == f.values_[0]; });
    // slope bound per coordinate, summed: |F(x)-F(y)| <= L * max_c |x_c - y_c|
    std::vector<std::size_t> strides(f.k_, 1);
    for (int c = f.k_ - 1; c > 0; --c) strides[c - 1] = strides[c] * f.shape_[c];
    f.lipschitz_ = 0.0;
    for (int c = 0; c < f.k_; ++c) {
      double worst = 0.0;
      for (std::size_t i = 0; i < total; ++i) {
        std::size_t coord = (i / strides[c]) % f.shape_[c];
        std::size_t next = coord + 1 == static_cast<std::size_t>(f.shape_[c]) ? i - coord * strides[c] : i + strides[c];
        worst = std::max(worst, std::abs(f.values_[next] - f.values_[i]));
      }
      f.lipschitz_ += worst * f.shape_[c];
    }
    return f;
  }

  HullKind kind() const { return kind_; }
  int torus_dim() const { return k_; }
  double lipschitz_constant() const { return lipschitz_; }
  /// Upper bound for sup |F|.
  double sup_bound() const { return sup_; }
  bool is_constant() const { return constant_; }
  const std::vector<TrigTerm>& terms() const { return terms_; }

  double operator()(const TorusPoint& x) const {
    if (static_cast<int>(x.size()) != k_) throw ConfigError("hull: point of wrong torus dimension");
    if (kind_ == HullKind::table) return eval_table(x);
    double s = 0.0;
    for (const auto& t : terms_) {
      Phase arg;
      for (int c = 0; c < k_; ++c) arg = arg + static_cast<std::int64_t>(t.frequency[c]) * x[c];
      double a = 2.0 * std::numbers::pi * arg.to_double();
      if (t.cos_coef != 0.0) s += t.cos_coef * std::cos(a);
      if (t.sin_coef != 0.0) s += t.sin_coef * std::sin(a);
    }
    return s;
  }

 private:
  double eval_table(const TorusPoint& x) const {
    // multilinear: iterate over the 2^k cell corners
    std::vector<std::size_t> base(k_), next(k_);
    std::vector<double> frac(k_);
    for (int c = 0; c < k_; ++c) {
      double pos = x[c].to_double() * shape_[c];
      double fl = std::floor(pos);
      std::size_t i = static_cast<std::size_t>(fl) % shape_[c];
      base[c] = i;
      next[c] = (i + 1) % shape_[c];
      frac[c] = pos - fl;
    }
    double s = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << k_); ++corner) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int c = 0; c < k_; ++c) {
        bool hi = (corner >> c) & 1u;
        w *= hi ? frac[c] : 1.0 - frac[c];
        idx = idx * shape_[c] + (hi ? next[c] : base[c]);
      }
      if (w != 0.0) s += w * values_[idx];
    }
    return s;
  }

  HullKind kind_ = HullKind::trig_polynomial;
  int k_ = 1;
  std::vector<TrigTerm> terms_;
  std::vector<int> shape_;
  std::vector<double> values_;
  double lipschitz_ = 0.0;
  double sup_ = 0.0;
  bool constant_ = true;
};

// ---------------------------------------------------------------------------
// Base dynamics
// ---------------------------------------------------------------------------

enum class DynamicsKind { shift, skew_shift, explicit_potential };

namespace detail {

// Binomial coefficient C(n, i) for integer n (possibly negative), reduced mod 2^64.
inline std::uint64_t binomial_mod64(std::int64_t n, int i) {
  __int128 c = 1;
  for (int m = 0; m < i; ++m) {
    c = c * (static_cast<__int128>(n) - m);
    c /= (m + 1);
    if (c > (static_cast<__int128>(1) << 100) || c < -(static_cast<__int128>(1) << 100))
      throw NumericalError("skew-shift: binomial coefficient overflow for n=" + std::to_string(n));
  }
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(c));
}

}  // namespace detail

/// Z^nu action on T^k: an irrational shift theta + alpha w, the skew-shift
/// (nu = 1), or no dynamics at all (explicit potential).
class BaseDynamics {
 public:
  BaseDynamics() = default;

  /// `alpha[i]` is the frequency vector alpha_i in R^k for lattice direction i.
  static BaseDynamics shift(const std::vector<std::vector<double>>& alpha) {
    if (alpha.empty() || alpha[0].empty()) throw ConfigError("shift: frequency matrix must be non-empty");
    BaseDynamics b;
    b.kind_ = DynamicsKind::shift;
    b.nu_ = static_cast<int>(alpha.size());
    b.k_ = static_cast<int>(alpha[0].size());
    for (const auto& row : alpha) {
      if (static_cast<int>(row.size()) != b.k_) throw ConfigError("shift: ragged frequency matrix");
      for (double a : row) {
        if (!std::isfinite(a)) throw ConfigError("shift: non-finite frequency");
        b.alpha_.push_back(Phase::from_double(a));
      }
      b.alpha_doubles_.push_back(row);
    }
    return b;
  }

  /// T(theta_1..theta_k) = (theta_1 + alpha, theta_2 + theta_1, ..., theta_k + theta_{k-1}).
  static BaseDynamics skew_shift(double alpha, int k) {
    if (k < 1) throw ConfigError("skew-shift: torus dimension must be >= 1");
    if (!std::isfinite(alpha)) throw ConfigError("skew-shift: non-finite frequency");
    BaseDynamics b;
    b.kind_ = DynamicsKind::skew_shift;
    b.nu_ = 1;
    b.k_ = k;
    b.alpha_ = {Phase::from_double(alpha)};
    b.alpha_doubles_ = {{alpha}};
    return b;
  }

  static BaseDynamics explicit_potential(int nu) {
    BaseDynamics b;
    b.kind_ = DynamicsKind::explicit_potential;
    b.nu_ = nu;
    b.k_ = 1;
    return b;
  }

  DynamicsKind kind() const { return kind_; }
  int lattice_dim() const { return nu_; }
  int torus_dim() const { return k_; }
  const std::vector<std::vector<double>>& frequencies() const { return alpha_doubles_; }
  const std::vector<Phase>& frequency_phases() const { return alpha_; }

  /// Exponent chi in dist(T^w x, T^w y) <~ (1 + |w|)^chi dist(x, y).
  double distortion_exponent() const { return kind_ == DynamicsKind::skew_shift ? k_ - 1 : 0.0; }

  TorusPoint apply(const TorusPoint& theta, std::span<const int> w) const {
    switch (kind_) {
      case DynamicsKind::shift: {
        TorusPoint out = theta;
        for (int i = 0; i < nu_; ++i) {
          if (w[i] == 0) continue;
          for (int c = 0; c < k_; ++c) out[c] = out[c] + static_cast<std::int64_t>(w[i]) * alpha_[i * k_ + c];
        }
        return out;
      }
      case DynamicsKind::skew_shift: {
        // T = I + S on (alpha, theta_1, ..., theta_k) with alpha fixed, so
        // (T^n theta)_j = sum_{i=0}^{j} C(n, i) theta_{j-i}, theta_0 := alpha.
        const std::int64_t n = w[0];
        TorusPoint out(k_);
        std::vector<std::uint64_t> binom(k_ + 1);
        for (int i = 0; i <= k_; ++i) binom[i] = detail::binomial_mod64(n, i);
        for (int j = 1; j <= k_; ++j) {
          std::uint64_t acc = 0;
          for (int i = 0; i <= j; ++i) {
            std::uint64_t coord = (j - i == 0) ? alpha_[0].raw() : theta[j - i - 1].raw();
            acc += binom[i] * coord;
          }
          out[j - 1] = Phase(acc);
        }
        return out;
      }
      case DynamicsKind::explicit_potential:
        return theta;
    }
    return theta;
  }

 private:
  DynamicsKind kind_ = DynamicsKind::shift;
  int nu_ = 1;
  int k_ = 1;
  std::vector<Phase> alpha_;  // nu x k, row major
  std::vector<std::vector<double>> alpha_doubles_;
};

// ---------------------------------------------------------------------------
// Operator model and finite-volume assembly
// ---------------------------------------------------------------------------

/// H_theta = A * phi + g V_theta phi with V_theta(w) = F(T^w theta),
/// or an explicitly tabulated potential.
class OperatorModel {
 public:
  OperatorModel() = default;

  OperatorModel(Kernel kernel, HullFunction hull, BaseDynamics base, double coupling)
      : kernel_(std::move(kernel)), hull_(std::move(hull)), base_(std::move(base)), g_(coupling) {
    if (!std::isfinite(g_)) throw ConfigError("model: non-finite coupling");
    if (kernel_.dim() != base_.lattice_dim())
      throw ConfigError("model: kernel dimension " + std::to_string(kernel_.dim()) +
                        " does not match lattice dimension " + std::to_string(base_.lattice_dim()));
    if (base_.kind() != DynamicsKind::explicit_potential && hull_.torus_dim() != base_.torus_dim())
      throw ConfigError("model: hull torus dimension does not match base dynamics");
    sup_v_ = std::abs(g_) * hull_.sup_bound();
  }

  /// Potential given site by site; sites outside the table are rejected at assembly.
  static OperatorModel with_explicit_potential(Kernel kernel, std::map<Site, double> values, double coupling = 1.0) {
    OperatorModel m;
    m.kernel_ = std::move(kernel);
    m.base_ = BaseDynamics::explicit_potential(m.kernel_.dim());
    m.hull_ = HullFunction::trig_polynomial(1, {});
    m.g_ = coupling;
    m.explicit_ = std::move(values);
    double sup = 0.0;
    for (const auto& [s, v] : m.explicit_) {
      if (static_cast<int>(s.size()) != m.kernel_.dim()) throw ConfigError("explicit potential: site of wrong dimension");
      if (!std::isfinite(v)) throw ConfigError("explicit potential: non-finite value at " + to_string(s));
      sup = std::max(sup, std::abs(v));
    }
    m.sup_v_ = std::abs(coupling) * sup;
    return m;
  }

  const Kernel& kernel() const { return kernel_; }
  const HullFunction& hull() const { return hull_; }
  const BaseDynamics& base() const { return base_; }
  double coupling() const { return g_; }
  int lattice_dim() const { return kernel_.dim(); }
  int torus_dim() const { return base_.torus_dim(); }

  /// sup |V| <= g sup |F|.
  double potential_sup_bound() const { return sup_v_; }
  /// ||H|| <= sum |A| + g sup |F| (Schur/Gershgorin).
  double norm_bound() const { return kernel_.l1_norm() + sup_v_; }

  /// Constant hull functions are accepted but reported.
  bool degenerate_hull() const {
    if (base_.kind() == DynamicsKind::explicit_potential) return false;
    return hull_.is_constant();
  }

  double potential(const Site& w, const TorusPoint& theta) const {
    if (base_.kind() == DynamicsKind::explicit_potential) {
      auto it = explicit_.find(w);
      if (it == explicit_.end()) throw ConfigError("explicit potential undefined at site " + to_string(w));
      return g_ * it->second;
    }
    if (g_ == 0.0) return 0.0;
    return g_ * hull_(base_.apply(theta, w));
  }

 private:
  Kernel kernel_;
  HullFunction hull_;
  BaseDynamics base_;
  double g_ = 0.0;
  double sup_v_ = 0.0;
  std::map<Site, double> explicit_;
};

struct Hop {
  std::size_t row = 0;  // row < col
  std::size_t col = 0;
  double value = 0.0;
};

/// Sparse symmetric matrix H_Lambda on the sites of a box.
class FiniteOperator {
 public:
  FiniteOperator() = default;
  FiniteOperator(Volume volume, Eigen::VectorXd diagonal, std::vector<Hop> hops)
      : volume_(std::move(volume)), diag_(std::move(diagonal)), hops_(std::move(hops)) {
    bandwidth_ = 0;
    for (const auto& h : hops_) bandwidth_ = std::max(bandwidth_, h.col - h.row);
  }

  /// Wrap a dense symmetric matrix as an operator on [0, n-1] (origin = index 0).
  static FiniteOperator from_dense(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() < 1) throw ConfigError("from_dense: matrix must be square and non-empty");
    const auto n = static_cast<std::size_t>(m.rows());
    std::vector<Hop> hops;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (m(i, j) != m(j, i)) throw ConfigError("from_dense: matrix is not symmetric");
        if (m(i, j) != 0.0) hops.push_back({i, j, m(i, j)});
      }
    return FiniteOperator(Volume::interval(0, static_cast<int>(n) - 1), m.diagonal(), std::move(hops));
  }

  const Volume& volume() const { return volume_; }
  std::size_t size() const { return static_cast<std::size_t>(diag_.size()); }
  const Eigen::VectorXd& diagonal() const { return diag_; }
  const std::vector<Hop>& hops() const { return hops_; }
  std::size_t bandwidth() const { return bandwidth_; }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(size(), size());
    m.diagonal() = diag_;
    for (const auto& h : hops_) {
      m(h.row, h.col) += h.value;
      m(h.col, h.row) += h.value;
    }
    return m;
  }

  template <typename Vec>
  Vec apply(const Vec& x) const {
    Vec y = diag_.cast<typename Vec::Scalar>().cwiseProduct(x);
    for (const auto& h : hops_) {
      y[h.row] += h.value * x[h.col];
      y[h.col] += h.value * x[h.row];
    }
    return y;
  }

  /// Maximal absolute row sum (an upper bound for the operator norm).
  double row_sum_norm() const {
    Eigen::VectorXd rows = diag_.cwiseAbs();
    for (const auto& h : hops_) {
      rows[h.row] += std::abs(h.value);
      rows[h.col] += std::abs(h.value);
    }
    return size() ? rows.maxCoeff() : 0.0;
  }

 private:
  Volume volume_;
  Eigen::VectorXd diag_;
  std::vector<Hop> hops_;
  std::size_t bandwidth_ = 0;
};

/// H_Lambda = P_Lambda H_theta P_Lambda^*: entry (v, w) = A(v - w) + delta_{vw} g F(T^v theta).
inline FiniteOperator assemble_operator(const OperatorModel& model, const Volume& box, const TorusPoint& theta) {
  if (box.dim() != model.lattice_dim()) throw ConfigError("assemble: volume dimension does not match model");
  if (!box.contains_origin()) throw ConfigError("assemble: volume " + box.describe() + " does not contain the origin");
  if (model.base().kind() != DynamicsKind::explicit_potential && static_cast<int>(theta.size()) != model.torus_dim())
    throw ConfigError("assemble: phase of wrong torus dimension");
  const std::size_t n = box.size();
  Eigen::VectorXd diag(n);
  std::vector<Hop> hops;
  const double a0 = model.kernel().at(Site(box.dim(), 0));
  for (std::size_t i = 0; i < n; ++i) {
    const Site v = box.site(i);
    const double pot = model.potential(v, theta);
    if (!std::isfinite(pot)) throw NumericalError("assemble: non-finite potential at " + to_string(v));
    diag[i] = pot + a0;
    for (const auto& e : model.kernel().entries()) {
      const Site w = v - e.offset;
      auto j = box.index(w);
      if (j && *j > i) hops.push_back({i, *j, e.weight});
    }
  }
  std::sort(hops.begin(), hops.end(), [](const Hop& a, const Hop& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  FiniteOperator op(box, std::move(diag), std::move(hops));
  const double bound = model.norm_bound();
  if (op.row_sum_norm() > bound * (1.0 + 1e-12) + 1e-300)
    throw NumericalError("assemble: row-sum norm exceeds sum|A| + g sup|F|");
  return op;
}

struct BoundaryVertex {
  std::size_t index = 0;  // v, as an index into the box
  Site witness;           // some w outside the box with |A(v - w)| > threshold
};

/// V = { v in box : exists w outside the box with |A(v - w)| > threshold },
/// in index order. The witness is the first qualifying offset in kernel order.
inline std::vector<BoundaryVertex> boundary_vertices(const Kernel& kernel, const Volume& box, double threshold) {
  std::vector<BoundaryVertex> out;
  for (std::size_t i = 0; i < box.size(); ++i) {
    const Site v = box.site(i);
    for (const auto& e : kernel.entries()) {
      if (!(std::abs(e.weight) > threshold)) continue;
      Site w = v - e.offset;
      if (!box.contains(w)) {
        out.push_back({i, std::move(w)});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Arithmetic conditions on frequencies
// ---------------------------------------------------------------------------

enum class DiophantineVariant { DC, WDC, SDC };

/// DC(kappa, tau):  dist(alpha w, Z^k) >= tau |w|^{-kappa}
/// WDC(kappa):      dist >= tau exp(-zeta |w|^kappa)
/// SDC(kappa):      dist >= tau |w|^{-1} log^{-kappa}(|w| + e)
struct DiophantineParams {
  double kappa = 1.0;
  double tau = 0.1;
  DiophantineVariant variant = DiophantineVariant::DC;
  double zeta = 0.1;

  void validate() const {
    if (!(kappa > 0.0) || !(tau > 0.0)) throw ConfigError("diophantine: kappa and tau must be positive");
    if (variant == DiophantineVariant::WDC && !(zeta > 0.0)) throw ConfigError("diophantine: WDC needs zeta > 0");
  }

  double bound(int norm) const {
    const double n = norm;
    switch (variant) {
      case DiophantineVariant::DC:
        return tau * std::pow(n, -kappa);
      case DiophantineVariant::WDC:
        return tau * std::exp(-zeta * std::pow(n, kappa));
      case DiophantineVariant::SDC:
        return tau / (n * std::pow(std::log(n + std::numbers::e), kappa));
    }
    return 0.0;
  }
};

struct DiophantineReport {
  Site worst_offender;
  double worst_distance = 0.0;
  double margin = std::numeric_limits<double>::infinity();  // min over w of dist / bound
  bool passes = true;                                        // margin >= 1
  double best_tau = std::numeric_limits<double>::infinity();  // largest tau for which the variant holds
};

/// Scan 0 < |w| <= search_bound (one of each pair +-w).
inline DiophantineReport check_diophantine(const BaseDynamics& shift, const DiophantineParams& params, int search_bound) {
  if (shift.kind() != DynamicsKind::shift) throw UnsupportedModel("check_diophantine: needs shift dynamics");
  if (search_bound < 1) throw ConfigError("check_diophantine: search bound must be >= 1");
  params.validate();
  const int nu = shift.lattice_dim();
  const int k = shift.torus_dim();
  const auto& alpha = shift.frequency_phases();
  DiophantineReport rep;
  const Volume box = Volume::cube(nu, search_bound);
  const std::size_t half = box.size() / 2;  // lexicographic order pairs w with -w around the centre
  for (std::size_t idx = half + 1; idx < box.size(); ++idx) {
    const Site w = box.site(idx);
    const int n = max_norm(w);
    double dist = 0.0;
    for (int c = 0; c < k; ++c) {
      Phase p;
      for (int i = 0; i < nu; ++i) p = p + static_cast<std::int64_t>(w[i]) * alpha[i * k + c];
      dist = std::max(dist, p.norm());
    }
    const double b = params.bound(n);
    const double ratio = dist / b;
    if (ratio < rep.margin || (ratio == rep.margin && n < max_norm(rep.worst_offender))) {
      rep.margin = ratio;
      rep.worst_offender = w;
      rep.worst_distance = dist;
    }
    rep.best_tau = std::min(rep.best_tau, params.tau * ratio);
  }
  rep.passes = rep.margin >= 1.0;
  return rep;
}

struct ContinuedFraction {
  std::vector<std::int64_t> partial_quotients;  // a_0, a_1, ...
  std::vector<std::int64_t> denominators;       // strictly increasing q_j
  bool terminated = false;                      // stopped before `count`
  std::string reason;                           // "rational" or "precision"
};

/// Denominators of the convergents p_j/q_j of alpha in (0, 1).
inline ContinuedFraction continued_fraction_denominators(double alpha, int count) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("continued fraction: alpha must lie in (0,1)");
  if (count < 1) throw ConfigError("continued fraction: count must be >= 1");
  ContinuedFraction cf;
  long double x = alpha;
  std::int64_t q_prev = 0, q = 1;  // q_{-1}, q_0
  cf.partial_quotients.push_back(0);
  cf.denominators.push_back(1);
  const long double precision_cap = 1.0L / std::sqrt(16.0L * std::numeric_limits<double>::epsilon());
  while (static_cast<int>(cf.denominators.size()) < count) {
    if (x < 1e-12L) {
      cf.terminated = true;
      cf.reason = "rational";
      break;
    }
    long double inv = 1.0L / x;
    long double a = std::floor(inv);
    long double rem = inv - a;
    if (1.0L - rem < 1e-12L * inv) {  // inv is an integer up to rounding
      a += 1.0L;
      rem = 0.0L;
    }
    const auto ai = static_cast<std::int64_t>(a);
    const std::int64_t q_next = ai * q + q_prev;
    if (static_cast<long double>(q_next) > precision_cap) {
      cf.terminated = true;
      cf.reason = "precision";
      break;
    }
    cf.partial_quotients.push_back(ai);
    q_prev = q;
    q = q_next;
    if (q > cf.denominators.back()) cf.denominators.push_back(q);
    x = rem;
  }
  if (!cf.terminated && x < 1e-12L && static_cast<int>(cf.denominators.size()) >= count) {
    cf.terminated = true;
    cf.reason = "rational";
  }
  return cf;
}

/// Scales N_j = ceil(K q_j^s), strictly increasing.
inline std::vector<int> scale_ladder(const std::vector<std::int64_t>& denominators, double k_factor, double s) {
  std::vector<int> out;
  for (auto q : denominators) {
    int n = static_cast<int>(std::ceil(k_factor * std::pow(static_cast<double>(q), s)));
    if (out.empty() || n > out.back()) out.push_back(n);
  }
  return out;
}

inline constexpr double golden_mean = 0.61803398874989484820;  // (sqrt 5 - 1) / 2
inline constexpr double silver_mean = 0.41421356237309504880;  // sqrt 2 - 1

}  // namespace qpdyn
