#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>
#include <vector>

#include "qpdyn/error.hpp"

namespace qpdyn {

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule via Newton iteration on P_n.
inline GaussRule gauss_legendre(int n) {
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  int intervals = 0;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule.
inline constexpr std::array<double, 8> kronrod_x{0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                                 0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kronrod_w{0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> gauss7_w{0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                                0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename F>
QuadratureResult gk15(F& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const double fc = f(c);
  double k = fc * kronrod_w[7], g = fc * gauss7_w[3];
  for (int j = 0; j < 7; ++j) {
    const double x = h * kronrod_x[j];
    const double s = f(c - x) + f(c + x);
    k += kronrod_w[j] * s;
    if (j % 2 == 1) g += gauss7_w[j / 2] * s;
  }
  return {k * h, std::abs((k - g) * h), 1};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) over [a, b] split first at the given
/// breakpoints (integrable singularities belong there). Throws
/// NumericalError if the absolute tolerance is not met within `max_intervals`.
template <typename F>
QuadratureResult integrate_adaptive(F&& f, double a, double b, std::vector<double> breakpoints, double abs_tol,
                                    int max_intervals = 20000) {
  struct Piece {
    double a, b, value, error;
    bool operator<(const Piece& o) const { return error < o.error; }
  };
  breakpoints.push_back(a);
  breakpoints.push_back(b);
  std::sort(breakpoints.begin(), breakpoints.end());
  std::priority_queue<Piece> heap;
  double total = 0.0, err = 0.0, frozen = 0.0, frozen_err = 0.0;
  int count = 0;
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    double lo = std::max(a, breakpoints[i]), hi = std::min(b, breakpoints[i + 1]);
    if (!(hi > lo)) continue;
    auto r = detail::gk15(f, lo, hi);
    heap.push({lo, hi, r.value, r.error});
    total += r.value;
    err += r.error;
    ++count;
  }
  while (err > abs_tol && !heap.empty()) {
    if (count >= max_intervals)
      throw NumericalError("adaptive quadrature: tolerance " + std::to_string(abs_tol) + " not reached (error " +
                           std::to_string(err) + ")");
    Piece p = heap.top();
    heap.pop();
    const double mid = 0.5 * (p.a + p.b);
    if (!(mid > p.a && mid < p.b)) {  // interval cannot be split further
      frozen += p.value;
      frozen_err += p.error;
      err -= p.error;
      continue;
    }
    auto left = detail::gk15(f, p.a, mid);
    auto right = detail::gk15(f, mid, p.b);
    total += left.value + right.value - p.value;
    err += left.error + right.error - p.error;
    heap.push({p.a, mid, left.value, left.error});
    heap.push({mid, p.b, right.value, right.error});
    ++count;
  }
  // re-sum to avoid drift from incremental updates
  double sum = frozen, esum = frozen_err;
  int n = 0;
  while (!heap.empty()) {
    sum += heap.top().value;
    esum += heap.top().error;
    heap.pop();
    ++n;
  }
  return {sum, esum, n};
}

}  // namespace qpdyn
