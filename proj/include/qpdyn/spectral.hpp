#pragma once

#include <lapacke.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <complex>
#include <cstdio>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/model.hpp"

namespace qpdyn {

/// Full eigensystem of a finite-volume operator. Eigenvalues ascending,
/// eigenvectors are the orthonormal columns of `eigenvectors`.
struct SpectralData {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
  Volume volume;
  std::size_t origin = 0;  // index of the site 0 in `volume`

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
  double norm() const {
    return size() ? std::max(std::abs(eigenvalues[0]), std::abs(eigenvalues[eigenvalues.size() - 1])) : 0.0;
  }
  /// psi_j(0) for all j.
  Eigen::VectorXd origin_weights() const { return eigenvectors.row(origin).transpose(); }
  double distance_to_spectrum(std::complex<double> z) const {
    double d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < eigenvalues.size(); ++j) d = std::min(d, std::abs(z - eigenvalues[j]));
    return d;
  }
  /// Smallest gap between consecutive eigenvalues (infinity for a 1x1 matrix).
  double min_gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 1; j < eigenvalues.size(); ++j) g = std::min(g, eigenvalues[j] - eigenvalues[j - 1]);
    return g;
  }
};

namespace detail {

inline std::string fingerprint(const FiniteOperator& op) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (Eigen::Index i = 0; i < op.diagonal().size(); ++i) mix(op.diagonal()[i]);
  for (const auto& hop : op.hops()) {
    mix(static_cast<double>(hop.row));
    mix(static_cast<double>(hop.col));
    mix(hop.value);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "n=%zu fnv1a=%016llx", op.size(), static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

/// Full diagonalization. Tridiagonal operators (bandwidth 1, e.g. 1-D
/// Schroedinger) go through MRRR (dstemr), everything else through dsyevr.
/// Residuals ||H psi_j - lambda_j psi_j|| <= 1e-10 ||H|| are verified for
/// every column; a failure raises NumericalError with a matrix fingerprint.
inline SpectralData diagonalize(const FiniteOperator& op) {
  const auto n = static_cast<lapack_int>(op.size());
  if (n < 1) throw ConfigError("diagonalize: empty operator");
  SpectralData s;
  s.volume = op.volume();
  s.origin = op.volume().contains_origin() ? op.volume().origin_index() : 0;
  s.eigenvalues.resize(n);
  s.eigenvectors.resize(n, n);
  lapack_int info = 0;
  if (op.bandwidth() <= 1) {
    std::vector<double> d(op.diagonal().data(), op.diagonal().data() + n);
    std::vector<double> e(n, 0.0);
    for (const auto& h : op.hops()) e[h.row] = h.value;
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
    lapack_logical tryrac = 1;
    lapack_int m = 0;
    info = LAPACKE_dstemr(LAPACK_COL_MAJOR, 'V', 'A', n, d.data(), e.data(), 0.0, 0.0, 0, 0, &m,
                          s.eigenvalues.data(), s.eigenvectors.data(), n, n, isuppz.data(), &tryrac);
    if (info == 0 && m != n) info = -1000;
  } else {
    Eigen::MatrixXd a = op.dense();
    lapack_int m = 0;
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
    info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'A', 'U', n, a.data(), n, 0.0, 0.0, 0, 0, 0.0, &m,
                          s.eigenvalues.data(), s.eigenvectors.data(), n, isuppz.data());
    if (info == 0 && m != n) info = -1000;
  }
  if (info != 0)
    throw NumericalError("diagonalize: eigensolver failed (info=" + std::to_string(info) + ") on " +
                         detail::fingerprint(op));

  const double hnorm = s.norm();
  const double tol = 1e-10 * std::max(hnorm, std::numeric_limits<double>::min());
  for (lapack_int j = 0; j < n; ++j) {
    Eigen::VectorXd col = s.eigenvectors.col(j);
    Eigen::VectorXd r = op.apply(col) - s.eigenvalues[j] * col;
    if (!(r.norm() <= tol) && !(hnorm == 0.0 && r.norm() == 0.0))
      throw NumericalError("diagonalize: residual " + std::to_string(r.norm()) + " above tolerance for column " +
                           std::to_string(j) + " on " + detail::fingerprint(op));
  }
  const double w0 = s.origin_weights().squaredNorm();
  if (std::abs(w0 - 1.0) > 1e-10)
    throw NumericalError("diagonalize: sum_j psi_j(0)^2 = " + std::to_string(w0) + " on " + detail::fingerprint(op));
  return s;
}

inline SpectralData diagonalize(const Eigen::MatrixXd& symmetric) {
  return diagonalize(FiniteOperator::from_dense(symmetric));
}

}  // namespace qpdyn
