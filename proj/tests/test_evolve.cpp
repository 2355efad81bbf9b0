#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "qpdyn/evolve.hpp"

using namespace qpdyn;

namespace {

OperatorModel free_model() {
  return OperatorModel(Kernel::laplacian(1), HullFunction::trig_polynomial(1, {}), BaseDynamics::shift({{golden_mean}}), 1.0);
}

OperatorModel cosine_model(double g) {
  return OperatorModel(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), g);
}

SpectralData free_spectrum(int half) {
  return diagonalize(assemble_operator(free_model(), Volume::interval(-half, half), torus_point({0.0})));
}

}  // namespace

TEST(Diagonalize, OneByOne) {
  Eigen::MatrixXd m(1, 1);
  m << 3.0;
  auto s = diagonalize(m);
  EXPECT_EQ(s.eigenvalues[0], 3.0);
  EXPECT_EQ(std::abs(s.eigenvectors(0, 0)), 1.0);
}

TEST(Diagonalize, Diagonal) {
  Eigen::MatrixXd m = Eigen::Vector2d(2.0, 1.0).asDiagonal();
  auto s = diagonalize(m);
  EXPECT_EQ(s.eigenvalues[0], 1.0);
  EXPECT_EQ(s.eigenvalues[1], 2.0);
  EXPECT_EQ(std::abs(s.eigenvectors(1, 0)), 1.0);
  EXPECT_EQ(std::abs(s.eigenvectors(0, 1)), 1.0);
}

TEST(Diagonalize, DirichletLaplacian) {
  const int n = 50;
  auto s = diagonalize(assemble_operator(free_model(), Volume::interval(0, n - 1), torus_point({0.0})));
  for (int j = 1; j <= n; ++j) {
    // ascending order: index j-1 holds 2 cos(pi (n + 1 - j) / (n + 1))
    EXPECT_NEAR(s.eigenvalues[j - 1], 2.0 * std::cos(std::numbers::pi * (n + 1 - j) / (n + 1)), 1e-10);
  }
}

TEST(Diagonalize, DenseRouteResiduals) {
  OperatorModel m(Kernel::exp_decay(2, 1.0, 2), HullFunction::cosine(2), BaseDynamics::shift({{0.3, 0.7}, {0.21, 0.13}}), 2.0);
  auto op = assemble_operator(m, Volume::cube(2, 4), torus_point({0.1, 0.4}));
  EXPECT_GT(op.bandwidth(), 1u);
  auto s = diagonalize(op);
  for (Eigen::Index j = 1; j < s.eigenvalues.size(); ++j) EXPECT_LE(s.eigenvalues[j - 1], s.eigenvalues[j]);
  Eigen::MatrixXd gram = s.eigenvectors.transpose() * s.eigenvectors;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).norm(), 1e-10);
}

TEST(Propagator, TimeZeroIsIndicator) {
  auto s = free_spectrum(10);
  auto row = propagator_row(s, 0.0);
  for (Eigen::Index i = 0; i < row.size(); ++i) EXPECT_EQ(row[i], std::complex<double>(i == 10 ? 1.0 : 0.0, 0.0));
}

TEST(Propagator, BesselOracle) {
  const int half = 96;
  auto s = free_spectrum(half);
  const double t = 5.0;
  auto row = propagator_row(s, t);
  for (int n = -20; n <= 20; ++n)
    EXPECT_NEAR(std::abs(row[half + n]), std::abs(std::cyl_bessel_j(std::abs(n), 2.0 * t)), 1e-8) << n;
}

TEST(Propagator, DiagonalOperatorStaysPut) {
  std::map<Site, double> v;
  for (int i = -5; i <= 5; ++i) v[{i}] = std::sin(1.0 + i);
  auto m = OperatorModel::with_explicit_potential(Kernel::zero(1), v);
  auto s = diagonalize(assemble_operator(m, Volume::interval(-5, 5), {}));
  for (double t : {0.3, 7.0, 1e4}) {
    auto row = propagator_row(s, t);
    EXPECT_NEAR(std::abs(row[5]), 1.0, 1e-14);
    for (int i = 0; i < 11; ++i)
      if (i != 5) EXPECT_EQ(row[i], std::complex<double>(0.0, 0.0));
  }
}

TEST(Propagator, MatchesMatrixExponential) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OperatorModel m(Kernel::exp_decay(1, 0.8, 3), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), 3.0);
  for (int trial = 0; trial < 3; ++trial) {
    auto op = assemble_operator(m, Volume::interval(-99, 100), torus_point({u(rng)}));
    auto s = diagonalize(op);
    const double t = 0.5 + 10.0 * u(rng);
    Eigen::MatrixXcd e = (std::complex<double>(0.0, t) * op.dense().cast<std::complex<double>>()).exp();
    auto row = propagator_row(s, t);
    EXPECT_LT((row - e.row(static_cast<Eigen::Index>(s.origin)).transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Propagator, TimeSymmetry) {
  auto s = diagonalize(assemble_operator(cosine_model(2.0), Volume::interval(-30, 30), torus_point({0.2})));
  for (double t : {0.7, 3.0, 40.0}) {
    auto fwd = propagator_row(s, t);
    auto adj = propagator_row(s, -t);
    for (Eigen::Index i = 0; i < fwd.size(); ++i) EXPECT_EQ(std::norm(fwd[i]), std::norm(adj[i]));
  }
}

TEST(Propagator, ContourRouteAgrees) {
  auto op = assemble_operator(cosine_model(1.5), Volume::interval(-12, 12), torus_point({0.31}));
  auto s = diagonalize(op);
  for (double t : {0.0, 1.0, 4.0}) {
    auto a = propagator_row(s, t);
    auto b = contour_propagator_row(op, t);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6) << t;
  }
}

TEST(Transport, UnitarityAndInitialState) {
  auto s = diagonalize(assemble_operator(cosine_model(1.0), Volume::interval(-40, 40), torus_point({0.4})));
  auto rec = evolve(s, Kernel::laplacian(1), {0.0, 0.5, 2.0, 8.0, 32.0});
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    double total = 0.0;
    for (double p : rec.probabilities[k]) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0 + 1e-12);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-8);
  }
  for (std::size_t i = 0; i < rec.volume.size(); ++i) EXPECT_EQ(rec.probabilities[0][i], i == 40 ? 1.0 : 0.0);
  EXPECT_EQ(rec.truncation_bound[0], 0.0);
}

TEST(Transport, MomentsOfPointMasses) {
  TransportRecord rec;
  rec.volume = Volume::interval(-4, 4);
  rec.times = {0.0, 1.0};
  rec.probabilities = {std::vector<double>(9, 0.0), std::vector<double>(9, 0.0)};
  rec.probabilities[0][4] = 1.0;
  rec.probabilities[1][1] = 1.0;  // w = -3
  auto m = transport_moments(rec, 2.0);
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], 9.0);
  EXPECT_EQ(transport_moments(rec, 0.0)[1], 1.0);
}

TEST(Transport, FreeSecondMomentIsBallistic) {
  auto s = free_spectrum(100);
  std::vector<double> times;
  for (int i = 1; i <= 10; ++i) times.push_back(i);
  auto rec = evolve(s, Kernel::laplacian(1), times);
  auto m2 = transport_moments(rec, 2.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    // oracle: direct Bessel sum
    double oracle = 0.0;
    for (int n = 1; n <= 100; ++n) oracle += 2.0 * n * n * std::pow(std::cyl_bessel_j(n, 2.0 * times[k]), 2);
    EXPECT_NEAR(m2[k], oracle, 1e-9 * oracle);
    EXPECT_NEAR(m2[k], 2.0 * times[k] * times[k], 0.01 * 2.0 * times[k] * times[k]);
  }
}

TEST(Transport, MomentsIncreaseInPOffOrigin) {
  auto s = diagonalize(assemble_operator(cosine_model(0.5), Volume::interval(-60, 60), torus_point({0.1})));
  auto rec = evolve(s, Kernel::laplacian(1), {1.0, 5.0, 12.0});
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    double prev = -1.0;
    for (double p : {0.5, 1.0, 2.0, 3.0}) {
      double restricted = 0.0;
      for (std::size_t i = 0; i < rec.volume.size(); ++i) {
        int r = max_norm(rec.volume.site(i));
        if (r >= 1) restricted += rec.probabilities[k][i] * std::pow(r, p);
      }
      EXPECT_GE(restricted, prev);
      prev = restricted;
    }
  }
}

TEST(Ballistic, FreeDecayBeyondLightCone) {
  auto s = free_spectrum(120);
  auto rec = evolve(s, Kernel::laplacian(1), {5.0});
  const double v = Kernel::laplacian(1).velocity_bound();
  EXPECT_EQ(v, 4.0);
  auto fit = ballistic_check(rec, v);
  EXPECT_FALSE(fit.degenerate);
  EXPECT_FALSE(fit.box_too_small);
  EXPECT_GT(fit.c_fit, 0.0);
  // oracle: |J_n(10)|^2 beyond n = 20 falls faster than any fixed exponential
  const double r1 = std::log(std::pow(std::cyl_bessel_j(25, 10.0), 2) / std::pow(std::cyl_bessel_j(21, 10.0), 2)) / 4;
  const double r2 = std::log(std::pow(std::cyl_bessel_j(35, 10.0), 2) / std::pow(std::cyl_bessel_j(31, 10.0), 2)) / 4;
  EXPECT_LT(r2, r1);
  EXPECT_LT(r1, 0.0);
}

TEST(Ballistic, TimeZeroIsDegenerate) {
  auto rec = evolve(free_spectrum(20), Kernel::laplacian(1), {0.0});
  EXPECT_TRUE(ballistic_check(rec, 4.0).degenerate);
}

TEST(Ballistic, ZeroKernelIsDegenerate) {
  std::map<Site, double> v;
  for (int i = -10; i <= 10; ++i) v[{i}] = 0.1 * i;
  auto m = OperatorModel::with_explicit_potential(Kernel::zero(1), v);
  auto s = diagonalize(assemble_operator(m, Volume::interval(-10, 10), {}));
  auto rec = evolve(s, Kernel::zero(1), {1.0, 10.0});
  EXPECT_TRUE(ballistic_check(rec, Kernel::zero(1).velocity_bound()).degenerate);
}

TEST(Truncation, TimeZeroGapIsZero) {
  EXPECT_EQ(truncation_gap(free_model(), torus_point({0.0}), 0.0, Volume::interval(-4, 4), Volume::interval(-8, 8)), 0.0);
}

TEST(Truncation, FreeSmallGap) {
  EXPECT_LT(truncation_gap(free_model(), torus_point({0.0}), 2.0, Volume::interval(-16, 16), Volume::interval(-32, 32)), 1e-6);
}

TEST(Truncation, GapShrinksWithBox) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto m = cosine_model(1.0);
  const double t = 2.0, c = m.kernel().velocity_bound();
  const int h2 = static_cast<int>(2 * c * t), h4 = static_cast<int>(4 * c * t), big = static_cast<int>(8 * c * t);
  for (int trial = 0; trial < 5; ++trial) {
    auto theta = torus_point({u(rng)});
    const double small = truncation_gap(m, theta, t, Volume::interval(-h2, h2), Volume::interval(-big, big));
    const double large = truncation_gap(m, theta, t, Volume::interval(-h4, h4), Volume::interval(-big, big));
    EXPECT_LE(large, small);
  }
}

TEST(Truncation, DuhamelBoundDominatesGap) {
  auto m = cosine_model(0.7);
  auto theta = torus_point({0.25});
  auto inner = diagonalize(assemble_operator(m, Volume::interval(-15, 15), theta));
  auto outer = diagonalize(assemble_operator(m, Volume::interval(-60, 60), theta));
  auto times = log_spaced_times(0.25, 6.0, 40);
  auto rec = evolve(inner, m.kernel(), times);
  for (std::size_t k = 0; k < times.size(); ++k) EXPECT_LE(truncation_gap(inner, outer, times[k]), rec.truncation_bound[k] * 1.05 + 1e-12);
}
