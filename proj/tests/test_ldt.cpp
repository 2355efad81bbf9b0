#include <gtest/gtest.h>

#include <random>

#include "qpdyn/ldt.hpp"

using namespace qpdyn;

namespace {

OperatorModel free_model() {
  return OperatorModel(Kernel::laplacian(1), HullFunction::trig_polynomial(1, {}), BaseDynamics::shift({{golden_mean}}), 1.0);
}

OperatorModel cosine_model(double g) {
  return OperatorModel(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), g);
}

// an eigenvalue from the middle of a large box: within exponentially small distance of the spectrum
double bulk_energy(const OperatorModel& m) {
  auto s = diagonalize(assemble_operator(m, Volume::interval(-100, 100), torus_point({0.1})));
  return s.eigenvalues[100];
}

Eigen::Matrix2d direct_product(const OperatorModel& m, double e, const TorusPoint& theta, std::size_t n) {
  Eigen::Matrix2d phi = Eigen::Matrix2d::Identity();
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Matrix2d s;
    s << e - m.potential(Site{static_cast<int>(i)}, theta), -1.0, 1.0, 0.0;
    phi = s * phi;
  }
  return phi;
}

}  // namespace

TEST(Transfer, ZeroStepsIsIdentity) {
  auto t = transfer_matrix(cosine_model(2.0), 0.3, torus_point({0.2}), 0);
  EXPECT_TRUE(t.matrix().isApprox(Eigen::Matrix2d::Identity(), 1e-15));
  EXPECT_EQ(t.log_norm(), 0.0);
}

TEST(Transfer, FreeRotationHasPeriodFour) {
  Eigen::Matrix2d rot;
  rot << 0.0, -1.0, 1.0, 0.0;
  Eigen::Matrix2d p = Eigen::Matrix2d::Identity();
  for (std::size_t n = 0; n <= 9; ++n) {
    auto t = transfer_matrix(free_model(), 0.0, torus_point({0.4}), n);
    EXPECT_LT((t.matrix() - p).norm(), 1e-14) << n;
    EXPECT_NEAR(t.log_norm(), 0.0, 1e-14);
    p = rot * p;
  }
  EXPECT_LT((transfer_matrix(free_model(), 0.0, torus_point({0.4}), 4).matrix() - Eigen::Matrix2d::Identity()).norm(),
            1e-14);
}

TEST(Transfer, MatchesDirectProduct) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> e(-4.0, 4.0), th(0.0, 1.0);
  auto m = cosine_model(1.3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto theta = torus_point({th(rng)});
    const double en = e(rng);
    const std::size_t n = 1 + trial % 40;
    const Eigen::Matrix2d d = direct_product(m, en, theta, n);
    auto t = transfer_matrix(m, en, theta, n);
    EXPECT_LT((t.matrix() - d).norm(), 1e-11 * d.norm()) << trial;
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(d);
    EXPECT_NEAR(t.log_norm(), std::log(svd.singularValues()[0]), 1e-11);
  }
}

TEST(Transfer, UnitDeterminant) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> e(-6.0, 6.0), th(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(0, 1000);
  auto m = cosine_model(2.5);
  for (int trial = 0; trial < 2000; ++trial) {
    auto t = transfer_matrix(m, e(rng), torus_point({th(rng)}), len(rng));
    EXPECT_LE(std::abs(t.det() - 1.0), 1e-9);
  }
}

TEST(Transfer, LongProductsStayFinite) {
  auto t = transfer_matrix(cosine_model(10.0), 0.1, torus_point({0.3}), 20000);
  EXPECT_TRUE(std::isfinite(t.log_norm()));
  EXPECT_GT(t.log_norm(), 700.0);
  EXPECT_NEAR(t.det(), 1.0, 1e-9);
}

TEST(Transfer, RejectsLongRangeKernel) {
  OperatorModel m(Kernel::exp_decay(1, 1.0, 3), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), 1.0);
  EXPECT_THROW(transfer_matrix(m, 0.0, torus_point({0.1}), 5), UnsupportedModel);
}

TEST(Lyapunov, FreeModelInsideBandVanishes) {
  for (double e : {0.0, 0.7, 1.5, -1.9}) {
    auto l = lyapunov(free_model(), e, 10000, 4);
    EXPECT_GE(l.gamma, 0.0);
    EXPECT_LT(l.gamma, 1e-2) << e;
  }
  EXPECT_LT(lyapunov(free_model(), 0.0, 1000, 1).gamma, 1e-3);
}

TEST(Lyapunov, StrongCouplingMatchesLogCoupling) {
  for (double g : {2.0, 4.0, 10.0}) {
    auto m = cosine_model(g);
    const double e = bulk_energy(m);
    auto a = lyapunov(m, e, 5000, 16, 3);
    auto b = lyapunov(m, e, 10000, 16, 3);
    // Cauchy check between the two lengths, then the comparison
    EXPECT_LT(std::abs(a.gamma - b.gamma), 0.01 * b.gamma);
    EXPECT_NEAR(b.gamma, std::log(g), 0.05 * std::log(g)) << g;
  }
}

TEST(Lyapunov, AverageDecreasesUnderDoubling) {
  auto m = cosine_model(1.5);
  const double e = bulk_energy(m);
  double prev = std::numeric_limits<double>::infinity(), prev_err = 0.0;
  for (std::size_t n = 16; n <= 1024; n *= 2) {
    auto s = sample_log_norms(m, e, n, 2000, 5);
    EXPECT_LE(s.gamma_hat(), prev + 3.0 * (s.gamma_stderr() + prev_err)) << n;
    prev = s.gamma_hat();
    prev_err = s.gamma_stderr();
  }
}

TEST(LargeDeviation, ThresholdEdgeCases) {
  auto m = cosine_model(2.0);
  auto zero = ld_probability(m, 0.2, 64, 0.0, 200);
  EXPECT_EQ(zero.p_hat, 1.0);
  // log||Phi_N|| <= N log(1 + |E| + sup|V|), so deviations beyond that are impossible
  const double cap = std::log(1.0 + 0.2 + m.potential_sup_bound()) + 1.0;
  auto huge = ld_probability(m, 0.2, 64, cap, 200);
  EXPECT_EQ(huge.p_hat, 0.0);
  EXPECT_TRUE(huge.below_resolution);
}

TEST(LargeDeviation, MonotoneInThresholdOnSharedSamples) {
  auto m = cosine_model(1.5);
  auto s = sample_log_norms(m, bulk_energy(m), 128, 3000, 9);
  const double gamma = s.gamma_hat();
  double prev = 1.0;
  for (double zeta = 0.0; zeta < 0.5; zeta += 0.005) {
    const double p = s.deviation_fraction(zeta, gamma);
    EXPECT_LE(p, prev);
    prev = p;
  }
}

TEST(LargeDeviation, TailShrinksWithScale) {
  // at g = 10 every deviation fraction is already 0 at 10^4 phases; g = 1.5 keeps the tail resolvable
  auto m = cosine_model(1.5);
  const double e = bulk_energy(m);
  const double gamma = lyapunov(m, e, 10000, 16, 1).gamma;
  std::vector<LdtEstimate> ladder;
  for (std::size_t n = 32; n <= 1024; n *= 2) ladder.push_back(ld_probability(m, e, n, gamma / 10.0, 10000, 1));
  for (std::size_t j = 1; j < ladder.size(); ++j) {
    EXPECT_LE(ladder[j].p_hat, ladder[j - 1].p_hat);
    if (ladder[j - 1].p_hat > 0.0) EXPECT_LT(ladder[j].p_hat, ladder[j - 1].p_hat);
  }
  EXPECT_GT(ladder.front().p_hat, 0.1);
  EXPECT_TRUE(ladder.back().below_resolution);
  auto fit = fit_ld_exponent(ladder);
  ASSERT_TRUE(fit.sufficient);
  EXPECT_GT(fit.rho, 0.0);
  EXPECT_GT(fit.r, 0.0);
}

TEST(LargeDeviation, FitRecoversSyntheticExponent) {
  std::vector<LdtEstimate> ladder;
  for (std::size_t n : {8u, 16u, 32u, 64u, 128u, 2048u}) {
    LdtEstimate e;
    e.n = n;
    e.samples = 100000;
    e.p_hat = std::exp(-0.3 * std::pow(double(n), 0.5));
    ladder.push_back(e);
  }
  auto fit = fit_ld_exponent(ladder);
  EXPECT_EQ(fit.used, 5u);  // p at N = 2048 is below 10/S
  EXPECT_NEAR(fit.rho, 0.5, 1e-12);
  EXPECT_NEAR(fit.r, 0.3, 1e-12);
}

TEST(Presets, TableValues) {
  auto p = ldt_presets(1, 1.0);
  EXPECT_DOUBLE_EQ(p[0].rho, 1.0);
  EXPECT_TRUE(std::isnan(p[2].rho));
  auto q = ldt_presets(2, 1.05);
  EXPECT_DOUBLE_EQ(q[0].rho, 1.0 / (8.0 * 1.05 * 1.05));
  const auto two = std::find_if(q.begin(), q.end(), [](const LdtPreset& x) { return x.name == "shift-2d-two-frequency"; });
  ASSERT_NE(two, q.end());
  EXPECT_NEAR(two->rho, 0.01, 1e-12);
  EXPECT_DOUBLE_EQ(q.back().rho, 1.0 / (4.0 * 8.0 * 1.05 * 1.05));
}

TEST(Bridge, FourIntervalsAndDegenerateThreshold) {
  auto m = cosine_model(2.0);
  auto b = ld_to_green_bridge(m, 0.1, torus_point({0.3}), 2, 1e-3, 1.0);
  ASSERT_EQ(b.volumes.size(), 4u);
  EXPECT_EQ(b.volumes[0].lo()[0], -1);
  EXPECT_EQ(b.volumes[0].hi()[0], 3);
  EXPECT_EQ(b.volumes[3].lo()[0], 0);
  EXPECT_EQ(b.volumes[3].hi()[0], 2);
  // r = 0 gives threshold 1, which no kernel weight exceeds
  auto d = ld_to_green_bridge(m, 0.1, torus_point({0.3}), 2, 0.0, 1.0);
  EXPECT_TRUE(d.degenerate);
  EXPECT_FALSE(d.member);
}

TEST(Bridge, ResonantPhasesAreRare) {
  auto m = cosine_model(2.0);
  const double e = bulk_energy(m);
  const double gamma = lyapunov(m, e, 10000, 16, 1).gamma;
  std::vector<LdtEstimate> ladder;
  for (std::size_t n = 16; n <= 256; n *= 2) ladder.push_back(ld_probability(m, e, n, gamma / 10.0, 10000, 1));
  auto fit = fit_ld_exponent(ladder);
  ASSERT_TRUE(fit.sufficient);
  const HaltonSampler phases(1, 7);
  for (int n : {16, 32}) {
    int members = 0;
    const int total = 300;
    for (int i = 1; i <= total; ++i) members += ld_to_green_bridge(m, e, phases.point(i), n, fit.r, fit.rho).member;
    const double bound = 2.0 * std::exp(-fit.r * std::pow(double(n), fit.rho));
    EXPECT_LE(double(members) / total, bound) << n;
  }
}

TEST(Escape, GeometricScales) {
  std::vector<long long> pow2;
  for (int j = 1; j <= 20; ++j) pow2.push_back(1LL << j);
  auto e = moment_bound_from_escape(pow2, 1.0, 0.5, EscapeRegime::diophantine, 2.0, 1.0);
  EXPECT_DOUBLE_EQ(e.exponent, 2.0);
  EXPECT_DOUBLE_EQ(e.growth_constant, 2.0);
  auto s = moment_bound_from_escape(pow2, 0.5, 0.5, EscapeRegime::subsequence, 1.0);
  EXPECT_DOUBLE_EQ(s.exponent, 2.0);
  EXPECT_NEAR(s.times[2], std::exp(0.5 * std::sqrt(8.0) / 3.0), 1e-12);
  auto w = moment_bound_from_escape(pow2, 0.5, 0.5, EscapeRegime::weak, 1.0);
  EXPECT_TRUE(w.sub_power_law);
  EXPECT_THROW(moment_bound_from_escape({3, 3, 5}, 1.0, 1.0, EscapeRegime::diophantine, 1.0), ConfigError);
  EXPECT_THROW(moment_bound_from_escape({5, 3}, 1.0, 1.0, EscapeRegime::diophantine, 1.0), ConfigError);
}

TEST(Escape, FibonacciScalesHaveUnitGrowthExponent) {
  std::vector<long long> fib{1, 2};
  while (fib.size() < 30) fib.push_back(fib[fib.size() - 1] + fib[fib.size() - 2]);
  auto e = moment_bound_from_escape(fib, 0.5, 1.0, EscapeRegime::diophantine, 1.0, 1.0);
  EXPECT_GT(e.kappa_tail, 1.0);
  EXPECT_LT(e.kappa_tail, 1.1);
  EXPECT_LE(e.growth_constant, 2.0);
  EXPECT_DOUBLE_EQ(e.exponent, 2.0);
}

TEST(Escape, SyntheticSaturatingDistributionStaysBelowEnvelope) {
  // P_t(w) as large as the escape assumption and the ballistic bound allow,
  // filled from the outside in, the remaining mass at the origin
  const std::vector<long long> scales{2, 4, 8, 16, 32, 64, 128, 256};
  const double r = 1.0, rho = 1.0, p = 2.0;
  auto env = moment_bound_from_escape(scales, rho, r, EscapeRegime::diophantine, p, 1.0);
  auto cap = [&](double t, long long w) {
    double c = std::min(1.0, std::exp(-(double(w) - t)));  // ballistic
    for (long long n : scales)
      if (w >= n && t <= std::exp(r * std::pow(double(n), rho))) c = std::min(c, std::exp(-r * std::pow(double(n), rho)));
    return c;
  };
  double worst = 0.0;
  const double tmax = std::exp(r * std::pow(double(scales[4]), rho));
  for (double t = 1.0; t <= tmax; t *= 1.5) {
    double mass = 0.0, moment = 0.0;
    for (long long w = 2000; w >= 1; --w) {
      double pw = 2.0 * cap(t, w);  // +-w
      if (mass + pw > 1.0) pw = 1.0 - mass;
      mass += pw;
      moment += pw * std::pow(double(w), p);
    }
    worst = std::max(worst, moment / env.envelope(t));
  }
  EXPECT_LT(worst, 200.0);
  RecordProperty("worst_moment_over_envelope", std::to_string(worst));
}
