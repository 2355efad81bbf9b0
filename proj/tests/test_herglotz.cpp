#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <unsupported/Eigen/Polynomials>

#include "qpdyn/green.hpp"
#include "qpdyn/herglotz.hpp"

using namespace qpdyn;

namespace {

RationalFraction random_fraction(std::mt19937_64& rng, std::size_t d, bool positive, double total = 1.0) {
  std::uniform_real_distribution<double> pole(-3.0, 3.0), w(0.05, 1.0), sign(0.0, 1.0);
  std::vector<double> a(d), b(d);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    a[j] = w(rng) * (positive || sign(rng) < 0.5 ? 1.0 : -1.0);
    b[j] = pole(rng);
    s += std::abs(a[j]);
  }
  for (auto& x : a) x *= total / s;
  return RationalFraction::from_unsorted(a, b, 1e-9);
}

// int log|u| d mu_z in closed form: log|u| = log|c| + sum log|t - r| - sum log|t - b|,
// and the Poisson extension of log|t - r| is log|z - r| (Im r <= 0) or log|z - conj r|.
double log_average_closed_form(const RationalFraction& u, std::complex<double> z) {
  const auto d = u.degree();
  // numerator N(x) = sum_j a_j prod_{k != j} (x - b_k), coefficients low to high
  Eigen::VectorXd num = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    p[0] = 1.0;
    Eigen::Index deg = 0;
    for (std::size_t k = 0; k < d; ++k) {
      if (k == j) continue;
      for (Eigen::Index i = deg + 1; i > 0; --i) p[i] = p[i - 1] - u.poles()[k] * p[i];
      p[0] *= -u.poles()[k];
      ++deg;
    }
    num += u.masses()[j] * p;
  }
  double value = std::log(std::abs(num[num.size() - 1]));
  if (num.size() > 1) {
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(num);
    for (Eigen::Index i = 0; i < solver.roots().size(); ++i) {
      auto r = solver.roots()[i];
      if (r.imag() > 0) r = std::conj(r);
      value += std::log(std::abs(z - r));
    }
  }
  for (double b : u.poles()) value -= std::log(std::abs(z - b));
  return value;
}

// Measure of {|u| > l} from dense sampling between poles plus bisection at sign changes.
double sampled_superlevel(const RationalFraction& u, double l) {
  const auto& b = u.poles();
  std::vector<double> cuts{b.front() - 4.0 / l - 10.0};
  cuts.insert(cuts.end(), b.begin(), b.end());
  cuts.push_back(b.back() + 4.0 / l + 10.0);
  auto g = [&](double x) { return std::abs(u(x)) - l; };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    const int n = 200000;
    // cluster samples at the ends, where poles live
    auto at = [&](int k) {
      const double s = static_cast<double>(k) / n;
      return lo + (hi - lo) * (0.5 - 0.5 * std::cos(std::numbers::pi * s));
    };
    double prev = at(0), gprev = g(std::nextafter(prev, hi)), start = gprev > 0 ? lo : 0.0;
    bool in = gprev > 0;
    for (int k = 1; k <= n; ++k) {
      const double x = k == n ? std::nextafter(hi, lo) : at(k);
      const double gx = g(x);
      if ((gx > 0) != in) {
        double a = prev, c = x;
        for (int it = 0; it < 100; ++it) {
          const double m = 0.5 * (a + c);
          if ((g(m) > 0) == in)
            a = m;
          else
            c = m;
        }
        if (in)
          total += 0.5 * (a + c) - start;
        else
          start = 0.5 * (a + c);
        in = !in;
      }
      prev = x;
    }
    if (in) total += hi - start;
  }
  return total;
}

}  // namespace

TEST(Fraction, RejectsBadInput) {
  EXPECT_THROW(RationalFraction({0.5, 0.5}, {1.0, 1.0}), ConfigError);
  EXPECT_THROW(RationalFraction({0.5, 0.5}, {1.0, 0.0}), ConfigError);
  EXPECT_THROW(RationalFraction({0.8, -0.8}, {0.0, 1.0}), ConfigError);
  EXPECT_NO_THROW(RationalFraction({0.5, -0.5}, {0.0, 1.0}));
}

TEST(Fraction, MergesCoincidentPoles) {
  std::size_t merged = 0;
  auto u = RationalFraction::from_unsorted({0.25, 0.25, 0.5}, {1.0, -1.0, 1.0}, 1e-12, &merged);
  EXPECT_EQ(merged, 1u);
  ASSERT_EQ(u.degree(), 2u);
  EXPECT_DOUBLE_EQ(u.poles()[0], -1.0);
  EXPECT_DOUBLE_EQ(u.masses()[1], 0.75);
}

TEST(IntervalSetOps, UnionIntersectionMeasure) {
  IntervalSet a({{0, 2}, {1, 3}, {5, 6}});
  EXPECT_EQ(a.intervals().size(), 2u);
  EXPECT_DOUBLE_EQ(a.measure(), 4.0);
  IntervalSet b({{2.5, 5.5}});
  EXPECT_DOUBLE_EQ(set_intersection(a, b).measure(), 1.0);
  EXPECT_DOUBLE_EQ(set_union(a, b).measure(), 6.0);
  EXPECT_TRUE(a.contains(1.5));
  EXPECT_FALSE(a.contains(4.0));
  EXPECT_NEAR(IntervalSet::everything().poisson_measure({0.3, 0.7}), 1.0, 1e-15);
  EXPECT_NEAR(IntervalSet({{0, 1e300}}).poisson_measure({0.0, 2.0}), 0.5, 1e-15);
}

TEST(Superlevel, SinglePole) {
  RationalFraction u({1.0}, {0.4});
  for (double l : {0.01, 0.5, 3.0, 1e4}) EXPECT_NEAR(superlevel_measure(u, l), 2.0 / l, 1e-12 * (2.0 / l));
  auto up = superlevel_set(u, 2.0, LevelSide::above);
  ASSERT_EQ(up.intervals().size(), 1u);
  EXPECT_NEAR(up.intervals()[0].first, 0.4, 1e-15);
  EXPECT_NEAR(up.intervals()[0].second, 0.9, 1e-15);
}

TEST(Superlevel, BooleIdentityPositiveMasses) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> deg(1, 12);
  std::uniform_real_distribution<double> lam(-3.0, 2.0), tot(0.1, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    auto u = random_fraction(rng, deg(rng), true, tot(rng));
    const double l = std::pow(10.0, lam(rng));
    const double m = superlevel_set(u, l, LevelSide::above).measure();
    worst = std::max(worst, std::abs(m - u.total_mass() / l));
    EXPECT_NEAR(m, u.total_mass() / l, 1e-10) << "trial " << trial;
    EXPECT_NEAR(superlevel_set(u, l, LevelSide::below).measure(), u.total_mass() / l, 1e-10);
  }
  RecordProperty("worst_boole_error", std::to_string(worst));
}

TEST(Superlevel, SignedBooleBoundAndMonotone) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> deg(1, 10);
  std::uniform_real_distribution<double> lam(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    auto u = random_fraction(rng, deg(rng), false);
    const double l = std::pow(10.0, lam(rng));
    const double m = superlevel_measure(u, l);
    EXPECT_LE(m, 4.0 * u.total_mass() / l * (1 + 1e-12));
    worst = std::max(worst, m * l / u.total_mass());
    EXPECT_GE(m + 1e-12, superlevel_measure(u, 1.5 * l));
    EXPECT_GE(superlevel_measure(u, 0.5 * l) + 1e-12, m);
  }
  EXPECT_LE(worst, 4.0);
  RecordProperty("worst_ratio", std::to_string(worst));
}

TEST(Superlevel, MatchesSamplingOracle) {
  // close poles with tiny cancelling masses: the set is a few small pole neighbourhoods
  RationalFraction close({1e-3, -1e-3, 5e-4}, {0.0, 1e-3, 2.0});
  for (double l : {1e-2, 1.0, 10.0}) EXPECT_NEAR(superlevel_measure(close, l), sampled_superlevel(close, l), 1e-9);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 6; ++trial) {
    auto u = random_fraction(rng, 6, false);
    for (double l : {0.05, 0.7}) EXPECT_NEAR(superlevel_measure(u, l), sampled_superlevel(u, l), 1e-8);
  }
}

TEST(Superlevel, ZeroMassesCarryNoSet) {
  RationalFraction u({0.0, 0.5, 0.0}, {-1.0, 0.0, 1.0});
  EXPECT_NEAR(superlevel_measure(u, 0.25), 4.0, 1e-12);
  RationalFraction zero({0.0}, {0.0});
  EXPECT_EQ(superlevel_measure(zero, 1e-9), 0.0);
}

TEST(Roots, LevelRootsSolve) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    auto u = random_fraction(rng, 8, false);
    for (double l : {-0.3, 0.0, 0.02, 2.0}) {
      RootDiagnostics diag;
      for (double r : level_roots(u, l, &diag)) {
        const double scale = std::abs(u.derivative(r)) * std::max(1.0, std::abs(r));
        EXPECT_LE(std::abs(u(r) - l), 1e-12 * scale + 1e-13) << "root " << r << " level " << l;
      }
    }
  }
}

TEST(Poisson, Normalization) {
  RationalFraction u({0.3, -0.2}, {0.0, 1.0});
  auto one = poisson_average(u, {0.2, 0.5}, [](double) { return 1.0; });
  EXPECT_NEAR(one.value, 1.0, 1e-12);
  // a far pole looks like a constant near z
  RationalFraction far({1e-3}, {-1e6});
  auto r = poisson_average(far, {0.0, 1e-3}, [](double a) { return std::log(a); }, 1e-10);
  EXPECT_NEAR(r.value, std::log(1e-9), 1e-6);
}

TEST(Poisson, LogAverageMatchesClosedForm) {
  RationalFraction single({1.0}, {0.7});
  const std::complex<double> z{0.7, 1.0};
  EXPECT_NEAR(std::log(std::abs(single(z))), 0.0, 1e-15);
  auto q = poisson_average(single, z, [](double a) { return std::log(a); });
  EXPECT_NEAR(q.value, log_average_closed_form(single, z), 1e-7);
  EXPECT_NEAR(q.value, 0.0, 1e-7);

  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> xs(-3.0, 3.0), ys(-2.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    auto u = random_fraction(rng, 1 + trial % 6, false);
    const std::complex<double> zz{xs(rng), std::pow(10.0, ys(rng))};
    auto avg = poisson_average(u, zz, [](double a) { return std::log(a); });
    EXPECT_NEAR(avg.value, log_average_closed_form(u, zz), 1e-7) << "trial " << trial;
    // subharmonic majorization
    EXPECT_LE(std::log(std::abs(u(zz))), avg.value + 1e-6);
  }
}

TEST(Poisson, PoissonMeasureOfSuperlevelSetAgreesWithIndicatorAverage) {
  RationalFraction u({0.4, -0.3}, {-0.5, 0.8});
  const std::complex<double> z{0.1, 0.6};
  const double exact = superlevel_set(u, 0.5).poisson_measure(z);
  // jumps of the indicator are not breakpoints, so only coarse agreement is expected
  auto q = poisson_average(u, z, [](double a) { return a > 0.5 ? 1.0 : 0.0; }, 1e-9);
  EXPECT_NEAR(q.value, exact, 1e-5);
}

TEST(Lemma, SinglePoleExample) {
  FractionFamily fam{{{RationalFraction({0.005}, {0.0})}}};
  const std::complex<double> z{0.0, 1.0};
  auto c = lemma_main_bound(fam, 0.01, 1.0, z);
  EXPECT_NEAR(c.hypothesis_measure, 1.0, 1e-12);
  ASSERT_TRUE(c.hypothesis_met);
  EXPECT_NEAR(c.lhs, 0.005, 1e-15);
  EXPECT_TRUE(c.general_applies);
  EXPECT_TRUE(c.sharp_applies);
  EXPECT_NEAR(c.rhs_general, 4.0 * 0.1, 1e-14);
  EXPECT_NEAR(c.rhs_sharp, 4.0 * std::pow(0.01, 1.0 - 1.0 / std::numbers::pi), 1e-14);
  EXPECT_DOUBLE_EQ(c.rhs, c.rhs_sharp);
  EXPECT_TRUE(c.holds);
}

TEST(Lemma, ZeroFamily) {
  FractionFamily fam{{{RationalFraction({0.0}, {0.0}), RationalFraction({0.0}, {1.0})},
                      {RationalFraction({0.0}, {2.0}), RationalFraction({0.0}, {3.0})}}};
  auto c = lemma_main_bound(fam, 0.3, 0.2, {0.0, 0.5});
  EXPECT_EQ(c.hypothesis_measure, 0.0);
  EXPECT_EQ(c.lhs, 0.0);
  EXPECT_TRUE(c.holds);
}

TEST(Lemma, UnmetHypothesisMakesNoClaim) {
  FractionFamily fam{{{RationalFraction({0.5}, {0.0})}}};
  auto c = lemma_main_bound(fam, 0.1, 0.5, {0.0, 1.0});  // measure 10
  EXPECT_FALSE(c.hypothesis_met);
  EXPECT_FALSE(c.general_applies);
  EXPECT_TRUE(std::isinf(c.rhs));
}

TEST(Lemma, RandomFamiliesSatisfyBound) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> deg(1, 6), verts(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0), pole(-3.0, 3.0);
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = 3, V = verts(rng);
    const double eps = std::pow(10.0, -3.0 * unit(rng));
    // shrink the masses until the exceedance set has measure <= 1
    FractionFamily fam;
    double measure = 2.0;
    for (double scale = 1.0; measure > 1.0; scale *= 0.5) {
      fam.u.clear();
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<RationalFraction> row;
        for (std::size_t v = 0; v < V; ++v) row.push_back(random_fraction(rng, deg(rng), false, scale * unit(rng)));
        fam.u.push_back(std::move(row));
      }
      measure = fam.exceedance_set(eps).measure();
    }
    const double delta = std::max(measure, 1e-6);
    const double y = (2.0 * delta / std::numbers::pi) * (1.0 + 4.0 * unit(rng)) * (unit(rng) < 0.5 ? 1.0 : -1.0);
    const std::complex<double> z{pole(rng), y};
    auto c = lemma_main_bound(fam, eps, delta, z);
    ASSERT_TRUE(c.hypothesis_met);
    ASSERT_TRUE(c.general_applies);
    EXPECT_TRUE(c.holds) << "trial " << trial << " lhs " << c.lhs << " rhs " << c.rhs;
    worst = std::max(worst, c.lhs / c.rhs);
    ++checked;
    auto h = half_coverage_selector(fam, eps, z);
    EXPECT_TRUE(h.ok) << "trial " << trial;
  }
  EXPECT_EQ(checked, 1000);
  RecordProperty("worst_lhs_over_rhs", std::to_string(worst));
}

TEST(Lemma, SharpLineForSingleFamilies) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    FractionFamily fam{{{random_fraction(rng, 1 + trial % 5, false, unit(rng))}}};
    const double eps = std::pow(10.0, -2.0 * unit(rng));
    const double measure = fam.exceedance_set(eps).measure();
    if (!(measure <= 1.0)) continue;
    const double delta = std::max(measure, 1e-6);
    const std::complex<double> z{unit(rng) - 0.5, (delta / std::numbers::pi) * (1.0 + 3.0 * unit(rng))};
    auto c = lemma_main_bound(fam, eps, delta, z);
    ASSERT_TRUE(c.sharp_applies);
    EXPECT_TRUE(c.holds_sharp) << "trial " << trial;
  }
}

TEST(HalfCoverage, TrivialCases) {
  FractionFamily one{{{RationalFraction({0.5}, {0.0})}}};
  auto h = half_coverage_selector(one, 0.5, {0.0, 1.0});
  EXPECT_EQ(h.index, 0u);
  FractionFamily two{{{RationalFraction({0.5}, {0.0})}, {RationalFraction({0.0}, {0.0})}}};
  h = half_coverage_selector(two, 0.5, {0.0, 1.0});
  EXPECT_EQ(h.index, 1u);
  EXPECT_NEAR(h.coverage[1], 1.0, 1e-15);
  EXPECT_TRUE(h.ok);
}

TEST(HalfCoverage, MatchesDirectPoissonIntegration) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    FractionFamily fam;
    for (int m = 0; m < 2; ++m)
      fam.u.push_back({random_fraction(rng, 4, false, 0.3), random_fraction(rng, 3, false, 0.3)});
    const double eps = 0.2;
    const std::complex<double> z{unit(rng) - 0.5, 0.5 + unit(rng)};
    auto h = half_coverage_selector(fam, eps, z);
    for (std::size_t m = 0; m < 2; ++m) {
      // midpoint rule in phi, t = x + y tan(phi)
      const int n = 400000;
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double phi = -std::numbers::pi / 2 + std::numbers::pi * (k + 0.5) / n;
        const double t = z.real() + z.imag() * std::tan(phi);
        double mx = 0.0;
        for (const auto& f : fam.u[m]) mx = std::max(mx, std::abs(f(t)));
        acc += mx <= eps ? 1.0 : 0.0;
      }
      EXPECT_NEAR(h.coverage[m], acc / n, 5e-5);
    }
    EXPECT_GE(h.coverage[h.index], h.coverage[1 - h.index]);
  }
}

TEST(GreenBridge, FractionReproducesGreenFunction) {
  OperatorModel model(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), 2.5);
  const Volume box = Volume::interval(-12, 15);
  const auto s = diagonalize(assemble_operator(model, box, torus_point({0.21})));
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> e(-6.0, 6.0);
  for (std::size_t v : {std::size_t{0}, std::size_t{7}, box.size() - 1}) {
    auto u = from_green(s, v);
    EXPECT_LE(u.total_mass(), 1.0 + 1e-12);
    for (int k = 0; k < 5; ++k) {
      const cplx z{e(rng), 0.1};
      const auto g = green_row(s, z);
      EXPECT_NEAR(std::abs(u(z) - g.row[static_cast<Eigen::Index>(v)]), 0.0, 1e-11);
    }
  }
}

TEST(GreenBridge, ExceedanceSetMatchesGridScan) {
  OperatorModel model(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), 3.0);
  const auto theta = torus_point({0.33});
  const std::vector<Volume> boxes{Volume::interval(-8, 10), Volume::interval(-11, 7)};
  const double eps = 1e-3;
  std::vector<SpectralData> spectra;
  for (const auto& b : boxes) spectra.push_back(diagonalize(assemble_operator(model, b, theta)));
  auto fam = family_from_volumes(spectra, model.kernel(), eps);
  EXPECT_EQ(fam.M(), 2u);
  const double exact = fam.exceedance_set(eps).measure();
  ResonantScanOptions opt;
  opt.check_refinement = false;
  auto scan = resonant_measure(model, theta, boxes, eps, 1e-4, opt);
  EXPECT_GT(exact, 0.0);
  EXPECT_NEAR(scan.delta_hat, exact, 1e-3 * exact + 40 * scan.step);
}
