#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qpdyn/config.hpp"
#include "qpdyn/error.hpp"
#include "qpdyn/evolve.hpp"
#include "qpdyn/green.hpp"
#include "qpdyn/ldt.hpp"
#include "qpdyn/lowdiscrepancy.hpp"
#include "qpdyn/model.hpp"
#include "qpdyn/output.hpp"
#include "qpdyn/parallel.hpp"
#include "qpdyn/spectral.hpp"

namespace qpdyn {

/// What every subcommand hands back to the CLI.
struct RunResult {
  json summary = json::object();
  bool hypothesis_unmet = false;
};

namespace harness_detail {

inline std::vector<std::string> site_columns(const char* prefix, int nu) {
  std::vector<std::string> c;
  for (int i = 1; i <= nu; ++i) c.push_back(prefix + std::to_string(i));
  return c;
}

inline void append_site(std::vector<std::string>& row, const Site& w) {
  for (int x : w) row.push_back(fmt(x));
}

inline bool in_union(const std::vector<Volume>& vols, const Site& w) {
  for (const auto& v : vols)
    if (v.contains(w)) return true;
  return false;
}

inline Volume hull_of(const std::vector<Volume>& vols) {
  Volume h = vols.front();
  for (std::size_t i = 1; i < vols.size(); ++i) h = Volume::hull(h, vols[i]);
  return h;
}

inline std::size_t union_size(const std::vector<Volume>& vols) {
  const Volume h = hull_of(vols);
  std::size_t n = 0;
  for (std::size_t i = 0; i < h.size(); ++i) n += in_union(vols, h.site(i));
  return n;
}

inline std::string theta_string(const TorusPoint& th) {
  std::string s;
  for (const auto& x : to_doubles(th)) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

/// Least-squares slope of y against x.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  if (x.size() < 2 || den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / den;
}

inline double spectral_width(const SpectralData& s) {
  return s.size() ? s.eigenvalues[s.eigenvalues.size() - 1] - s.eigenvalues[0] : 0.0;
}

inline std::vector<TorusPoint> sample_phases(const ExperimentConfig& c, std::size_t count) {
  if (count == 0) throw ConfigError("phase sample count must be >= 1");
  if (count == 1) return {c.theta};
  return HaltonSampler(c.model.torus_dim(), c.seed).points(count);
}

}  // namespace harness_detail

// ---------------------------------------------------------------------------
// build, evolve, green-scan, ldt
// ---------------------------------------------------------------------------

/// Spectrum of H on every configured volume (or build.half_width cube).
inline RunResult run_build(const ExperimentConfig& c, OutputSink& out) {
  using namespace harness_detail;
  auto vols = c.volumes;
  if (vols.empty()) vols.push_back(Volume::cube(c.nu(), cfg::get_or<int>(c.section("build"), "half_width", 16, "build")));
  CsvTable t({"volume", "j", "E", "psi0"});
  t.comment("spectrum of H on each volume; psi0 = psi_j(0)");
  RunResult r;
  r.summary["volumes"] = json::array();
  for (std::size_t m = 0; m < vols.size(); ++m) {
    const auto s = diagonalize(assemble_operator(c.model, vols[m], c.theta));
    for (std::size_t j = 0; j < s.size(); ++j)
      t.row({fmt(m), fmt(j), fmt(s.eigenvalues[j]), fmt(s.eigenvectors(s.origin, j))});
    r.summary["volumes"].push_back({{"box", vols[m].describe()},
                                    {"sites", s.size()},
                                    {"min_eigenvalue", s.eigenvalues[0]},
                                    {"max_eigenvalue", s.eigenvalues[s.eigenvalues.size() - 1]},
                                    {"min_gap", s.size() > 1 ? s.min_gap() : 0.0}});
  }
  r.summary["norm_bound"] = c.model.norm_bound();
  r.summary["degenerate_hull"] = c.model.degenerate_hull();
  out.write_csv("spectrum.csv", t);
  return r;
}

inline RunResult run_evolve(const ExperimentConfig& c, OutputSink& out) {
  using namespace harness_detail;
  const auto& e = c.section("evolve");
  const Volume box = Volume::cube(c.nu(), cfg::get<int>(e, "half_width", "evolve"));
  const auto times = parse_times(cfg::require(e, "times", "evolve"), "evolve.times");
  const auto ps = cfg::get_or<std::vector<double>>(e, "p", {2.0}, "evolve");
  const bool dump = cfg::get_or<bool>(e, "probabilities", false, "evolve");

  const auto s = diagonalize(assemble_operator(c.model, box, c.theta));
  auto rec = evolve(s, c.model.kernel(), times, c.threads);
  for (double p : ps) add_moments(rec, p);
  const auto fit = ballistic_check(rec, c.model.kernel().velocity_bound());

  if (dump) {
    auto cols = std::vector<std::string>{"t"};
    for (auto& w : site_columns("w", c.nu())) cols.push_back(w);
    cols.push_back("P");
    CsvTable pt(cols);
    for (std::size_t k = 0; k < times.size(); ++k)
      for (std::size_t i = 0; i < box.size(); ++i) {
        std::vector<std::string> row{fmt(times[k])};
        append_site(row, box.site(i));
        row.push_back(fmt(rec.probabilities[k][i]));
        pt.row(std::move(row));
      }
    out.write_csv("probabilities.csv", pt);
  }
  CsvTable mt({"t", "p", "M"});
  mt.comment("M_p(t) = sum_w P_t(w) |w|^p on " + box.describe());
  for (std::size_t k = 0; k < times.size(); ++k)
    for (const auto& [p, m] : rec.moments) mt.row({fmt(times[k]), fmt(p), fmt(m[k])});
  out.write_csv("moments.csv", mt);
  CsvTable tt({"t", "bound"});
  tt.comment("Duhamel bound on the truncation error of the box");
  for (std::size_t k = 0; k < times.size(); ++k) tt.row({fmt(times[k]), fmt(rec.truncation_bound[k])});
  out.write_csv("truncation.csv", tt);
  out.write_plot("moments.plt", "moments.csv", "t", "M_p(t)", {{1, 3, "M_p"}}, true, true);

  RunResult r;
  r.summary["box"] = box.describe();
  r.summary["ballistic"] = {{"c_fit", fit.c_fit},
                            {"C_fit", fit.C_fit},
                            {"points", fit.points},
                            {"degenerate", fit.degenerate},
                            {"box_too_small", fit.box_too_small}};
  r.summary["max_truncation_bound"] = rec.truncation_bound.empty() ? 0.0 : rec.truncation_bound.back();
  return r;
}

inline RunResult run_green_scan(const ExperimentConfig& c, OutputSink& out) {
  using namespace harness_detail;
  if (c.volumes.empty()) throw ConfigError("green-scan: needs a 'volumes' section");
  const auto& g = c.section("green");
  const double eps = cfg::get<double>(g, "epsilon", "green");
  double h = cfg::get_or<double>(g, "h", 0.0, "green");
  if (h == 0.0) {
    const double rel = cfg::get_or<double>(g, "h_relative", 1e-4, "green");
    h = rel * spectral_width(diagonalize(assemble_operator(c.model, c.volumes.front(), c.theta)));
    if (!(h > 0.0)) h = rel;
  }
  ResonantScanOptions opt;
  opt.complexify = cfg::get_or<double>(g, "complexify", 0.0, "green");
  opt.check_refinement = cfg::get_or<bool>(g, "refinement", true, "green");
  opt.threads = c.threads;
  const auto scan = resonant_measure(c.model, c.theta, c.volumes, eps, h, opt);

  auto cols = std::vector<std::string>{"E", "member"};
  for (auto& s : site_columns("witness_v", c.nu())) cols.push_back(s);
  for (auto& s : site_columns("witness_w", c.nu())) cols.push_back(s);
  CsvTable t(cols);
  t.comment("grid cells of width " + fmt(scan.step) + "; witnesses are given for members only");
  for (std::size_t i = 0; i < scan.energies.size(); ++i) {
    std::vector<std::string> row{fmt(scan.energies[i]), fmt(scan.member[i] != 0)};
    if (scan.witness[i]) {
      append_site(row, scan.witness[i]->v);
      append_site(row, scan.witness[i]->w);
    } else {
      row.resize(cols.size());
    }
    t.row(std::move(row));
  }
  out.write_csv("resonant.csv", t);
  CsvTable st({"epsilon", "M", "h", "delta_hat", "delta_hat_half_step", "refinement_flag", "step_exceeds_gap",
               "singular"});
  st.row({fmt(eps), fmt(c.M()), fmt(scan.step), fmt(scan.delta_hat), fmt(scan.delta_hat_half_step),
          fmt(scan.refinement_flag), fmt(scan.step_exceeds_gap), fmt(scan.singular_count)});
  out.write_csv("resonant_summary.csv", st);

  RunResult r;
  r.summary = {{"epsilon", eps},
               {"h", scan.step},
               {"delta_hat", scan.delta_hat},
               {"delta_hat_half_step", scan.delta_hat_half_step},
               {"refinement_flag", scan.refinement_flag},
               {"step_exceeds_gap", scan.step_exceeds_gap}};
  return r;
}

inline RunResult run_ldt(const ExperimentConfig& c, OutputSink& out) {
  const auto& l = c.section("ldt");
  const auto energies = cfg::get<std::vector<double>>(l, "energies", "ldt");
  const auto ns = cfg::get<std::vector<std::size_t>>(l, "N", "ldt");
  const auto samples = cfg::get_or<std::size_t>(l, "samples", 10000, "ldt");
  const bool relative = l.contains("zeta_relative");
  const double zeta_in = relative ? cfg::get<double>(l, "zeta_relative", "ldt") : cfg::get<double>(l, "zeta", "ldt");
  const auto gamma_n = cfg::get_or<std::size_t>(l, "gamma_N", 0, "ldt");
  if (energies.empty() || ns.empty()) throw ConfigError("ldt: energies and N must be non-empty");
  if (!(zeta_in > 0.0)) throw ConfigError("ldt: zeta must be positive");
  require_schrodinger(c.model, "ldt");

  CsvTable t({"E", "N", "zeta", "S", "gamma_hat", "p_hat"});
  t.comment("p_hat = fraction of phases with |log||Phi_N|| - gamma N| >= zeta N");
  CsvTable lt({"E", "N", "p_hat", "rho_hat", "r_hat"});
  lt.comment("rho_hat, r_hat: fit of log p_hat = -r N^rho over rungs with 10/S <= p_hat <= 1/2");
  RunResult r;
  r.summary["energies"] = json::array();
  for (double e : energies) {
    std::optional<double> gamma;
    if (gamma_n > 0) gamma = lyapunov(c.model, e, gamma_n, samples, c.seed, c.threads).gamma;
    double zeta = zeta_in;
    if (relative) {
      const double ref = gamma ? *gamma : lyapunov(c.model, e, ns.back(), samples, c.seed, c.threads).gamma;
      zeta = zeta_in * ref;
      if (!(zeta > 0.0)) throw ConfigError("ldt: zeta_relative needs a positive Lyapunov exponent at E = " + fmt(e));
    }
    std::vector<LdtEstimate> ladder;
    for (auto n : ns) {
      ladder.push_back(ld_probability(c.model, e, n, zeta, samples, c.seed, c.threads, gamma));
      const auto& x = ladder.back();
      t.row({fmt(e), fmt(n), fmt(zeta), fmt(samples), fmt(x.gamma_hat), fmt(x.p_hat)});
    }
    const auto fit = fit_ld_exponent(ladder);
    for (const auto& x : ladder) lt.row({fmt(e), fmt(x.n), fmt(x.p_hat), fmt(fit.rho), fmt(fit.r)});
    r.summary["energies"].push_back({{"E", e}, {"zeta", zeta}, {"rho_hat", fit.rho}, {"r_hat", fit.r},
                                     {"fit_sufficient", fit.sufficient}});
  }
  out.write_csv("ldt.csv", t);
  out.write_csv("ldt_ladder.csv", lt);
  return r;
}

// ---------------------------------------------------------------------------
// theorem-check
// ---------------------------------------------------------------------------

struct TheoremPoint {
  double t = 0.0;
  Site w;
  double P = 0.0;
  double rhs_unit = 0.0;  // e^{-c|w|} delta^2 + |Lambda|^2 eps^{1/(5M)}
};

struct TheoremRung {
  double delta = 0.0;
  double epsilon = 0.0;
  double horizon = 0.0;
  double h = 0.0;
  double delta_hat = 0.0;
  bool refinement_flag = false;
  bool hypothesis_met = false;
  double c = 0.0;
  bool c_fallback = false;  // ballistic fit degenerate, c = 1 used
  double C_raw = 0.0;
  double C_fit = 0.0;
  std::size_t violations = 0;
  double truncation_bound = 0.0;
  Volume ambient;
  std::vector<TheoremPoint> points;
};

struct TheoremSize {
  std::string label;
  std::vector<Volume> volumes;
  std::size_t lambda_size = 0;
  std::vector<TheoremRung> rungs;
};

struct TheoremReport {
  std::vector<TheoremSize> sizes;
  bool hypothesis_met = false;  // some delta meets the hypothesis at every size
  std::optional<std::size_t> headline;  // rung index: smallest such delta
  std::size_t violations = 0;           // at the headline rung, every size
  std::size_t cross_violations = 0;     // C from the first size applied to the others
  double C_ratio = std::numeric_limits<double>::quiet_NaN();
  bool C_stable = false;  // within a factor 2 across sizes
  bool fast_path = false;
};

namespace harness_detail {

struct TheoremParams {
  std::vector<double> deltas;
  std::optional<double> epsilon;
  double h_relative = 1e-4;
  double complexify = 0.0;
  int time_points = 16;
  std::optional<double> t_max;
  std::optional<int> margin;
};

inline TheoremParams theorem_params(const ExperimentConfig& c) {
  const auto& t = c.section("theorem");
  TheoremParams p;
  const auto& d = cfg::require(t, "delta", "theorem");
  p.deltas = d.is_array() ? d.get<std::vector<double>>() : std::vector<double>{d.get<double>()};
  if (t.contains("epsilon")) p.epsilon = cfg::get<double>(t, "epsilon", "theorem");
  p.h_relative = cfg::get_or<double>(t, "h_relative", 1e-4, "theorem");
  p.complexify = cfg::get_or<double>(t, "complexify", 0.0, "theorem");
  p.time_points = cfg::get_or<int>(t, "time_points", 16, "theorem");
  if (t.contains("t_max")) p.t_max = cfg::get<double>(t, "t_max", "theorem");
  if (t.contains("ambient_margin")) p.margin = cfg::get<int>(t, "ambient_margin", "theorem");
  if (p.time_points < 1) throw ConfigError("theorem.time_points must be >= 1");
  if (!(p.h_relative > 0.0)) throw ConfigError("theorem.h_relative must be positive");
  return p;
}

inline TheoremRung theorem_rung(const ExperimentConfig& c, const TheoremParams& p, const std::vector<Volume>& vols,
                                std::size_t lambda_size, double delta) {
  const int nu = c.nu(), m = static_cast<int>(vols.size());
  TheoremRung r;
  r.delta = delta;
  r.epsilon = p.epsilon ? *p.epsilon : theorem_epsilon(delta, nu, m);
  check_theorem_parameters(r.epsilon, delta, nu, m);
  r.horizon = theorem_horizon(r.epsilon, delta, m);
  const double t_max = p.t_max ? std::min(*p.t_max, r.horizon) : r.horizon;
  const Kernel& a = c.model.kernel();
  const double v = a.velocity_bound();
  const double tail = static_cast<double>(lambda_size) * static_cast<double>(lambda_size) *
                      std::pow(r.epsilon, 1.0 / (5.0 * m));
  const Volume hull = hull_of(vols);
  const int margin = p.margin ? *p.margin : static_cast<int>(std::ceil(3.0 * v * t_max)) + 8;
  r.ambient = hull.grown(std::max(margin, a.cutoff_radius()));

  std::vector<double> times;
  for (int i = 1; i <= p.time_points; ++i) times.push_back(t_max * i / p.time_points);

  if (a.is_zero()) {
    // diagonal H: nothing leaves the origin and no boundary coupling exceeds eps
    r.h = p.h_relative;
    r.hypothesis_met = true;
    r.c = 1.0;
    r.c_fallback = true;
    for (double t : times)
      for (std::size_t i = 0; i < r.ambient.size(); ++i) {
        const Site w = r.ambient.site(i);
        if (in_union(vols, w)) continue;
        r.points.push_back({t, w, 0.0, std::exp(-r.c * max_norm(w)) * delta * delta + tail});
      }
    r.C_fit = 1.0;
    return r;
  }

  const auto s1 = diagonalize(assemble_operator(c.model, vols.front(), c.theta));
  r.h = p.h_relative * spectral_width(s1);
  if (!(r.h > 0.0)) r.h = p.h_relative;
  ResonantScanOptions opt;
  opt.complexify = p.complexify;
  opt.threads = c.threads;
  const auto scan = resonant_measure(c.model, c.theta, vols, r.epsilon, r.h, opt);
  r.h = scan.step;
  r.delta_hat = scan.delta_hat;
  r.refinement_flag = scan.refinement_flag;
  r.hypothesis_met = scan.delta_hat <= delta;
  if (!r.hypothesis_met || times.empty() || t_max <= 0.0) return r;

  const auto s = diagonalize(assemble_operator(c.model, r.ambient, c.theta));
  const auto rec = evolve(s, a, times, c.threads);
  r.truncation_bound = rec.truncation_bound.back();
  const auto fit = ballistic_check(rec, v);
  r.c = fit.degenerate ? 1.0 : fit.c_fit;
  r.c_fallback = fit.degenerate;
  for (std::size_t k = 0; k < times.size(); ++k)
    for (std::size_t i = 0; i < r.ambient.size(); ++i) {
      const Site w = r.ambient.site(i);
      if (in_union(vols, w)) continue;
      const double unit = std::exp(-r.c * max_norm(w)) * delta * delta + tail;
      r.points.push_back({times[k], w, rec.probabilities[k][i], unit});
      r.C_raw = std::max(r.C_raw, rec.probabilities[k][i] / unit);
    }
  r.C_fit = std::max(1.0, r.C_raw);
  for (const auto& q : r.points) r.violations += q.P > r.C_fit * q.rhs_unit;
  return r;
}

/// Volume families for the size sweep: the configured one plus theorem.sweep
/// (list of volume specs), or N + 4 for a four-interval family.
inline std::vector<std::pair<std::string, std::vector<Volume>>> theorem_sizes(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::vector<Volume>>> out;
  const auto& t = c.section("theorem");
  const auto& v = c.section("volumes");
  const bool four = v.contains("family") && v.at("family") == "four_interval";
  out.emplace_back(four ? "N=" + std::to_string(v.at("N").get<int>()) : "base", c.volumes);
  if (t.contains("sweep")) {
    int i = 1;
    for (const auto& s : t.at("sweep")) {
      auto vols = parse_volumes(s, c.nu());
      if (vols.size() != c.volumes.size()) throw ConfigError("theorem.sweep: every family must have M volumes");
      out.emplace_back(s.contains("N") ? "N=" + std::to_string(s.at("N").get<int>()) : "sweep" + std::to_string(i), vols);
      ++i;
    }
  } else if (four && cfg::get_or<bool>(t, "sweep_default", true, "theorem")) {
    const int n = v.at("N").get<int>() + 4;
    out.emplace_back("N=" + std::to_string(n), four_interval_family(n));
  }
  return out;
}

}  // namespace harness_detail

inline TheoremReport theorem_check(const ExperimentConfig& c) {
  using namespace harness_detail;
  if (c.volumes.empty()) throw ConfigError("theorem-check: needs a 'volumes' section");
  const auto p = theorem_params(c);
  TheoremReport rep;
  rep.fast_path = c.model.kernel().is_zero();
  for (auto& [label, vols] : theorem_sizes(c)) {
    TheoremSize sz;
    sz.label = label;
    sz.volumes = vols;
    sz.lambda_size = union_size(vols);
    for (double d : p.deltas) sz.rungs.push_back(theorem_rung(c, p, vols, sz.lambda_size, d));
    rep.sizes.push_back(std::move(sz));
  }
  // headline: smallest delta met at every size
  for (std::size_t k = 0; k < p.deltas.size(); ++k) {
    bool all = true;
    for (const auto& sz : rep.sizes) all &= sz.rungs[k].hypothesis_met;
    if (all && (!rep.headline || p.deltas[k] < p.deltas[*rep.headline])) rep.headline = k;
  }
  rep.hypothesis_met = rep.headline.has_value();
  if (!rep.hypothesis_met) return rep;
  const std::size_t k = *rep.headline;
  const double c0 = rep.sizes.front().rungs[k].C_fit;
  double lo = c0, hi = c0;
  for (std::size_t i = 0; i < rep.sizes.size(); ++i) {
    const auto& r = rep.sizes[i].rungs[k];
    rep.violations += r.violations;
    lo = std::min(lo, r.C_fit);
    hi = std::max(hi, r.C_fit);
    if (i == 0) continue;
    for (const auto& q : r.points) rep.cross_violations += q.P > c0 * q.rhs_unit;
  }
  rep.C_ratio = hi / lo;
  rep.C_stable = rep.C_ratio <= 2.0;
  return rep;
}

inline RunResult write_theorem_outputs(const TheoremReport& rep, int nu, OutputSink& out) {
  using namespace harness_detail;

  CsvTable ladder({"size", "delta", "epsilon", "horizon", "h", "delta_hat", "hypothesis_met", "refinement_flag", "c",
                   "c_fallback", "C_raw", "C_fit", "points", "violations", "truncation_bound"});
  ladder.comment("epsilon = delta^{8(nu+1)M} unless fixed; horizon = |log epsilon| / (40 M delta)");
  for (const auto& sz : rep.sizes)
    for (const auto& r : sz.rungs)
      ladder.row({sz.label, fmt(r.delta), fmt(r.epsilon), fmt(r.horizon), fmt(r.h), fmt(r.delta_hat),
                  fmt(r.hypothesis_met), fmt(r.refinement_flag), fmt(r.c), fmt(r.c_fallback), fmt(r.C_raw),
                  fmt(r.C_fit), fmt(r.points.size()), fmt(r.violations), fmt(r.truncation_bound)});
  out.write_csv("theorem_ladder.csv", ladder);

  auto cols = std::vector<std::string>{"t"};
  for (auto& s : site_columns("w", nu)) cols.push_back(s);
  for (const char* s : {"P", "rhs", "holds"}) cols.push_back(s);
  CsvTable main(cols);
  CsvTable sweep([&] {
    auto cc = cols;
    cc.insert(cc.begin(), "size");
    return cc;
  }());
  if (rep.headline) {
    const std::size_t k = *rep.headline;
    const auto& r0 = rep.sizes.front().rungs[k];
    main.comment(rep.sizes.front().label + ", delta = " + fmt(r0.delta) + ", epsilon = " + fmt(r0.epsilon) +
                 ", c = " + fmt(r0.c) + ", C = " + fmt(r0.C_fit) + ", |Lambda| = " +
                 fmt(rep.sizes.front().lambda_size));
    for (const auto& q : r0.points) {
      std::vector<std::string> row{fmt(q.t)};
      append_site(row, q.w);
      const double rhs = r0.C_fit * q.rhs_unit;
      row.push_back(fmt(q.P));
      row.push_back(fmt(rhs));
      row.push_back(fmt(q.P <= rhs));
      main.row(std::move(row));
    }
    sweep.comment("rhs uses C fitted on " + rep.sizes.front().label);
    for (std::size_t i = 1; i < rep.sizes.size(); ++i)
      for (const auto& q : rep.sizes[i].rungs[k].points) {
        std::vector<std::string> row{rep.sizes[i].label, fmt(q.t)};
        append_site(row, q.w);
        const double rhs = r0.C_fit * q.rhs_unit;
        row.push_back(fmt(q.P));
        row.push_back(fmt(rhs));
        row.push_back(fmt(q.P <= rhs));
        sweep.row(std::move(row));
      }
  } else {
    main.comment("hypothesis unmet for every delta: no conclusion evaluated");
  }
  out.write_csv("theorem_check.csv", main);
  if (rep.sizes.size() > 1) out.write_csv("theorem_sweep.csv", sweep);

  RunResult res;
  res.hypothesis_unmet = !rep.hypothesis_met;
  res.summary = {{"hypothesis_met", rep.hypothesis_met},
                 {"fast_path", rep.fast_path},
                 {"violations", rep.violations},
                 {"cross_violations", rep.cross_violations},
                 {"C_stable", rep.C_stable}};
  if (rep.headline) {
    const auto& r0 = rep.sizes.front().rungs[*rep.headline];
    res.summary["delta"] = r0.delta;
    res.summary["epsilon"] = r0.epsilon;
    res.summary["delta_hat"] = r0.delta_hat;
    res.summary["c"] = r0.c;
    res.summary["c_fallback"] = r0.c_fallback;
    res.summary["C_ratio"] = rep.C_ratio;
    json cs = json::array();
    for (const auto& sz : rep.sizes) cs.push_back({{"size", sz.label}, {"C_fit", sz.rungs[*rep.headline].C_fit},
                                                   {"C_raw", sz.rungs[*rep.headline].C_raw}});
    res.summary["C_fit"] = cs;
  }
  return res;
}

inline RunResult run_theorem_check(const ExperimentConfig& c, OutputSink& out) {
  return write_theorem_outputs(theorem_check(c), c.nu(), out);
}

// ---------------------------------------------------------------------------
// moment-scan
// ---------------------------------------------------------------------------

struct MomentSeries {
  double p = 0.0;
  std::vector<double> M;         // max over the phase sample
  std::vector<double> M_half;    // max over the first half of the sample
  std::vector<double> envelope;  // log^{p/rho}(t + e)
  double slope_log = 0.0;        // d log M / d log t, last decade
  double slope_loglog = 0.0;     // d log M / d log log(t + e), last decade
  double allowed = 0.0;          // (p / rho)(1 + slack)
  bool violation = false;
  double doubling_delta = 0.0;   // max relative change from half to full sample
};

struct MomentScanReport {
  Volume box;
  std::vector<double> times;
  std::size_t phases = 0;
  double rho = 0.0;
  std::string rho_source;
  double max_truncation = 0.0;
  std::vector<MomentSeries> series;
};

inline MomentScanReport moment_scan(const ExperimentConfig& c) {
  using namespace harness_detail;
  const auto& s = c.section("moment_scan");
  MomentScanReport rep;
  rep.box = Volume::cube(c.nu(), cfg::get<int>(s, "half_width", "moment_scan"));
  rep.times = parse_times(cfg::require(s, "times", "moment_scan"), "moment_scan.times");
  if (rep.times.size() < 2) throw ConfigError("moment_scan.times: need at least two times");
  for (std::size_t i = 1; i < rep.times.size(); ++i)
    if (!(rep.times[i] > rep.times[i - 1] && rep.times[0] > 0.0))
      throw ConfigError("moment_scan.times: must be positive and increasing");
  const auto ps = cfg::get_or<std::vector<double>>(s, "p", {2.0}, "moment_scan");
  rep.phases = cfg::get_or<std::size_t>(s, "phases", 1, "moment_scan");
  const double slack = cfg::get_or<double>(s, "slack", 0.25, "moment_scan");
  const double tol = cfg::get_or<double>(s, "truncation_tol", 1e-6, "moment_scan");
  if (s.contains("rho")) {
    rep.rho = cfg::get<double>(s, "rho", "moment_scan");
    rep.rho_source = "config";
  } else {
    const auto name = cfg::get_or<std::string>(s, "preset", "shift-1d-schrodinger", "moment_scan");
    const double kappa = cfg::get_or<double>(s, "kappa", 1.0, "moment_scan");
    for (const auto& pr : ldt_presets(c.model.torus_dim(), kappa))
      if (pr.name == name) rep.rho = pr.rho;
    if (!(rep.rho > 0.0)) throw ConfigError("moment_scan.preset: '" + name + "' has no numeric exponent here");
    rep.rho_source = name;
  }
  if (!(rep.rho > 0.0)) throw ConfigError("moment_scan.rho must be positive");

  const auto phases = sample_phases(c, rep.phases);
  const std::size_t half = (phases.size() + 1) / 2;
  rep.series.resize(ps.size());
  for (std::size_t j = 0; j < ps.size(); ++j) {
    rep.series[j].p = ps[j];
    rep.series[j].M.assign(rep.times.size(), 0.0);
    rep.series[j].M_half.assign(rep.times.size(), 0.0);
  }
  std::vector<double> worst_bound(rep.times.size(), 0.0);
  for (std::size_t ph = 0; ph < phases.size(); ++ph) {
    auto rec = [&] {
      const auto sd = diagonalize(assemble_operator(c.model, rep.box, phases[ph]));
      return evolve(sd, c.model.kernel(), rep.times, c.threads);
    }();
    for (std::size_t k = 0; k < rep.times.size(); ++k) worst_bound[k] = std::max(worst_bound[k], rec.truncation_bound[k]);
    for (auto& ser : rep.series) {
      const auto m = transport_moments(rec, ser.p);
      for (std::size_t k = 0; k < m.size(); ++k) {
        ser.M[k] = std::max(ser.M[k], m[k]);
        if (ph < half) ser.M_half[k] = ser.M[k];
      }
    }
  }
  rep.max_truncation = worst_bound.back();
  if (rep.max_truncation > tol) {
    double admissible = 0.0;
    for (std::size_t k = 0; k < rep.times.size() && worst_bound[k] <= tol; ++k) admissible = rep.times[k];
    throw ConfigError("moment_scan: box " + rep.box.describe() + " too small, truncation bound " +
                      fmt(rep.max_truncation) + " > " + fmt(tol) + " at t = " + fmt(rep.times.back()) +
                      "; max admissible t on the grid = " + fmt(admissible));
  }

  const double t_last = rep.times.back();
  for (auto& ser : rep.series) {
    std::vector<double> x1, x2, y;
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
      const double t = rep.times[k];
      ser.envelope.push_back(std::pow(std::log(t + M_E), ser.p / rep.rho));
      if (t >= t_last / 10.0 * (1 - 1e-12) && ser.M[k] > 0.0) {
        x1.push_back(std::log(t));
        x2.push_back(std::log(std::log(t + M_E)));
        y.push_back(std::log(ser.M[k]));
      }
      const double ref = std::max(ser.M[k], std::numeric_limits<double>::min());
      ser.doubling_delta = std::max(ser.doubling_delta, (ser.M[k] - ser.M_half[k]) / ref);
    }
    ser.slope_log = y.size() >= 2 ? slope(x1, y) : 0.0;
    ser.slope_loglog = y.size() >= 2 ? slope(x2, y) : 0.0;
    ser.allowed = ser.p / rep.rho * (1.0 + slack);
    ser.violation = ser.slope_loglog > ser.allowed;
  }
  return rep;
}

inline RunResult run_moment_scan(const ExperimentConfig& c, OutputSink& out) {
  const auto rep = moment_scan(c);
  CsvTable t({"t", "p", "M", "envelope"});
  t.comment("M = max over " + fmt(rep.phases) + " phases of M_p(t) on " + rep.box.describe() +
            "; envelope = log^{p/rho}(t + e), rho = " + fmt(rep.rho));
  for (std::size_t k = 0; k < rep.times.size(); ++k)
    for (const auto& s : rep.series) t.row({fmt(rep.times[k]), fmt(s.p), fmt(s.M[k]), fmt(s.envelope[k])});
  out.write_csv("moments.csv", t);
  CsvTable st({"p", "slope_log", "slope_loglog", "allowed", "violation", "doubling_delta"});
  st.comment("slopes of log M over the last decade of t, against log t and log log(t + e)");
  for (const auto& s : rep.series)
    st.row({fmt(s.p), fmt(s.slope_log), fmt(s.slope_loglog), fmt(s.allowed), fmt(s.violation), fmt(s.doubling_delta)});
  out.write_csv("moment_slopes.csv", st);
  out.write_plot("moments.plt", "moments.csv", "t", "M_p(t)", {{1, 3, "M_p"}, {1, 4, "envelope"}}, true, true);

  RunResult r;
  r.summary = {{"box", rep.box.describe()}, {"rho", rep.rho}, {"rho_source", rep.rho_source},
               {"max_truncation_bound", rep.max_truncation}};
  r.summary["series"] = json::array();
  for (const auto& s : rep.series)
    r.summary["series"].push_back({{"p", s.p}, {"slope_log", s.slope_log}, {"slope_loglog", s.slope_loglog},
                                   {"allowed", s.allowed}, {"violation", s.violation}});
  return r;
}

// ---------------------------------------------------------------------------
// phase-uniformity
// ---------------------------------------------------------------------------

struct PhaseRecord {
  TorusPoint theta;
  double delta_hat = 0.0;
  bool typical = false;
};

struct PhaseGap {
  std::size_t atypical = 0, nearest = 0;
  double distance = 0.0;
  double dv = 0.0;  // max_w |V_theta(w) - V_theta'(w)| on the box
  double t = 0.0;
  double gap = 0.0;    // max_w |P_{t,theta}(w) - P_{t,theta'}(w)|
  double bound = 0.0;  // 2 t dv + tol
  bool holds = true;
};

struct PhaseUniformityReport {
  double delta = 0.0, epsilon = 0.0;
  std::vector<PhaseRecord> phases;
  std::vector<PhaseGap> gaps;
  double atypical_fraction = 0.0;
  double chebyshev_prediction = 0.0;  // mean(delta_hat) / delta
  bool chebyshev_consistent = true;
  bool inconclusive = false;  // no typical phase in the sample
  std::size_t gap_violations = 0;
  double sup_delta_hat = 0.0, sup_delta_hat_half = 0.0;
  bool degenerate_hull = false;
};

inline PhaseUniformityReport phase_uniformity(const ExperimentConfig& c) {
  using namespace harness_detail;
  if (c.volumes.empty()) throw ConfigError("phase-uniformity: needs a 'volumes' section");
  const auto& s = c.section("phase_uniformity");
  PhaseUniformityReport rep;
  rep.delta = cfg::get<double>(s, "delta", "phase_uniformity");
  rep.epsilon = s.contains("epsilon") ? cfg::get<double>(s, "epsilon", "phase_uniformity")
                                      : theorem_epsilon(rep.delta, c.nu(), c.M());
  check_theorem_parameters(rep.epsilon, rep.delta, c.nu(), c.M());
  const auto count = cfg::get_or<std::size_t>(s, "phases", 256, "phase_uniformity");
  const double h_rel = cfg::get_or<double>(s, "h_relative", 1e-4, "phase_uniformity");
  const double tol = cfg::get_or<double>(s, "tolerance", 1e-9, "phase_uniformity");
  const int margin = cfg::get_or<int>(s, "ambient_margin", 16, "phase_uniformity");
  std::vector<double> times;
  if (s.contains("times")) {
    times = parse_times(s.at("times"), "phase_uniformity.times");
  } else {
    const double t_max = 1.0 / rep.delta;
    for (int i = 1; i <= 8; ++i) times.push_back(t_max * i / 8.0);
  }
  rep.degenerate_hull = c.model.degenerate_hull();

  const auto thetas = sample_phases(c, count);
  rep.phases.resize(thetas.size());
  double h = h_rel * spectral_width(diagonalize(assemble_operator(c.model, c.volumes.front(), thetas.front())));
  if (!(h > 0.0)) h = h_rel;
  ResonantScanOptions opt;
  opt.check_refinement = false;
  parallel_for(thetas.size(), c.threads, [&](std::size_t i) {
    const auto scan = resonant_measure(c.model, thetas[i], c.volumes, rep.epsilon, h, opt);
    rep.phases[i] = {thetas[i], scan.delta_hat, scan.delta_hat <= rep.delta};
  });

  std::size_t atyp = 0;
  double mean = 0.0;
  const std::size_t half = (thetas.size() + 1) / 2;
  for (std::size_t i = 0; i < rep.phases.size(); ++i) {
    atyp += !rep.phases[i].typical;
    mean += rep.phases[i].delta_hat;
    rep.sup_delta_hat = std::max(rep.sup_delta_hat, rep.phases[i].delta_hat);
    if (i < half) rep.sup_delta_hat_half = rep.sup_delta_hat;
  }
  const double n = static_cast<double>(rep.phases.size());
  rep.atypical_fraction = atyp / n;
  rep.chebyshev_prediction = mean / n / rep.delta;
  const double f = rep.atypical_fraction;
  rep.chebyshev_consistent = f <= rep.chebyshev_prediction + 3.0 * std::sqrt(f * (1.0 - f) / n) + 1.0 / n;
  rep.inconclusive = atyp == rep.phases.size();
  if (rep.inconclusive) return rep;

  const Volume box = hull_of(c.volumes).grown(margin);
  std::vector<std::size_t> atypical;
  for (std::size_t i = 0; i < rep.phases.size(); ++i)
    if (!rep.phases[i].typical) atypical.push_back(i);
  std::vector<std::vector<PhaseGap>> per(atypical.size());
  parallel_for(atypical.size(), c.threads, [&](std::size_t a) {
    const std::size_t i = atypical[a];
    std::size_t best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < rep.phases.size(); ++j) {
      if (!rep.phases[j].typical) continue;
      const double d = torus_distance(rep.phases[i].theta, rep.phases[j].theta);
      if (d < dist) {
        dist = d;
        best = j;
      }
    }
    double dv = 0.0;
    for (std::size_t k = 0; k < box.size(); ++k) {
      const Site w = box.site(k);
      dv = std::max(dv, std::abs(c.model.potential(w, rep.phases[i].theta) - c.model.potential(w, rep.phases[best].theta)));
    }
    const auto ra = evolve(diagonalize(assemble_operator(c.model, box, rep.phases[i].theta)), c.model.kernel(), times);
    const auto rb = evolve(diagonalize(assemble_operator(c.model, box, rep.phases[best].theta)), c.model.kernel(), times);
    for (std::size_t k = 0; k < times.size(); ++k) {
      PhaseGap g{i, best, dist, dv, times[k]};
      for (std::size_t w = 0; w < box.size(); ++w)
        g.gap = std::max(g.gap, std::abs(ra.probabilities[k][w] - rb.probabilities[k][w]));
      g.bound = 2.0 * times[k] * dv + tol;
      g.holds = g.gap <= g.bound;
      per[a].push_back(g);
    }
  });
  for (auto& v : per)
    for (auto& g : v) {
      rep.gap_violations += !g.holds;
      rep.gaps.push_back(g);
    }
  return rep;
}

inline RunResult run_phase_uniformity(const ExperimentConfig& c, OutputSink& out) {
  using namespace harness_detail;
  const auto rep = phase_uniformity(c);
  CsvTable pt({"index", "theta", "delta_hat", "typical"});
  pt.comment("typical: delta_hat(theta) <= delta = " + fmt(rep.delta) + ", epsilon = " + fmt(rep.epsilon));
  for (std::size_t i = 0; i < rep.phases.size(); ++i)
    pt.row({fmt(i), theta_string(rep.phases[i].theta), fmt(rep.phases[i].delta_hat), fmt(rep.phases[i].typical)});
  out.write_csv("phases.csv", pt);
  CsvTable gt({"atypical", "nearest", "distance", "max_dV", "t", "gap", "bound", "holds"});
  gt.comment("gap = max_w |P_{t,theta}(w) - P_{t,theta'}(w)|; bound = 2 t max|dV| + tolerance");
  for (const auto& g : rep.gaps)
    gt.row({fmt(g.atypical), fmt(g.nearest), fmt(g.distance), fmt(g.dv), fmt(g.t), fmt(g.gap), fmt(g.bound),
            fmt(g.holds)});
  out.write_csv("phase_gaps.csv", gt);

  RunResult r;
  r.hypothesis_unmet = rep.inconclusive;
  r.summary = {{"delta", rep.delta},
               {"epsilon", rep.epsilon},
               {"phases", rep.phases.size()},
               {"atypical_fraction", rep.atypical_fraction},
               {"chebyshev_prediction", rep.chebyshev_prediction},
               {"chebyshev_consistent", rep.chebyshev_consistent},
               {"inconclusive", rep.inconclusive},
               {"gap_violations", rep.gap_violations},
               {"sup_delta_hat", rep.sup_delta_hat},
               {"sup_delta_hat_half_sample", rep.sup_delta_hat_half},
               {"degenerate_hull", rep.degenerate_hull}};
  return r;
}

}  // namespace qpdyn
