#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qpdyn/error.hpp"
#include "qpdyn/evolve.hpp"
#include "qpdyn/lattice.hpp"
#include "qpdyn/model.hpp"

namespace qpdyn {

using json = nlohmann::json;

namespace cfg {

inline const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  return j.at(key);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return require(j, key, where).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get<T>(j, key, where);
}

inline double frequency(const json& j, const std::string& where) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "golden") return golden_mean;
    if (s == "silver") return silver_mean;
    throw ConfigError(where + ": unknown frequency preset '" + s + "' (use golden, silver or a number)");
  }
  if (!j.is_number()) throw ConfigError(where + ": frequency must be a number or a preset name");
  return j.get<double>();
}

}  // namespace cfg

/// {"type": "laplacian"} | {"type": "exp_decay", "rate": r, "radius": R} | {"type": "zero"}
/// | {"type": "entries", "entries": [{"offset": [..], "weight": w}], "decay_rate": c, "cutoff": R}
inline Kernel parse_kernel(const json& j, int nu) {
  const std::string where = "model.kernel";
  const auto type = j.is_string() ? j.get<std::string>() : cfg::get<std::string>(j, "type", where);
  if (type == "laplacian") return Kernel::laplacian(nu);
  if (type == "zero") return Kernel::zero(nu);
  if (type == "exp_decay")
    return Kernel::exp_decay(nu, cfg::get<double>(j, "rate", where), cfg::get<int>(j, "radius", where));
  if (type == "entries") {
    std::vector<KernelEntry> entries;
    for (const auto& e : cfg::require(j, "entries", where))
      entries.push_back({cfg::get<Site>(e, "offset", where + ".entries"), cfg::get<double>(e, "weight", where + ".entries")});
    return Kernel::from_entries(nu, std::move(entries), cfg::get_or<double>(j, "decay_rate", 1.0, where),
                                cfg::get_or<int>(j, "cutoff", 0, where));
  }
  throw ConfigError(where + ": unknown kernel type '" + type + "'");
}

/// {"type": "cos", "k": 1, "amplitude": 2} | {"type": "trig_poly", "k": k, "terms": [{"m": [..], "c": a, "s": b}]}
/// | {"type": "table", "shape": [..], "values": [..]} | {"type": "table", "shape": [..], "path": "file"}
inline HullFunction parse_hull(const json& j, const std::filesystem::path& base_dir) {
  const std::string where = "model.hull";
  const auto type = j.is_string() ? j.get<std::string>() : cfg::get<std::string>(j, "type", where);
  const int k = j.is_object() ? cfg::get_or<int>(j, "k", 1, where) : 1;
  if (type == "cos") return HullFunction::cosine(k, j.is_object() ? cfg::get_or<double>(j, "amplitude", 2.0, where) : 2.0);
  if (type == "trig_poly") {
    std::vector<TrigTerm> terms;
    for (const auto& t : cfg::require(j, "terms", where))
      terms.push_back({cfg::get<std::vector<int>>(t, "m", where + ".terms"), cfg::get_or<double>(t, "c", 0.0, where),
                       cfg::get_or<double>(t, "s", 0.0, where)});
    return HullFunction::trig_polynomial(k, std::move(terms));
  }
  if (type == "table") {
    auto shape = cfg::get<std::vector<int>>(j, "shape", where);
    std::vector<double> values;
    if (j.contains("values")) {
      values = cfg::get<std::vector<double>>(j, "values", where);
    } else {
      auto path = std::filesystem::path(cfg::get<std::string>(j, "path", where));
      if (path.is_relative()) path = base_dir / path;
      std::ifstream f(path);
      if (!f) throw ConfigError(where + ": cannot read table file " + path.string());
      std::string tok;
      while (f >> tok) {
        if (tok[0] == '#') {
          std::getline(f, tok);
          continue;
        }
        try {
          values.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw ConfigError(where + ": bad number '" + tok + "' in " + path.string());
        }
      }
    }
    return HullFunction::table(std::move(shape), std::move(values));
  }
  throw ConfigError(where + ": unknown hull type '" + type + "'");
}

/// {"type": "shift", "alpha": [[..] per lattice direction]} ("golden"/"silver" allowed as entries)
/// | {"type": "skew_shift", "alpha": a, "k": k}
inline BaseDynamics parse_base(const json& j, int nu) {
  const std::string where = "model.base";
  const auto type = cfg::get<std::string>(j, "type", where);
  if (type == "shift") {
    const auto& a = cfg::require(j, "alpha", where);
    std::vector<std::vector<double>> alpha;
    if (!a.is_array()) {
      alpha.assign(nu, {});
      alpha[0] = {cfg::frequency(a, where + ".alpha")};
      if (nu != 1) throw ConfigError(where + ".alpha: give one frequency row per lattice direction");
    } else {
      for (const auto& row : a) {
        std::vector<double> r;
        if (row.is_array())
          for (const auto& x : row) r.push_back(cfg::frequency(x, where + ".alpha"));
        else
          r.push_back(cfg::frequency(row, where + ".alpha"));
        alpha.push_back(std::move(r));
      }
    }
    return BaseDynamics::shift(alpha);
  }
  if (type == "skew_shift") {
    if (nu != 1) throw ConfigError(where + ": the skew-shift is only defined for dimension 1");
    return BaseDynamics::skew_shift(cfg::frequency(cfg::require(j, "alpha", where), where + ".alpha"),
                                    cfg::get<int>(j, "k", where));
  }
  throw ConfigError(where + ": unknown base type '" + type + "'");
}

/// Named models: "almost-mathieu" (cosine shift, golden frequency), "free", "skew-shift" (k = 2).
inline OperatorModel preset_model(const std::string& name, double coupling) {
  if (name == "almost-mathieu")
    return OperatorModel(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), coupling);
  if (name == "free")
    return OperatorModel(Kernel::laplacian(1), HullFunction::cosine(1), BaseDynamics::shift({{golden_mean}}), 0.0);
  if (name == "skew-shift")
    return OperatorModel(Kernel::laplacian(1), HullFunction::trig_polynomial(2, {{{0, 1}, 2.0, 0.0}}),
                         BaseDynamics::skew_shift(golden_mean, 2), coupling);
  throw ConfigError("model.preset: unknown preset '" + name + "' (almost-mathieu, free, skew-shift)");
}

inline OperatorModel parse_model(const json& j, const std::filesystem::path& base_dir = {}) {
  const std::string where = "model";
  if (j.contains("preset"))
    return preset_model(cfg::get<std::string>(j, "preset", where), cfg::get_or<double>(j, "coupling", 1.0, where));
  const int nu = cfg::get_or<int>(j, "dimension", 1, where);
  if (nu < 1) throw ConfigError("model.dimension must be >= 1");
  return OperatorModel(parse_kernel(cfg::require(j, "kernel", where), nu),
                       parse_hull(cfg::require(j, "hull", where), base_dir),
                       parse_base(cfg::require(j, "base", where), nu), cfg::get<double>(j, "coupling", where));
}

/// {"family": "four_interval", "N": n} | {"family": "cube", "half_width": h} | {"boxes": [{"lo": [..], "hi": [..]}]}
inline std::vector<Volume> parse_volumes(const json& j, int nu) {
  const std::string where = "volumes";
  std::vector<Volume> out;
  if (j.contains("boxes")) {
    for (const auto& b : j.at("boxes")) out.emplace_back(cfg::get<Site>(b, "lo", where), cfg::get<Site>(b, "hi", where));
  } else {
    const auto fam = cfg::get<std::string>(j, "family", where);
    if (fam == "four_interval") {
      if (nu != 1) throw ConfigError("volumes: the four-interval family is one-dimensional");
      out = four_interval_family(cfg::get<int>(j, "N", where));
    } else if (fam == "cube") {
      out.push_back(Volume::cube(nu, cfg::get<int>(j, "half_width", where)));
    } else {
      throw ConfigError("volumes: unknown family '" + fam + "'");
    }
  }
  if (out.empty()) throw ConfigError("volumes: empty volume list");
  for (const auto& v : out) {
    if (v.dim() != nu) throw ConfigError("volumes: box dimension does not match the model");
    if (!v.contains_origin()) throw ConfigError("volumes: every box must contain the origin");
  }
  return out;
}

/// {"list": [..]} | {"geometric": {"t0": a, "ratio": q, "count": n}} | {"log_spaced": {"min": a, "max": b, "count": n}}
inline std::vector<double> parse_times(const json& j, const std::string& where) {
  if (j.contains("list")) return cfg::get<std::vector<double>>(j, "list", where);
  if (j.contains("geometric")) {
    const auto& g = j.at("geometric");
    return geometric_times(cfg::get<double>(g, "t0", where), cfg::get<double>(g, "ratio", where),
                           cfg::get<int>(g, "count", where));
  }
  if (j.contains("log_spaced")) {
    const auto& g = j.at("log_spaced");
    return log_spaced_times(cfg::get<double>(g, "min", where), cfg::get<double>(g, "max", where),
                            cfg::get<int>(g, "count", where));
  }
  throw ConfigError(where + ": give 'list', 'geometric' or 'log_spaced'");
}

struct ExperimentConfig {
  json raw;
  std::filesystem::path base_dir;
  OperatorModel model;
  TorusPoint theta;
  std::vector<Volume> volumes;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  int nu() const { return model.lattice_dim(); }
  int M() const { return static_cast<int>(volumes.size()); }
  const json& section(const char* name) const {
    static const json empty = json::object();
    return raw.contains(name) ? raw.at(name) : empty;
  }
};

/// delta^{8(nu+1)M}
inline double theorem_epsilon(double delta, int nu, int m) { return std::pow(delta, 8.0 * (nu + 1) * m); }

/// 0 < eps <= delta^{8(nu+1)M} <= 1.
inline void check_theorem_parameters(double eps, double delta, int nu, int m) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw ConfigError("theorem: delta = " + std::to_string(delta) + " violates 0 < delta <= 1");
  const double cap = theorem_epsilon(delta, nu, m);
  if (!(eps > 0.0 && eps <= cap)) {
    std::ostringstream s;
    s.precision(6);
    s << "theorem: epsilon = " << eps << " violates 0 < eps <= delta^{8(nu+1)M} <= 1 (delta = " << delta
      << ", nu = " << nu << ", M = " << m << ", delta^{8(nu+1)M} = " << cap << ")";
    throw ConfigError(s.str());
  }
}

/// |log eps| / (40 M delta)
inline double theorem_horizon(double eps, double delta, int m) { return std::abs(std::log(eps)) / (40.0 * m * delta); }

inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.model = parse_model(cfg::require(j, "model", "config"), base_dir);
  if (c.model.base().kind() != DynamicsKind::explicit_potential) {
    auto th = cfg::get_or<std::vector<double>>(j, "theta", std::vector<double>(c.model.torus_dim(), 0.0), "config");
    if (static_cast<int>(th.size()) != c.model.torus_dim())
      throw ConfigError("config.theta: expected " + std::to_string(c.model.torus_dim()) + " coordinates");
    c.theta = torus_point(th);
  }
  if (j.contains("volumes")) c.volumes = parse_volumes(j.at("volumes"), c.nu());
  c.seed = cfg::get_or<std::uint64_t>(j, "seed", 0, "config");
  c.threads = cfg::get_or<unsigned>(j, "threads", 1u, "config");

  // the theorem's parameter constraints are checked at load
  if (j.contains("theorem")) {
    const auto& t = j.at("theorem");
    if (c.volumes.empty()) throw ConfigError("theorem: needs a 'volumes' section");
    std::vector<double> deltas;
    const auto& d = cfg::require(t, "delta", "theorem");
    deltas = d.is_array() ? d.get<std::vector<double>>() : std::vector<double>{d.get<double>()};
    if (deltas.empty()) throw ConfigError("theorem.delta: empty list");
    for (double delta : deltas) {
      const double eps = t.contains("epsilon") ? cfg::get<double>(t, "epsilon", "theorem")
                                               : theorem_epsilon(delta, c.nu(), c.M());
      check_theorem_parameters(eps, delta, c.nu(), c.M());
      if (t.contains("t_max")) {
        const double tmax = cfg::get<double>(t, "t_max", "theorem");
        const double horizon = theorem_horizon(eps, delta, c.M());
        if (tmax > horizon)
          throw ConfigError("theorem.t_max = " + std::to_string(tmax) + " exceeds the horizon |log eps|/(40 M delta) = " +
                            std::to_string(horizon) + " at delta = " + std::to_string(delta));
      }
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(f, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace qpdyn
