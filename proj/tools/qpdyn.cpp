#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qpdyn/config.hpp"
#include "qpdyn/harness.hpp"
#include "qpdyn/output.hpp"

namespace {

enum ExitCode { ok = 0, hypothesis_unmet = 2, config_error = 3, numerical_failure = 4 };

struct Globals {
  std::string config;
  std::string out;
  std::optional<unsigned> threads;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::optional<double> coupling;
  std::optional<double> theta;
};

// Parses "lo1,lo2:hi1,hi2" into a box.
qpdyn::json parse_box(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw qpdyn::ConfigError("--box: expected LO:HI, got '" + text + "'");
  auto coords = [&](const std::string& s) {
    std::vector<int> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        v.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw qpdyn::ConfigError("--box: bad coordinate '" + tok + "'");
      }
    }
    return v;
  };
  return {{"lo", coords(text.substr(0, colon))}, {"hi", coords(text.substr(colon + 1))}};
}

qpdyn::json load_raw(const Globals& g, std::filesystem::path& base_dir) {
  qpdyn::json j = qpdyn::json::object();
  if (!g.config.empty()) {
    std::ifstream f(g.config);
    if (!f) throw qpdyn::ConfigError("cannot open config file " + g.config);
    try {
      j = qpdyn::json::parse(f, nullptr, true, true);
    } catch (const qpdyn::json::parse_error& e) {
      throw qpdyn::ConfigError("config " + g.config + ": " + e.what());
    }
    base_dir = std::filesystem::path(g.config).parent_path();
  }
  if (!g.preset.empty()) j["model"] = {{"preset", g.preset}};
  if (g.coupling) {
    if (!j.contains("model")) throw qpdyn::ConfigError("--coupling needs a model (--config or --preset)");
    j["model"]["coupling"] = *g.coupling;
  }
  if (g.theta) j["theta"] = {*g.theta};
  if (!j.contains("model")) throw qpdyn::ConfigError("no model: pass --config PATH or --preset NAME");
  if (g.seed) j["seed"] = *g.seed;
  if (g.threads) j["threads"] = *g.threads;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-volume transport, resonance and large-deviation experiments for quasiperiodic operators"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory for CSVs, plot scripts and the manifest");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Seed for the low-discrepancy phase sample");
  app.add_option("--preset", g.preset, "Named model instead of the config's model (almost-mathieu, free, skew-shift)");
  app.add_option("--coupling", g.coupling, "Coupling constant g");
  app.add_option("--theta", g.theta, "Phase (one-frequency models)");
#ifdef QPDYN_VERSION
  app.set_version_flag("--version", QPDYN_VERSION);
#endif

  // per-subcommand overrides, written into the config before it is validated
  std::vector<std::function<void(qpdyn::json&)>> patches;
  auto patch_value = [&](CLI::App* sub, const std::string& flag, const std::string& section, const std::string& key,
                         const std::string& help) {
    auto holder = std::make_shared<std::optional<double>>();
    sub->add_option(flag, *holder, help);
    patches.push_back([=](qpdyn::json& j) {
      if (*holder) j[section][key] = **holder;
    });
  };
  auto patch_list = [&](CLI::App* sub, const std::string& flag, const std::string& section, const std::string& key,
                        const std::string& help) {
    auto holder = std::make_shared<std::vector<double>>();
    sub->add_option(flag, *holder, help)->delimiter(',');
    patches.push_back([=](qpdyn::json& j) {
      if (!holder->empty()) j[section][key] = *holder;
    });
  };
  auto patch_volumes = [&](CLI::App* sub) {
    auto n = std::make_shared<std::optional<int>>();
    auto boxes = std::make_shared<std::vector<std::string>>();
    sub->add_option("--four-interval", *n, "Four-interval volume family of size N");
    sub->add_option("--box", *boxes, "Volume LO:HI (repeatable, coordinates comma-separated)");
    patches.push_back([=](qpdyn::json& j) {
      if (*n) j["volumes"] = {{"family", "four_interval"}, {"N", **n}};
      if (!boxes->empty()) {
        qpdyn::json list = qpdyn::json::array();
        for (const auto& b : *boxes) list.push_back(parse_box(b));
        j["volumes"] = {{"boxes", list}};
      }
    });
  };

  auto* build = app.add_subcommand("build", "Assemble H on the volumes and dump the spectrum");
  patch_value(build, "--half-width", "build", "half_width", "Cube half-width when no volumes are configured");
  patch_volumes(build);

  auto* evolve = app.add_subcommand("evolve", "Propagate from the origin: moments, truncation bound, ballistic fit");
  patch_value(evolve, "--half-width", "evolve", "half_width", "Box half-width");
  patch_list(evolve, "--p", "evolve", "p", "Moment orders");

  auto* green = app.add_subcommand("green-scan", "Measure of the intersection of resonant sets on an energy grid");
  patch_value(green, "--epsilon", "green", "epsilon", "Resonance threshold");
  patch_value(green, "--step", "green", "h", "Absolute energy step");
  patch_value(green, "--h-relative", "green", "h_relative", "Energy step relative to the spectral width");
  patch_value(green, "--complexify", "green", "complexify", "Evaluate at E + i*delta");
  patch_volumes(green);

  auto* ldt = app.add_subcommand("ldt", "Transfer-matrix large deviations over a scale ladder");
  patch_list(ldt, "--E", "ldt", "energies", "Energies");
  patch_list(ldt, "--N", "ldt", "N", "Scale ladder");
  patch_value(ldt, "--zeta", "ldt", "zeta", "Absolute deviation threshold");
  patch_value(ldt, "--zeta-relative", "ldt", "zeta_relative", "Deviation threshold as a fraction of gamma");
  patch_value(ldt, "--samples", "ldt", "samples", "Phase samples per rung");

  auto* theorem = app.add_subcommand("theorem-check", "Resonant-set hypothesis and escape bound, end to end");
  patch_list(theorem, "--delta", "theorem", "delta", "Delta ladder");
  patch_value(theorem, "--epsilon", "theorem", "epsilon", "Fixed epsilon (default delta^{8(nu+1)M})");
  patch_volumes(theorem);

  auto* moments = app.add_subcommand("moment-scan", "Moment growth against the polylogarithmic envelope");
  patch_value(moments, "--half-width", "moment_scan", "half_width", "Box half-width");
  patch_value(moments, "--phases", "moment_scan", "phases", "Phase sample size");
  patch_value(moments, "--rho", "moment_scan", "rho", "Large-deviation exponent for the envelope");

  auto* phases = app.add_subcommand("phase-uniformity", "Typical and atypical phases, perturbation to a typical one");
  patch_value(phases, "--phases", "phase_uniformity", "phases", "Phase sample size");
  patch_value(phases, "--delta", "phase_uniformity", "delta", "Typicality threshold on the resonant measure");
  patch_volumes(phases);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  qpdyn::OutputSink sink;
  try {
    std::filesystem::path base_dir;
    auto raw = load_raw(g, base_dir);
    for (const auto& p : patches) p(raw);
    // integer-valued knobs arrive as doubles from the override flags
    for (const char* sec : {"build", "evolve", "moment_scan", "phase_uniformity", "ldt"})
      if (raw.contains(sec))
        for (auto& [k, v] : raw[sec].items())
          if (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())) &&
              (k == "half_width" || k == "phases" || k == "samples"))
            v = static_cast<long long>(v.get<double>());
    if (raw.contains("ldt") && raw["ldt"].contains("N"))
      for (auto& v : raw["ldt"]["N"])
        if (v.is_number_float()) v = static_cast<long long>(v.get<double>());
    if (raw.contains("ldt") && raw["ldt"].contains("zeta_relative")) raw["ldt"].erase("zeta");

    const auto cfg = qpdyn::parse_config(raw, base_dir);
    if (!g.out.empty()) sink = qpdyn::OutputSink(g.out);

    qpdyn::RunResult r;
    if (command == "build") r = qpdyn::run_build(cfg, sink);
    else if (command == "evolve") r = qpdyn::run_evolve(cfg, sink);
    else if (command == "green-scan") r = qpdyn::run_green_scan(cfg, sink);
    else if (command == "ldt") r = qpdyn::run_ldt(cfg, sink);
    else if (command == "theorem-check") r = qpdyn::run_theorem_check(cfg, sink);
    else if (command == "moment-scan") r = qpdyn::run_moment_scan(cfg, sink);
    else r = qpdyn::run_phase_uniformity(cfg, sink);

    sink.write_manifest(raw, command, r.summary);
    std::cout << r.summary.dump(2) << "\n";
    if (r.hypothesis_unmet) {
      std::cerr << "qpdyn " << command << ": hypothesis unmet\n";
      return hypothesis_unmet;
    }
    return ok;
  } catch (const qpdyn::ConfigError& e) {
    sink.discard();
    std::cerr << "qpdyn " << command << ": config error: " << e.what() << "\n";
    return config_error;
  } catch (const qpdyn::UnsupportedModel& e) {
    sink.discard();
    std::cerr << "qpdyn " << command << ": unsupported model: " << e.what() << "\n";
    return config_error;
  } catch (const qpdyn::json::exception& e) {
    sink.discard();
    std::cerr << "qpdyn " << command << ": config error: " << e.what() << "\n";
    return config_error;
  } catch (const std::exception& e) {
    sink.discard();
    std::cerr << "qpdyn " << command << ": numerical failure: " << e.what() << "\n";
    return numerical_failure;
  }
}
