#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <tuple>
#include <vector>

#include "qpdyn/error.hpp"

namespace qpdyn {

/// %.17g round-trips every double.
inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
inline std::string fmt(long long x) { return std::to_string(x); }
inline std::string fmt(std::size_t x) { return std::to_string(x); }
inline std::string fmt(int x) { return std::to_string(x); }
inline std::string fmt(bool x) { return x ? "1" : "0"; }

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  CsvTable& comment(std::string line) {
    comments_.push_back(std::move(line));
    return *this;
  }
  CsvTable& row(std::vector<std::string> cells) {
    if (cells.size() != columns_.size())
      throw Error("csv: row has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(columns_.size()));
    rows_.push_back(std::move(cells));
    return *this;
  }
  std::size_t size() const { return rows_.size(); }

  /// '#' comment lines, then '# a, b, c' with the column names, then the rows.
  std::string render() const {
    std::string s;
    for (const auto& c : comments_) s += "# " + c + "\n";
    s += "#";
    for (std::size_t i = 0; i < columns_.size(); ++i) s += (i ? ", " : " ") + columns_[i];
    s += "\n";
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
      s += "\n";
    }
    return s;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::string> comments_;
  std::vector<std::vector<std::string>> rows_;
};

/// Output directory for one run. Writability is checked on construction so a
/// bad --out fails before any computation. Files written through the sink are
/// removed again by discard() (called on failure).
class OutputSink {
 public:
  OutputSink() = default;
  explicit OutputSink(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("output directory " + dir_.string() + " cannot be created: " + ec.message());
    const auto probe = dir_ / ".qpdyn-write-probe";
    {
      std::ofstream f(probe);
      if (!f || !(f << "ok")) throw ConfigError("output directory " + dir_.string() + " is not writable");
    }
    std::filesystem::remove(probe, ec);
    start_ = std::chrono::steady_clock::now();
  }

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  void write_text(const std::string& name, const std::string& text) {
    if (!enabled()) return;
    const auto path = dir_ / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    files_.push_back(name);
    f << text;
    if (!f) throw Error("write to " + path.string() + " failed");
  }

  void write_csv(const std::string& name, const CsvTable& t) { write_text(name, t.render()); }

  /// A gnuplot script drawing columns of a CSV written next to it.
  void write_plot(const std::string& name, const std::string& csv, const std::string& xlabel, const std::string& ylabel,
                  const std::vector<std::tuple<int, int, std::string>>& xy, bool logx, bool logy) {
    std::string s = "set datafile separator ','\nset datafile commentschars '#'\n";
    s += "set xlabel '" + xlabel + "'\nset ylabel '" + ylabel + "'\n";
    if (logx) s += "set logscale x\n";
    if (logy) s += "set logscale y\n";
    s += "plot ";
    for (std::size_t i = 0; i < xy.size(); ++i) {
      const auto& [x, y, title] = xy[i];
      s += (i ? ", " : "") + std::string("'") + csv + "' using " + std::to_string(x) + ":" + std::to_string(y) +
           " with linespoints title '" + title + "'";
    }
    s += "\npause -1\n";
    write_text(name, s);
  }

  /// Config echo, version, timing and the list of files. Timing is kept out of
  /// the CSVs so those stay byte-identical between runs.
  void write_manifest(const nlohmann::json& config, const std::string& command, const nlohmann::json& summary = {}) {
    if (!enabled()) return;
    nlohmann::json m;
    m["command"] = command;
#ifdef QPDYN_VERSION
    m["version"] = QPDYN_VERSION;
#endif
    m["config"] = config;
    m["summary"] = summary;
    m["files"] = files_;
    m["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text("manifest.json", m.dump(2) + "\n");
  }

  void discard() {
    std::error_code ec;
    for (const auto& f : files_) std::filesystem::remove(dir_ / f, ec);
    files_.clear();
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace qpdyn
