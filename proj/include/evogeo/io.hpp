#pragma once

// Flat `key = value` configuration files and trajectory export/import.
//
//   # comment
//   F = [200, 200^1.08, 200^1.12]
//   Q = [[0, 0.5, 0.5], [0, 0, 1], [0, 0, 0]]
//   m = 1e-6
//
// Any number may be written as base^exponent.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evogeo/core.hpp"
#include "evogeo/geodesic.hpp"
#include "evogeo/trajectory.hpp"

namespace evogeo {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  auto to_d = [&](const std::string& t) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(trim(t), &pos);
    } catch (...) {
      throw IoError("config key '" + key + "': cannot parse number '" + s + "'");
    }
    if (pos != trim(t).size()) throw IoError("config key '" + key + "': trailing characters in '" + s + "'");
    return v;
  };
  const auto caret = s.find('^');
  if (caret != std::string::npos) return std::pow(to_d(s.substr(0, caret)), to_d(s.substr(caret + 1)));
  return to_d(s);
}

// "[a, b, c]" -> {a, b, c}; a bare scalar parses as a single element.
inline std::vector<double> parse_vector(const std::string& raw, const std::string& key) {
  std::string s = trim(raw);
  if (s.empty()) throw IoError("config key '" + key + "': empty value");
  if (s.front() == '[') {
    if (s.back() != ']') throw IoError("config key '" + key + "': unbalanced brackets");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) throw IoError("config key '" + key + "': empty array element");
    out.push_back(parse_number(item, key));
  }
  return out;
}

// "[[..], [..]]" or a flat row-major list of g*g numbers.
inline std::vector<std::vector<double>> parse_matrix(const std::string& raw, const std::string& key) {
  std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw IoError("config key '" + key + "': expected [[...], ...]");
  s = trim(s.substr(1, s.size() - 2));
  std::vector<std::vector<double>> rows;
  if (s.empty() || s.front() != '[') {
    rows.push_back(parse_vector("[" + s + "]", key));
    return rows;
  }
  std::size_t i = 0;
  while (i < s.size()) {
    const auto open = s.find('[', i);
    if (open == std::string::npos) break;
    const auto close = s.find(']', open);
    if (close == std::string::npos) throw IoError("config key '" + key + "': unbalanced brackets");
    rows.push_back(parse_vector(s.substr(open, close - open + 1), key));
    i = close + 1;
  }
  return rows;
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw IoError("config key '" + key + "': expected true/false");
}

}  // namespace detail

// Raw key/value pairs with usage tracking so unknown keys are reported.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValueFile f;
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        std::ostringstream os;
        os << origin << ":" << ln << ": expected 'key = value'";
        throw IoError(os.str());
      }
      const std::string k = detail::trim(line.substr(0, eq));
      if (k.empty()) throw IoError(origin + ":" + std::to_string(ln) + ": empty key");
      f.kv_[k] = detail::trim(line.substr(eq + 1));
    }
    return f;
  }
  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& k) const { return kv_.count(k) != 0; }
  const std::string& raw(const std::string& k) const {
    used_.insert(k);
    return kv_.at(k);
  }
  void set(const std::string& k, const std::string& v) { kv_[k] = v; }
  double number(const std::string& k, double dflt) const { return has(k) ? detail::parse_number(raw(k), k) : dflt; }
  std::vector<double> vec(const std::string& k) const { return detail::parse_vector(raw(k), k); }
  std::vector<std::vector<double>> matrix(const std::string& k) const { return detail::parse_matrix(raw(k), k); }
  bool flag(const std::string& k, bool dflt) const { return has(k) ? detail::parse_bool(raw(k), k) : dflt; }
  std::string str(const std::string& k, const std::string& dflt) const { return has(k) ? raw(k) : dflt; }

  std::vector<std::string> unused() const {
    std::vector<std::string> u;
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) u.push_back(k);
    return u;
  }

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

struct SweepRange {
  double lo = 0.0, hi = 0.0, step = 0.0;
  std::vector<double> values() const {
    std::vector<double> v;
    const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
    for (int i = 0; i <= n; ++i) v.push_back(lo + step * i);
    return v;
  }
};

struct RunConfig {
  ModelParams model;
  SearchConfig search;
  std::optional<Histogram> H, G;
  std::uint64_t seed = 42;
  std::uint64_t trials = 1'000'000;
  int days = 50;
  int runs = 10;
  SweepRange sweep_w2{0.20, 0.50, 0.01};
  SweepRange sweep_w1{0.990, 0.999, 0.001};
  double sweep_g1 = 0.35;
  double landscape_epsilon = 2e-3;
  std::vector<double> quantiles{0.05, 0.10};
  std::vector<std::uint64_t> ld_n_values{100, 200, 400, 800};
};

namespace detail {

inline std::vector<std::uint64_t> to_u64(const std::vector<double>& v, const std::string& key) {
  std::vector<std::uint64_t> out;
  for (double x : v) {
    if (!(x >= 1.0) || x != std::floor(x)) throw IoError("config key '" + key + "': expected positive integers");
    out.push_back(static_cast<std::uint64_t>(x));
  }
  return out;
}

}  // namespace detail

// Builds and validates a RunConfig; every problem names the offending key.
inline RunConfig parse_run_config(const KeyValueFile& f) {
  RunConfig c;
  ModelParams& P = c.model;
  std::vector<double> F;
  if (f.has("F")) {
    F = f.vec("F");
  } else if (f.has("fitness_exponents")) {
    const double base = f.number("fitness_base", 200.0);
    for (double e : f.vec("fitness_exponents")) F.push_back(std::pow(base, e));
  } else {
    throw IoError("config: missing growth factors (key 'F' or 'fitness_exponents')");
  }
  P.g = F.size();
  if (f.has("g") && static_cast<std::size_t>(f.number("g", 0)) != P.g) throw IoError("config key 'g': does not match length of F");
  P.F = F;
  if (!f.has("Q")) throw IoError("config: missing key 'Q'");
  const auto rows = f.matrix("Q");
  std::vector<double> q;
  if (rows.size() == 1 && rows[0].size() == P.g * P.g) {
    q = rows[0];
  } else {
    if (rows.size() != P.g) throw IoError("config key 'Q': expected g rows");
    for (const auto& r : rows) {
      if (r.size() != P.g) throw IoError("config key 'Q': expected g columns per row");
      q.insert(q.end(), r.begin(), r.end());
    }
  }
  P.Q = SquareMatrix(P.g, q);
  P.m = f.number("m", 1e-6);
  const double N = f.number("N", 1e6);
  if (!(N >= 1.0) || N != std::floor(N)) throw IoError("config key 'N': expected a positive integer");
  P.N = static_cast<std::uint64_t>(N);
  P.delta = f.number("delta", 50.0 / N);
  try {
    P.validate();
  } catch (const DomainError& e) {
    throw IoError(std::string("config: ") + e.what());
  }

  SearchConfig& s = c.search;
  s.epsilon = f.number("epsilon", s.epsilon);
  s.eta = f.number("eta", s.eta);
  s.delta = f.number("search_delta", 0.0);
  s.max_reverse_len = static_cast<int>(f.number("max_reverse_len", s.max_reverse_len));
  s.quantile = f.number("quantile", s.quantile);
  auto keyword = [&](const char* k, auto parse, auto& out) {
    if (!f.has(k)) return;
    try {
      out = parse(f.raw(k));
    } catch (const DomainError& e) {
      throw IoError(std::string("config key '") + k + "': " + e.what());
    }
  };
  keyword("pen_strategy", parse_pen_strategy, s.pen_strategy);
  s.ball_radius = f.number("ball_radius", s.ball_radius);
  s.stages_max = static_cast<int>(f.number("stages_max", s.stages_max));
  s.refine = f.flag("refine", s.refine);
  s.refine_factor = f.number("refine_factor", s.refine_factor);
  s.refine_half_width = static_cast<int>(f.number("refine_half_width", s.refine_half_width));
  s.refine_min_spacing = f.number("refine_min_spacing", s.refine_min_spacing);
  s.use_test_path_cap = f.flag("use_test_path_cap", s.use_test_path_cap);
  s.stage2_epsilon = f.number("stage2_epsilon", s.stage2_epsilon);
  s.mean_tol = f.number("mean_tol", s.mean_tol);
  s.mean_max_steps = static_cast<int>(f.number("mean_max_steps", s.mean_max_steps));
  keyword("mode", parse_cost_mode, s.report_mode);
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw IoError(std::string("config: ") + e.what());
  }

  auto hist = [&](const char* k) -> std::optional<Histogram> {
    if (!f.has(k)) return std::nullopt;
    const auto v = f.vec(k);
    if (v.size() != P.g) throw IoError(std::string("config key '") + k + "': expected g coordinates");
    try {
      return validate_histogram(v);
    } catch (const DomainError& e) {
      throw IoError(std::string("config key '") + k + "': " + e.what());
    }
  };
  c.H = hist("H");
  c.G = hist("G");
  c.seed = static_cast<std::uint64_t>(f.number("seed", static_cast<double>(c.seed)));
  c.trials = static_cast<std::uint64_t>(f.number("trials", static_cast<double>(c.trials)));
  c.days = static_cast<int>(f.number("days", c.days));
  c.runs = static_cast<int>(f.number("runs", c.runs));
  if (f.has("sweep_w2")) {
    const auto v = f.vec("sweep_w2");
    if (v.size() != 3) throw IoError("config key 'sweep_w2': expected [lo, hi, step]");
    c.sweep_w2 = {v[0], v[1], v[2]};
  }
  if (f.has("sweep_w1")) {
    const auto v = f.vec("sweep_w1");
    if (v.size() != 3) throw IoError("config key 'sweep_w1': expected [lo, hi, step]");
    c.sweep_w1 = {v[0], v[1], v[2]};
  }
  for (const SweepRange* r : {&c.sweep_w2, &c.sweep_w1})
    if (!(r->step > 0.0) || r->hi < r->lo) throw IoError("config: sweep ranges need lo <= hi and step > 0");
  c.sweep_g1 = f.number("sweep_g1", c.sweep_g1);
  c.landscape_epsilon = f.number("landscape_epsilon", c.landscape_epsilon);
  if (f.has("quantiles")) c.quantiles = f.vec("quantiles");
  if (f.has("ld_n_values")) c.ld_n_values = detail::to_u64(f.vec("ld_n_values"), "ld_n_values");

  const auto unknown = f.unused();
  if (!unknown.empty()) throw IoError("config: unknown key '" + unknown.front() + "'");
  return c;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(KeyValueFile::load(path)); }

// ---------------------------------------------------------------------------
// Trajectory export

namespace detail {
inline std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}
}  // namespace detail

// step,gen1..gen{g},step_cost ; the last row carries no step cost.
inline void write_trajectory_csv(const Trajectory& t, std::ostream& out, std::size_t g) {
  out << "step";
  for (std::size_t j = 1; j <= g; ++j) out << ",gen" << j;
  out << ",step_cost\n";
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    out << i + 1;
    for (std::size_t j = 0; j < g; ++j) out << ',' << detail::fmt_sci(t.points[i][j]);
    out << ',';
    if (i < t.step_costs.size() && i + 1 < t.points.size()) out << detail::fmt_sci(t.step_costs[i]);
    out << '\n';
  }
}

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json j;
  j["points"] = nlohmann::json::array();
  for (const auto& p : t.points) j["points"].push_back(p.vec());
  j["step_costs"] = t.step_costs;
  j["total_cost"] = t.total_cost;
  j["length"] = t.points.size();
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  try {
    for (const auto& p : j.at("points")) t.points.push_back(Histogram::adopt(p.get<std::vector<double>>()));
    t.step_costs = j.at("step_costs").get<std::vector<double>>();
    t.total_cost = j.at("total_cost").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trajectory json: ") + e.what());
  }
  return t;
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void export_trajectory(const Trajectory& t, const std::string& csv_path, std::size_t g) {
  std::ostringstream csv;
  write_trajectory_csv(t, csv, g);
  write_text(csv_path, csv.str());
  write_text(csv_path + ".json", trajectory_to_json(t).dump(2) + "\n");
}

inline Trajectory import_trajectory_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path + "': " + e.what());
  }
  return trajectory_from_json(j);
}

// Parses the CSV written above back into points (costs at 7 significant digits).
inline Trajectory import_trajectory_csv(std::istream& in) {
  Trajectory t;
  std::string line;
  if (!std::getline(in, line)) return t;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() < 3) throw IoError("trajectory csv: short row");
    std::vector<double> v;
    for (std::size_t j = 1; j + 1 < cells.size(); ++j) v.push_back(detail::parse_number(cells[j], "csv"));
    t.points.push_back(validate_histogram(v, 1e-5));
    if (!detail::trim(cells.back()).empty()) {
      t.step_costs.push_back(detail::parse_number(cells.back(), "csv"));
      t.total_cost += t.step_costs.back();
    }
  }
  return t;
}

inline nlohmann::json geodesic_summary_json(const GeodesicResult& r, const Histogram& H, const Histogram& G) {
  nlohmann::json j;
  j["H"] = H.vec();
  j["G"] = G.vec();
  j["total_cost"] = r.path.total_cost;
  j["length"] = r.path.points.size();
  j["penultimate"] = r.penultimate.vec();
  j["nu"] = r.nu;
  j["kappa"] = r.kappa;
  j["status"] = r.complete ? "complete" : "incomplete";
  j["stage"] = r.stage;
  j["jump_cost"] = r.jump_cost;
  j["lambda0"] = r.lambda0;
  j["lambda1"] = r.lambda1;
  j["grid_cost"] = r.grid_cost;
  j["pen_size"] = r.pen_size;
  j["net_size"] = r.net_size;
  j["evaluated"] = r.evaluated;
  j["stage2_candidates"] = r.stage2_candidates;
  j["stage2_best"] = std::isfinite(r.stage2_best) ? nlohmann::json(r.stage2_best) : nlohmann::json(nullptr);
  j["c_constant"] = r.c_constant;
  j["wall_time_s"] = r.wall_seconds;
  return j;
}

}  // namespace evogeo
