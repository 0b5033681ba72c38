#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mpgcn/clustering.hpp"
#include "mpgcn/errors.hpp"
#include "mpgcn/optimizer.hpp"
#include "mpgcn/predictor.hpp"
#include "mpgcn/rng.hpp"
#include "mpgcn/synth.hpp"

namespace mpgcn {

// --- TOML subset ------------------------------------------------------------------
// Sections, scalar values (integer, float, bool, quoted string), flat arrays,
// and one level of array nesting (for per-pattern matrices). Comments with #.

class TomlValue {
 public:
  using Array = std::vector<TomlValue>;
  std::variant<std::int64_t, double, bool, std::string, Array> v;

  bool is_array() const { return std::holds_alternative<Array>(v); }

  double as_double(const std::string& key) const {
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    if (std::holds_alternative<std::int64_t>(v))
      return static_cast<double>(std::get<std::int64_t>(v));
    throw ConfigError(key + ": expected a number");
  }
  std::int64_t as_int(const std::string& key) const {
    if (std::holds_alternative<std::int64_t>(v)) return std::get<std::int64_t>(v);
    throw ConfigError(key + ": expected an integer");
  }
  bool as_bool(const std::string& key) const {
    if (std::holds_alternative<bool>(v)) return std::get<bool>(v);
    throw ConfigError(key + ": expected a boolean");
  }
  const std::string& as_string(const std::string& key) const {
    if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
    throw ConfigError(key + ": expected a string");
  }
  const Array& as_array(const std::string& key) const {
    if (std::holds_alternative<Array>(v)) return std::get<Array>(v);
    throw ConfigError(key + ": expected an array");
  }
};

class TomlTable {
 public:
  std::map<std::string, TomlValue> values;  // "section.key"

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second.as_int(key);
  }
  double get_double(const std::string& key, double dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second.as_double(key);
  }
  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second.as_bool(key);
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values.find(key);
    return it == values.end() ? dflt : it->second.as_string(key);
  }
  std::vector<double> get_double_array(const std::string& key,
                                       std::vector<double> dflt = {}) const {
    auto it = values.find(key);
    if (it == values.end()) return dflt;
    std::vector<double> out;
    for (const auto& v : it->second.as_array(key)) out.push_back(v.as_double(key));
    return out;
  }
  std::vector<int> get_int_array(const std::string& key, std::vector<int> dflt = {}) const {
    auto it = values.find(key);
    if (it == values.end()) return dflt;
    std::vector<int> out;
    for (const auto& v : it->second.as_array(key))
      out.push_back(static_cast<int>(v.as_int(key)));
    return out;
  }
  std::vector<std::vector<double>> get_matrix(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) return {};
    std::vector<std::vector<double>> out;
    for (const auto& row : it->second.as_array(key)) {
      out.emplace_back();
      for (const auto& v : row.as_array(key)) out.back().push_back(v.as_double(key));
    }
    return out;
  }
};

namespace tomldetail {

inline void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

inline TomlValue parse_value(const std::string& s, std::size_t& i, int line);

inline TomlValue parse_array(const std::string& s, std::size_t& i, int line) {
  TomlValue::Array arr;
  ++i;  // consume '['
  while (true) {
    skip_ws(s, i);
    if (i >= s.size()) throw ConfigError("line " + std::to_string(line) + ": unterminated array");
    if (s[i] == ']') {
      ++i;
      break;
    }
    arr.push_back(parse_value(s, i, line));
    skip_ws(s, i);
    if (i < s.size() && s[i] == ',') ++i;
  }
  TomlValue v;
  v.v = std::move(arr);
  return v;
}

inline TomlValue parse_value(const std::string& s, std::size_t& i, int line) {
  skip_ws(s, i);
  if (i >= s.size()) throw ConfigError("line " + std::to_string(line) + ": missing value");
  TomlValue out;
  if (s[i] == '[') return parse_array(s, i, line);
  if (s[i] == '"') {
    std::string str;
    ++i;
    while (i < s.size() && s[i] != '"') str.push_back(s[i++]);
    if (i >= s.size()) throw ConfigError("line " + std::to_string(line) + ": unterminated string");
    ++i;
    out.v = std::move(str);
    return out;
  }
  std::size_t start = i;
  while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != ' ' && s[i] != '\t') ++i;
  std::string tok = s.substr(start, i - start);
  if (tok == "true") {
    out.v = true;
    return out;
  }
  if (tok == "false") {
    out.v = false;
    return out;
  }
  try {
    if (tok.find_first_of(".eE") == std::string::npos) {
      std::size_t pos = 0;
      const long long n = std::stoll(tok, &pos);
      if (pos == tok.size()) {
        out.v = static_cast<std::int64_t>(n);
        return out;
      }
    }
    std::size_t pos = 0;
    const double d = std::stod(tok, &pos);
    if (pos != tok.size())
      throw ConfigError("line " + std::to_string(line) + ": bad number '" + tok + "'");
    out.v = d;
    return out;
  } catch (const std::invalid_argument&) {
    throw ConfigError("line " + std::to_string(line) + ": bad value '" + tok + "'");
  }
}

}  // namespace tomldetail

inline TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comment (quotes in our configs never contain '#')
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line = line.substr(0, i);
        break;
      }
    }
    std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    std::size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string full = section.empty() ? key : section + "." + key;
    std::size_t i = eq + 1;
    table.values[full] = tomldetail::parse_value(line, i, lineno);
  }
  return table;
}

inline TomlTable parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_toml(os.str());
}

// --- run configuration ---------------------------------------------------------------

// Paper-stated values are the defaults wherever the paper names one:
// tau=20s, alpha=0.5, theta=(1,0.5,0.05), learning rate 0.001, epochs 100,
// batch 64, kernel 3, eps=5, K=4.
struct RunConfig {
  std::uint64_t seed = 42;
  int jobs = 1;

  CityConfig city;

  std::int64_t tau = 20;
  int step_minutes = 5;
  std::size_t min_records = 10;
  int min_active_span_days = 1;

  bool bidirectional_routes = true;
  double affinity_sigma = 0.0;  // 0: median edge distance

  ClusterTrainConfig cluster;
  PredictorConfig predictor;
  OptimizerConfig optimizer;
  int fit_bins = 20;
  int fit_starts = 8;

  void validate() const {
    if (step_minutes != 5 && step_minutes != 15 && step_minutes != 30)
      throw ConfigError("step_minutes must be 5, 15, or 30");
    if (tau < 0) throw ConfigError("tau must be non-negative");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    cluster.validate();
    predictor.validate();
    if (optimizer.eps < 0) throw ConfigError("optimizer eps must be >= 0");
    if (optimizer.reroute_fraction < 0.0 || optimizer.reroute_fraction > 1.0)
      throw ConfigError("reroute_fraction must lie in [0,1]");
  }
};

inline RunConfig run_config_from_toml(const TomlTable& t) {
  RunConfig c;
  c.seed = static_cast<std::uint64_t>(t.get_int("run.seed", 42));
  c.jobs = static_cast<int>(t.get_int("run.jobs", 1));

  c.city.n_stops = static_cast<int>(t.get_int("synth.n_stops", c.city.n_stops));
  c.city.n_routes = static_cast<int>(t.get_int("synth.n_routes", c.city.n_routes));
  c.city.route_min_len = static_cast<int>(t.get_int("synth.route_min_len", c.city.route_min_len));
  c.city.route_max_len = static_cast<int>(t.get_int("synth.route_max_len", c.city.route_max_len));
  c.city.buses_per_route =
      static_cast<int>(t.get_int("synth.buses_per_route", c.city.buses_per_route));
  c.city.n_passengers = static_cast<int>(t.get_int("synth.n_passengers", c.city.n_passengers));
  c.city.n_patterns = static_cast<int>(t.get_int("synth.n_patterns", c.city.n_patterns));
  c.city.pattern_sizes = t.get_int_array("synth.pattern_sizes", c.city.pattern_sizes);
  {
    auto m = t.get_matrix("synth.route_preference");
    if (!m.empty()) c.city.route_preference = std::move(m);
  }
  c.city.trips_per_day = t.get_double_array("synth.trips_per_day", c.city.trips_per_day);
  c.city.ns_median = t.get_double_array("synth.ns_median", c.city.ns_median);
  c.city.ns_sigma = t.get_double_array("synth.ns_sigma", c.city.ns_sigma);
  c.city.morning_amp = t.get_double_array("synth.morning_amp", c.city.morning_amp);
  c.city.midday_amp = t.get_double_array("synth.midday_amp", c.city.midday_amp);
  c.city.evening_amp = t.get_double_array("synth.evening_amp", c.city.evening_amp);
  c.city.daily_amplitude_sigma =
      t.get_double("synth.daily_amplitude_sigma", c.city.daily_amplitude_sigma);
  c.city.days = static_cast<int>(t.get_int("synth.days", c.city.days));
  c.city.unmatched_fraction =
      t.get_double("synth.unmatched_fraction", c.city.unmatched_fraction);
  c.city.drop_bus_day = t.get_bool("synth.drop_bus_day", c.city.drop_bus_day);
  c.city.seed = static_cast<std::uint64_t>(
      t.get_int("synth.seed", static_cast<std::int64_t>(sub_seed(c.seed, "synth"))));

  c.tau = t.get_int("ingest.tau", c.tau);
  c.step_minutes = static_cast<int>(t.get_int("ingest.step_minutes", c.step_minutes));
  c.min_records =
      static_cast<std::size_t>(t.get_int("ingest.min_records", static_cast<std::int64_t>(c.min_records)));
  c.min_active_span_days =
      static_cast<int>(t.get_int("ingest.min_active_span_days", c.min_active_span_days));

  c.bidirectional_routes = t.get_bool("graphs.bidirectional_routes", c.bidirectional_routes);
  c.affinity_sigma = t.get_double("graphs.affinity_sigma", c.affinity_sigma);

  {
    auto w = t.get_int_array("clustering.widths", {});
    if (!w.empty()) {
      c.cluster.widths.clear();
      for (int x : w) c.cluster.widths.push_back(static_cast<std::size_t>(x));
    }
  }
  c.cluster.k = static_cast<std::size_t>(t.get_int("clustering.k", static_cast<std::int64_t>(c.cluster.k)));
  c.cluster.alpha = t.get_double("clustering.alpha", c.cluster.alpha);
  c.cluster.dof = static_cast<int>(t.get_int("clustering.dof", c.cluster.dof));
  {
    auto th = t.get_double_array("clustering.theta", {c.cluster.theta1, c.cluster.theta2,
                                                      c.cluster.theta3});
    if (th.size() != 3) throw ConfigError("clustering.theta must have three entries");
    c.cluster.theta1 = th[0];
    c.cluster.theta2 = th[1];
    c.cluster.theta3 = th[2];
  }
  c.cluster.learning_rate = t.get_double("clustering.learning_rate", c.cluster.learning_rate);
  c.cluster.pretrain_epochs =
      static_cast<int>(t.get_int("clustering.pretrain_epochs", c.cluster.pretrain_epochs));
  c.cluster.epochs = static_cast<int>(t.get_int("clustering.epochs", c.cluster.epochs));
  {
    const std::string act = t.get_string("clustering.ae_output", "sigmoid");
    if (act == "sigmoid") c.cluster.ae_output = Activation::Sigmoid;
    else if (act == "relu") c.cluster.ae_output = Activation::Relu;
    else if (act == "identity") c.cluster.ae_output = Activation::Identity;
    else throw ConfigError("clustering.ae_output must be sigmoid, relu, or identity");
  }
  c.cluster.seed = sub_seed(c.seed, "clustering");

  c.predictor.kernel = static_cast<int>(t.get_int("predictor.kernel", c.predictor.kernel));
  c.predictor.channels = static_cast<int>(t.get_int("predictor.channels", c.predictor.channels));
  c.predictor.window = static_cast<int>(t.get_int("predictor.window", c.predictor.window));
  c.predictor.learning_rate = t.get_double("predictor.learning_rate", c.predictor.learning_rate);
  c.predictor.epochs = static_cast<int>(t.get_int("predictor.epochs", c.predictor.epochs));
  c.predictor.batch_size =
      static_cast<int>(t.get_int("predictor.batch_size", c.predictor.batch_size));
  c.predictor.per_stop_bias = t.get_bool("predictor.per_stop_bias", c.predictor.per_stop_bias);
  c.predictor.val_days = static_cast<int>(t.get_int("predictor.val_days", c.predictor.val_days));
  c.predictor.test_days =
      static_cast<int>(t.get_int("predictor.test_days", c.predictor.test_days));
  c.predictor.seed = sub_seed(c.seed, "predictor");

  c.optimizer.eps = static_cast<int>(t.get_int("optimizer.eps", c.optimizer.eps));
  c.optimizer.candidate_cap =
      static_cast<int>(t.get_int("optimizer.candidate_cap", c.optimizer.candidate_cap));
  c.optimizer.max_sweeps =
      static_cast<int>(t.get_int("optimizer.max_sweeps", c.optimizer.max_sweeps));
  c.optimizer.reroute_fraction =
      t.get_double("optimizer.reroute_fraction", c.optimizer.reroute_fraction);

  c.fit_bins = static_cast<int>(t.get_int("analysis.bins", c.fit_bins));
  c.fit_starts = static_cast<int>(t.get_int("analysis.starts", c.fit_starts));

  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.city.seed = sub_seed(c.seed, "synth");
    c.cluster.seed = sub_seed(c.seed, "clustering");
    c.predictor.seed = sub_seed(c.seed, "predictor");
    c.validate();
    return c;
  }
  return run_config_from_toml(parse_toml_file(path));
}

// Canonical JSON rendering; used for the run manifests and the config hash.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["run"] = {{"seed", c.seed}, {"jobs", c.jobs}};
  j["synth"] = {{"n_stops", c.city.n_stops},
                {"n_routes", c.city.n_routes},
                {"route_min_len", c.city.route_min_len},
                {"route_max_len", c.city.route_max_len},
                {"buses_per_route", c.city.buses_per_route},
                {"n_passengers", c.city.n_passengers},
                {"n_patterns", c.city.n_patterns},
                {"pattern_sizes", c.city.pattern_sizes},
                {"route_preference", c.city.route_preference},
                {"trips_per_day", c.city.trips_per_day},
                {"ns_median", c.city.ns_median},
                {"ns_sigma", c.city.ns_sigma},
                {"morning_amp", c.city.morning_amp},
                {"midday_amp", c.city.midday_amp},
                {"evening_amp", c.city.evening_amp},
                {"daily_amplitude_sigma", c.city.daily_amplitude_sigma},
                {"days", c.city.days},
                {"unmatched_fraction", c.city.unmatched_fraction},
                {"drop_bus_day", c.city.drop_bus_day},
                {"seed", c.city.seed}};
  j["ingest"] = {{"tau", c.tau},
                 {"step_minutes", c.step_minutes},
                 {"min_records", c.min_records},
                 {"min_active_span_days", c.min_active_span_days}};
  j["graphs"] = {{"bidirectional_routes", c.bidirectional_routes},
                 {"affinity_sigma", c.affinity_sigma}};
  j["clustering"] = {{"widths", c.cluster.widths},
                     {"k", c.cluster.k},
                     {"alpha", c.cluster.alpha},
                     {"dof", c.cluster.dof},
                     {"theta", {c.cluster.theta1, c.cluster.theta2, c.cluster.theta3}},
                     {"learning_rate", c.cluster.learning_rate},
                     {"pretrain_epochs", c.cluster.pretrain_epochs},
                     {"epochs", c.cluster.epochs},
                     {"ae_output", static_cast<int>(c.cluster.ae_output)}};
  j["predictor"] = {{"kernel", c.predictor.kernel},
                    {"channels", c.predictor.channels},
                    {"window", c.predictor.window},
                    {"learning_rate", c.predictor.learning_rate},
                    {"epochs", c.predictor.epochs},
                    {"batch_size", c.predictor.batch_size},
                    {"per_stop_bias", c.predictor.per_stop_bias},
                    {"val_days", c.predictor.val_days},
                    {"test_days", c.predictor.test_days}};
  j["optimizer"] = {{"eps", c.optimizer.eps},
                    {"candidate_cap", c.optimizer.candidate_cap},
                    {"max_sweeps", c.optimizer.max_sweeps},
                    {"reroute_fraction", c.optimizer.reroute_fraction}};
  j["analysis"] = {{"bins", c.fit_bins}, {"starts", c.fit_starts}};
  return j;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(config_to_json(c).dump())));
  return buf;
}

}  // namespace mpgcn
