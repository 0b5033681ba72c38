#pragma once

// Stage artifact readers/writers: profile and OD as JSON, flow tensors and
// graphs as CSV with JSON node sidecars, labels, predictions, metrics.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpgcn/analysis.hpp"
#include "mpgcn/csv.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/timeutil.hpp"

namespace mpgcn {

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

// --- passenger profile --------------------------------------------------------------

inline void write_profile_json(const PassengerStopProfile& profile,
                               const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "mpgcn-profile/1";
  auto& passengers = j["passengers"];
  passengers = nlohmann::json::object();
  for (const auto& [card, boardings] : profile.passengers) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& b : boardings)
      rows.push_back({format_timestamp(b.time), b.stop_id, b.route_id});
    passengers[card] = std::move(rows);
  }
  write_json_file(path, j);
}

inline PassengerStopProfile read_profile_json(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  PassengerStopProfile profile;
  for (const auto& [card, rows] : j.at("passengers").items()) {
    auto& v = profile.passengers[card];
    for (const auto& r : rows) {
      auto t = parse_timestamp(r[0].get<std::string>());
      if (!t) throw IoError(path.string() + ": bad timestamp in profile");
      v.push_back({*t, r[1].get<std::string>(), r[2].get<std::string>()});
    }
  }
  return profile;
}

// --- OD matrix -------------------------------------------------------------------------

inline void write_od_json(const ODMatrix& od, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "mpgcn-od/1";
  j["stops"] = od.stops;
  auto& entries = j["entries"];
  entries = nlohmann::json::array();
  for (std::size_t i = 0; i < od.size(); ++i)
    for (std::size_t k = i + 1; k < od.size(); ++k)
      if (od.at(i, k) != 0) entries.push_back({i, k, od.at(i, k)});
  write_json_file(path, j);
}

inline ODMatrix read_od_json(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  ODMatrix od(j.at("stops").get<std::vector<std::string>>());
  for (const auto& e : j.at("entries")) {
    const std::size_t i = e[0].get<std::size_t>();
    const std::size_t k = e[1].get<std::size_t>();
    od.at(i, k) = e[2].get<long>();
    od.at(k, i) = e[2].get<long>();
  }
  return od;
}

// --- flow tensors ------------------------------------------------------------------------

// Rows are time slots, columns stop ids; the first column is the slot start.
inline void write_flow_csv(const FlowTensor& flow, const std::filesystem::path& path) {
  CsvWriter w(path.string());
  std::string header = "time";
  for (const auto& s : flow.stops) header += "," + s;
  w.raw(header);
  for (std::size_t t = 0; t < flow.time_steps(); ++t) {
    std::string row = format_timestamp(flow.time_of_row(t));
    for (std::size_t s = 0; s < flow.stops.size(); ++s)
      row += "," + format_double(flow.values.at(t, s));
    w.raw(row);
  }
  w.close();
}

inline FlowTensor read_flow_csv(const std::filesystem::path& path) {
  CsvReader in(path.string());
  std::vector<std::string> fields;
  if (!in.next(fields) || fields.empty() || fields[0] != "time")
    throw IoError(path.string() + ": expected a flow CSV header starting with 'time'");
  FlowTensor flow;
  flow.stops.assign(fields.begin() + 1, fields.end());
  std::vector<std::int64_t> times;
  std::vector<double> data;
  while (in.next(fields)) {
    if (fields.size() != flow.stops.size() + 1)
      throw IoError(path.string() + ": ragged flow row");
    auto t = parse_timestamp(fields[0]);
    if (!t) throw IoError(path.string() + ": bad flow timestamp " + fields[0]);
    times.push_back(*t);
    for (std::size_t s = 1; s < fields.size(); ++s) data.push_back(std::stod(fields[s]));
  }
  if (times.size() < 2) throw IoError(path.string() + ": flow needs at least two rows");
  flow.step_minutes = static_cast<int>((times[1] - times[0]) / 60);
  flow.start_day = day_of(times[0]);
  const int spd = flow.slots_per_day();
  if (times.size() % spd != 0)
    throw IoError(path.string() + ": row count is not a whole number of days");
  flow.n_days = static_cast<int>(times.size()) / spd;
  flow.values = Tensor({times.size(), flow.stops.size()}, std::move(data));
  for (std::size_t t = 0; t < times.size(); ++t)
    if (flow.time_of_row(t) != times[t])
      throw IoError(path.string() + ": timestamps do not follow the service-day grid");
  return flow;
}

// --- graphs ---------------------------------------------------------------------------------

inline void write_graph_csv(const SparseMatrix& adjacency,
                            const std::vector<std::string>& node_ids,
                            const std::filesystem::path& edge_path,
                            const std::filesystem::path& nodes_path) {
  CsvWriter w(edge_path.string());
  w.raw("src,dst,weight");
  for (const auto& e : adjacency.entries())
    w.row({node_ids[e.row], node_ids[e.col], format_double(e.value)});
  w.close();
  nlohmann::json j;
  j["format"] = "mpgcn-graph-nodes/1";
  j["nodes"] = node_ids;
  j["symmetric"] = adjacency.symmetric();
  write_json_file(nodes_path, j);
}

inline std::pair<SparseMatrix, std::vector<std::string>> read_graph_csv(
    const std::filesystem::path& edge_path, const std::filesystem::path& nodes_path) {
  auto j = read_json_file(nodes_path);
  auto nodes = j.at("nodes").get<std::vector<std::string>>();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) index[nodes[i]] = i;
  CsvReader in(edge_path.string());
  in.expect_header("src,dst,weight");
  std::vector<SparseEntry> entries;
  std::vector<std::string> f;
  while (in.next(f)) {
    if (f.size() != 3) throw IoError(edge_path.string() + ": ragged edge row");
    entries.push_back({index.at(f[0]), index.at(f[1]), std::stod(f[2])});
  }
  return {SparseMatrix::from_triplets(nodes.size(), nodes.size(), std::move(entries),
                                      j.value("symmetric", false)),
          std::move(nodes)};
}

// --- labels ----------------------------------------------------------------------------------

inline void write_labels_csv(const std::vector<std::string>& cards,
                             const std::vector<int>& labels,
                             const std::filesystem::path& path) {
  if (cards.size() != labels.size()) throw ContractError("write_labels_csv: length mismatch");
  CsvWriter w(path.string());
  w.raw("card_no,pattern");
  for (std::size_t i = 0; i < cards.size(); ++i)
    w.row({cards[i], std::to_string(labels[i])});
  w.close();
}

inline std::map<std::string, int> read_labels_csv(const std::filesystem::path& path) {
  CsvReader in(path.string());
  in.expect_header("card_no,pattern");
  std::map<std::string, int> labels;
  std::vector<std::string> f;
  while (in.next(f)) {
    if (f.size() != 2) throw IoError(path.string() + ": ragged label row");
    labels[f[0]] = std::stoi(f[1]);
  }
  return labels;
}

// --- predictions -------------------------------------------------------------------------------

struct PredictionRow {
  std::int64_t time = 0;
  std::string stop_id;
  std::string pattern;  // "0", "1", ... or "total"
  double predicted = 0.0;
  double actual = 0.0;
};

inline void write_predictions_csv(const std::vector<PredictionRow>& rows,
                                  const std::filesystem::path& path) {
  CsvWriter w(path.string());
  w.raw("timestamp,stop_id,pattern,predicted,actual");
  for (const auto& r : rows)
    w.row({format_timestamp(r.time), r.stop_id, r.pattern, format_double(r.predicted),
           format_double(r.actual)});
  w.close();
}

inline std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  CsvReader in(path.string());
  in.expect_header("timestamp,stop_id,pattern,predicted,actual");
  std::vector<PredictionRow> rows;
  std::vector<std::string> f;
  while (in.next(f)) {
    if (f.size() != 5) throw IoError(path.string() + ": ragged prediction row");
    auto t = parse_timestamp(f[0]);
    if (!t) throw IoError(path.string() + ": bad prediction timestamp");
    rows.push_back({*t, f[1], f[2], std::stod(f[3]), std::stod(f[4])});
  }
  return rows;
}

}  // namespace mpgcn
