#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mpgcn/csv.hpp"
#include "mpgcn/errors.hpp"
#include "mpgcn/tensor.hpp"
#include "mpgcn/timeutil.hpp"

namespace mpgcn {

inline constexpr const char* kRideHeader = "bus_no,card_no,cardType,riding_time,routeId";
inline constexpr const char* kStopEventHeader =
    "bus_no,enterTime,leaveTime,stopId,routeId,directId,stayTime";
inline constexpr const char* kStopRegistryHeader = "stopId,routeId,seq,lon,lat";

struct RideRecord {
  std::string bus_no;
  std::string card_no;
  int card_type = 0;
  std::int64_t riding_time = 0;
  std::string route_id;
};

struct StopEvent {
  std::string bus_no;
  std::int64_t enter_time = 0;
  std::int64_t leave_time = 0;
  std::string stop_id;
  std::string route_id;
  int direct_id = 0;
  std::int64_t stay_time = 0;
};

struct ParseStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t stay_time_mismatches = 0;  // stayTime != leaveTime - enterTime; leaveTime wins
};

struct ParsedTables {
  std::vector<RideRecord> rides;
  std::vector<StopEvent> events;
  ParseStats ride_stats;
  ParseStats event_stats;
};

namespace detail {

inline std::optional<long> parse_long(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline void check_malformed_ratio(const std::string& path, const ParseStats& st) {
  if (st.rows > 0 && st.malformed * 10 > st.rows)
    throw IngestError(path + ": " + std::to_string(st.malformed) + " of " +
                      std::to_string(st.rows) + " rows malformed (>10%)");
}

}  // namespace detail

inline std::vector<RideRecord> parse_ride_table(const std::string& path, ParseStats& stats) {
  CsvReader in(path);
  in.expect_header(kRideHeader);
  std::vector<RideRecord> out;
  std::vector<std::string> f;
  while (in.next(f)) {
    ++stats.rows;
    if (f.size() != 5) {
      ++stats.malformed;
      continue;
    }
    const auto t = parse_timestamp(f[3]);
    const auto ct = detail::parse_long(f[2]);
    if (!t || !ct || f[0].empty() || f[1].empty() || f[4].empty()) {
      ++stats.malformed;
      continue;
    }
    out.push_back({f[0], f[1], static_cast<int>(*ct), *t, f[4]});
  }
  detail::check_malformed_ratio(path, stats);
  return out;
}

inline std::vector<StopEvent> parse_stop_table(const std::string& path, ParseStats& stats) {
  CsvReader in(path);
  in.expect_header(kStopEventHeader);
  std::vector<StopEvent> out;
  std::vector<std::string> f;
  while (in.next(f)) {
    ++stats.rows;
    if (f.size() != 7) {
      ++stats.malformed;
      continue;
    }
    const auto enter = parse_timestamp(f[1]);
    const auto leave = parse_timestamp(f[2]);
    const auto direct = detail::parse_long(f[5]);
    const auto stay = detail::parse_long(f[6]);
    if (!enter || !leave || !direct || !stay || f[0].empty() || f[3].empty() || f[4].empty() ||
        (*direct != 0 && *direct != 1) || *leave < *enter) {
      ++stats.malformed;
      continue;
    }
    StopEvent e{f[0], *enter, *leave, f[3], f[4], static_cast<int>(*direct), *stay};
    if (e.stay_time != e.leave_time - e.enter_time) {
      ++stats.stay_time_mismatches;
      e.stay_time = e.leave_time - e.enter_time;
    }
    out.push_back(std::move(e));
  }
  detail::check_malformed_ratio(path, stats);
  return out;
}

inline ParsedTables parse_tables(const std::string& ride_path, const std::string& stop_path) {
  ParsedTables t;
  t.rides = parse_ride_table(ride_path, t.ride_stats);
  t.events = parse_stop_table(stop_path, t.event_stats);
  return t;
}

// --- stop registry -----------------------------------------------------------

struct StopCoord {
  double lon = 0.0;
  double lat = 0.0;
};

// Stops with coordinates plus each route's stop sequence in canonical order.
struct StopRegistry {
  std::vector<std::string> stop_ids;  // unique, ascending; column/index order everywhere
  std::map<std::string, std::size_t> stop_index;
  std::map<std::string, std::vector<std::string>> route_stops;
  std::map<std::string, StopCoord> coords;

  std::size_t index_of(const std::string& stop) const {
    auto it = stop_index.find(stop);
    if (it == stop_index.end()) throw IngestError("unknown stop id '" + stop + "'");
    return it->second;
  }

  bool has_stop(const std::string& stop) const { return stop_index.count(stop) > 0; }

  void finalize() {
    std::sort(stop_ids.begin(), stop_ids.end());
    stop_ids.erase(std::unique(stop_ids.begin(), stop_ids.end()), stop_ids.end());
    stop_index.clear();
    for (std::size_t i = 0; i < stop_ids.size(); ++i) stop_index[stop_ids[i]] = i;
  }
};

inline StopRegistry parse_stop_registry(const std::string& path) {
  CsvReader in(path);
  in.expect_header(kStopRegistryHeader);
  StopRegistry reg;
  std::map<std::string, std::vector<std::pair<long, std::string>>> seqs;
  std::vector<std::string> f;
  std::size_t row = 1;
  while (in.next(f)) {
    ++row;
    if (f.size() != 5) throw IngestError(path + ": row " + std::to_string(row) + " malformed");
    const auto seq = detail::parse_long(f[2]);
    const auto lon = detail::parse_double(f[3]);
    const auto lat = detail::parse_double(f[4]);
    if (!seq || !lon || !lat)
      throw IngestError(path + ": row " + std::to_string(row) + " malformed");
    reg.stop_ids.push_back(f[0]);
    reg.coords[f[0]] = {*lon, *lat};
    seqs[f[1]].push_back({*seq, f[0]});
  }
  for (auto& [route, entries] : seqs) {
    std::sort(entries.begin(), entries.end());
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (entries[i].first != entries[i - 1].first + 1)
        throw IngestError(path + ": route " + route + " sequence positions are not consecutive");
    auto& stops = reg.route_stops[route];
    for (auto& [s, stop] : entries) stops.push_back(stop);
  }
  reg.finalize();
  return reg;
}

// --- stop matching -----------------------------------------------------------

struct Boarding {
  std::int64_t time = 0;
  std::string stop_id;
  std::string route_id;

  bool operator<(const Boarding& o) const {
    return std::tie(time, stop_id, route_id) < std::tie(o.time, o.stop_id, o.route_id);
  }
  bool operator==(const Boarding& o) const {
    return time == o.time && stop_id == o.stop_id && route_id == o.route_id;
  }
};

// Passenger id -> boardings ordered by timestamp.
struct PassengerStopProfile {
  std::map<std::string, std::vector<Boarding>> passengers;

  std::size_t total_boardings() const {
    std::size_t n = 0;
    for (const auto& [id, b] : passengers) n += b.size();
    return n;
  }
};

struct MatchResult {
  PassengerStopProfile profile;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
};

// Matches each ride to the first stop event (in event-time order) of the same
// bus and calendar date whose dwell window, widened by tau seconds on both
// sides, contains the riding time. The boarding's route id comes from the
// ride row; matching itself uses bus and time only.
inline MatchResult match_stops(const std::vector<RideRecord>& rides,
                               const std::vector<StopEvent>& events, std::int64_t tau) {
  if (tau < 0) throw ContractError("match_stops: tau must be >= 0");
  struct Key {
    std::string bus;
    std::int64_t day;
    bool operator<(const Key& o) const { return std::tie(bus, day) < std::tie(o.bus, o.day); }
  };
  std::map<Key, std::vector<const StopEvent*>> by_bus_day;
  for (const auto& e : events) by_bus_day[{e.bus_no, day_of(e.enter_time)}].push_back(&e);
  std::int64_t max_dwell = 0;
  for (auto& [k, v] : by_bus_day) {
    std::sort(v.begin(), v.end(), [](const StopEvent* a, const StopEvent* b) {
      return std::tie(a->enter_time, a->leave_time, a->stop_id) <
             std::tie(b->enter_time, b->leave_time, b->stop_id);
    });
    for (const auto* e : v) max_dwell = std::max(max_dwell, e->leave_time - e->enter_time);
  }

  MatchResult res;
  for (const auto& r : rides) {
    auto it = by_bus_day.find({r.bus_no, day_of(r.riding_time)});
    const StopEvent* hit = nullptr;
    if (it != by_bus_day.end()) {
      const auto& evs = it->second;
      // Candidates have enter_time in [t - tau - max_dwell, t + tau].
      auto lo = std::lower_bound(evs.begin(), evs.end(), r.riding_time - tau - max_dwell,
                                 [](const StopEvent* e, std::int64_t v) { return e->enter_time < v; });
      for (auto p = lo; p != evs.end(); ++p) {
        const StopEvent* e = *p;
        if (e->enter_time > r.riding_time + tau) break;
        if (r.riding_time >= e->enter_time - tau && r.riding_time <= e->leave_time + tau) {
          hit = e;
          break;
        }
      }
    }
    if (hit) {
      res.profile.passengers[r.card_no].push_back({r.riding_time, hit->stop_id, r.route_id});
      ++res.matched;
    } else {
      ++res.unmatched;
    }
  }
  for (auto& [id, boardings] : res.profile.passengers)
    std::sort(boardings.begin(), boardings.end());
  return res;
}

// --- origin-destination inference ---------------------------------------------

// Symmetric non-negative trip-count matrix over the stop registry order.
struct ODMatrix {
  std::vector<std::string> stops;
  std::vector<long> counts;  // dense n x n, row-major

  explicit ODMatrix(std::vector<std::string> stop_ids = {})
      : stops(std::move(stop_ids)), counts(stops.size() * stops.size(), 0) {}

  std::size_t size() const { return stops.size(); }
  long& at(std::size_t i, std::size_t j) { return counts[i * stops.size() + j]; }
  long at(std::size_t i, std::size_t j) const { return counts[i * stops.size() + j]; }

  bool symmetric_zero_diagonal() const {
    const std::size_t n = stops.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (at(i, i) != 0) return false;
      for (std::size_t j = i + 1; j < n; ++j)
        if (at(i, j) != at(j, i)) return false;
    }
    return true;
  }
};

// Every unordered pair of same-route boarding events of one passenger counts
// once in both directions. Bus travel is taken as symmetric, so each
// co-occurrence stands for a round trip between the two stops.
inline ODMatrix infer_od(const PassengerStopProfile& profile, const StopRegistry& registry) {
  for (const auto& [card, boardings] : profile.passengers)
    for (const auto& b : boardings)
      if (!registry.route_stops.count(b.route_id))
        throw IngestError("infer_od: unknown route id '" + b.route_id + "'");
  ODMatrix od(registry.stop_ids);
  for (const auto& [card, boardings] : profile.passengers) {
    for (std::size_t i = 0; i < boardings.size(); ++i) {
      for (std::size_t j = i + 1; j < boardings.size(); ++j) {
        const Boarding& a = boardings[i];
        const Boarding& b = boardings[j];
        if (a.route_id != b.route_id || a.stop_id == b.stop_id) continue;
        const std::size_t ia = registry.index_of(a.stop_id);
        const std::size_t ib = registry.index_of(b.stop_id);
        ++od.at(ia, ib);
        ++od.at(ib, ia);
      }
    }
  }
  return od;
}

// --- flow aggregation ----------------------------------------------------------

// Boardings per (time slot, stop). The service day runs 05:00-23:00; rows are
// day-major with slots_per_day() rows per day and nothing for the night gap.
struct FlowTensor {
  Tensor values;  // [n_days * slots_per_day, n_stops]
  int step_minutes = 5;
  std::int64_t start_day = 0;  // calendar day index of row 0
  int n_days = 0;
  std::vector<std::string> stops;

  static constexpr int kDayStartHour = 5;
  static constexpr int kDayEndHour = 23;

  int slots_per_day() const { return (kDayEndHour - kDayStartHour) * 60 / step_minutes; }
  std::size_t time_steps() const { return values.rank() ? values.extent(0) : 0; }

  std::int64_t time_of_row(std::size_t row) const {
    const int spd = slots_per_day();
    const std::int64_t day = start_day + static_cast<std::int64_t>(row) / spd;
    const std::int64_t slot = static_cast<std::int64_t>(row) % spd;
    return day * 86400 + kDayStartHour * 3600 + slot * step_minutes * 60;
  }
};

struct DayRange {
  std::int64_t start_day = 0;
  int n_days = 0;
};

inline DayRange profile_day_range(const PassengerStopProfile& profile) {
  std::int64_t lo = 0, hi = 0;
  bool any = false;
  for (const auto& [card, boardings] : profile.passengers)
    for (const auto& b : boardings) {
      const std::int64_t d = day_of(b.time);
      if (!any) {
        lo = hi = d;
        any = true;
      } else {
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
    }
  if (!any) return {0, 1};
  return {lo, static_cast<int>(hi - lo + 1)};
}

inline FlowTensor aggregate_flow(const PassengerStopProfile& profile, int step_minutes,
                                 const StopRegistry& registry, const DayRange& range,
                                 const std::set<std::string>* passenger_subset = nullptr) {
  if (step_minutes != 5 && step_minutes != 15 && step_minutes != 30)
    throw ContractError("aggregate_flow: step_minutes must be 5, 15, or 30");
  FlowTensor flow;
  flow.step_minutes = step_minutes;
  flow.start_day = range.start_day;
  flow.n_days = range.n_days;
  flow.stops = registry.stop_ids;
  const int spd = flow.slots_per_day();
  flow.values = Tensor({static_cast<std::size_t>(range.n_days) * spd, registry.stop_ids.size()});
  for (const auto& [card, boardings] : profile.passengers) {
    if (passenger_subset && !passenger_subset->count(card)) continue;
    for (const auto& b : boardings) {
      const std::int64_t day = day_of(b.time) - range.start_day;
      if (day < 0 || day >= range.n_days) continue;
      const std::int64_t sod = seconds_of_day(b.time) - FlowTensor::kDayStartHour * 3600;
      if (sod < 0) continue;
      const std::int64_t slot = sod / (step_minutes * 60);
      if (slot >= spd) continue;
      const std::size_t row = static_cast<std::size_t>(day) * spd + slot;
      flow.values.at(row, registry.index_of(b.stop_id)) += 1.0;
    }
  }
  return flow;
}

// Linear interpolation along time for masked entries; leading/trailing gaps
// copy the nearest unmasked value. Unmasked entries pass through untouched.
inline FlowTensor interpolate_gaps(const FlowTensor& flow, const Tensor& gap_mask) {
  if (!gap_mask.same_shape(flow.values))
    throw ContractError("interpolate_gaps: mask shape " + shape_str(gap_mask.shape()) +
                        " vs flow " + shape_str(flow.values.shape()));
  FlowTensor out = flow;
  const std::size_t T = flow.values.extent(0);
  const std::size_t S = flow.values.extent(1);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::size_t> known;
    for (std::size_t t = 0; t < T; ++t)
      if (gap_mask.at(t, s) == 0.0) known.push_back(t);
    if (known.empty())
      throw IngestError("interpolate_gaps: stop column " + std::to_string(s) +
                        " is entirely masked");
    for (std::size_t t = 0; t < T; ++t) {
      if (gap_mask.at(t, s) == 0.0) continue;
      auto it = std::lower_bound(known.begin(), known.end(), t);
      if (it == known.begin()) {
        out.values.at(t, s) = flow.values.at(*it, s);
      } else if (it == known.end()) {
        out.values.at(t, s) = flow.values.at(*(it - 1), s);
      } else {
        const std::size_t hi = *it;
        const std::size_t lo = *(it - 1);
        const double a = flow.values.at(lo, s);
        const double b = flow.values.at(hi, s);
        const double frac = static_cast<double>(t - lo) / static_cast<double>(hi - lo);
        out.values.at(t, s) = a + (b - a) * frac;
      }
    }
  }
  return out;
}

// A (bus, day) with ride records but no stop events marks that day's slots of
// the bus's known stops as gaps.
inline Tensor gap_mask_from_missing_bus_days(const FlowTensor& flow,
                                             const std::vector<RideRecord>& rides,
                                             const std::vector<StopEvent>& events,
                                             const StopRegistry& registry) {
  std::map<std::string, std::set<std::int64_t>> ride_days;
  for (const auto& r : rides) ride_days[r.bus_no].insert(day_of(r.riding_time));
  std::map<std::string, std::set<std::int64_t>> event_days;
  std::map<std::string, std::set<std::string>> bus_stops;
  for (const auto& e : events) {
    event_days[e.bus_no].insert(day_of(e.enter_time));
    bus_stops[e.bus_no].insert(e.stop_id);
  }
  Tensor mask(flow.values.shape());
  const int spd = flow.slots_per_day();
  for (const auto& [bus, days] : ride_days) {
    const auto ev = event_days.find(bus);
    const auto st = bus_stops.find(bus);
    if (st == bus_stops.end()) continue;  // bus never produced events; nothing to localize
    for (std::int64_t d : days) {
      if (ev != event_days.end() && ev->second.count(d)) continue;
      const std::int64_t rel = d - flow.start_day;
      if (rel < 0 || rel >= flow.n_days) continue;
      for (const auto& stop : st->second) {
        if (!registry.has_stop(stop)) continue;
        const std::size_t col = registry.index_of(stop);
        for (int k = 0; k < spd; ++k) mask.at(static_cast<std::size_t>(rel) * spd + k, col) = 1.0;
      }
    }
  }
  return mask;
}

// Keeps passengers with enough matched boardings whose activity started early
// enough before the end of the dataset.
inline PassengerStopProfile filter_passengers(const PassengerStopProfile& profile,
                                              std::size_t min_records,
                                              int min_active_span_days) {
  if (min_active_span_days < 0) throw ContractError("filter_passengers: negative span");
  std::int64_t dataset_end = 0;
  for (const auto& [card, boardings] : profile.passengers)
    for (const auto& b : boardings) dataset_end = std::max(dataset_end, b.time);
  PassengerStopProfile out;
  for (const auto& [card, boardings] : profile.passengers) {
    if (boardings.size() < min_records) continue;
    if (!boardings.empty() &&
        boardings.front().time > dataset_end - static_cast<std::int64_t>(min_active_span_days) * 86400)
      continue;
    out.passengers[card] = boardings;
  }
  return out;
}

}  // namespace mpgcn
