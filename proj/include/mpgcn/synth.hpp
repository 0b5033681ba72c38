#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpgcn/analysis.hpp"
#include "mpgcn/errors.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/rng.hpp"

namespace mpgcn {

struct CityConfig {
  int n_stops = 40;
  int n_routes = 8;
  int route_min_len = 8;
  int route_max_len = 12;
  int buses_per_route = 2;
  int n_passengers = 2000;
  int n_patterns = 4;
  std::vector<int> pattern_sizes;                     // defaults to a near-even split
  std::vector<std::vector<double>> route_preference;  // pattern x route, rows sum to 1
  std::vector<double> trips_per_day;                  // per pattern
  std::vector<double> ns_median;                      // planted lognormal median of n_s
  std::vector<double> ns_sigma;                       // planted lognormal log-sigma
  std::vector<double> morning_amp;                    // per-pattern diurnal peak weights
  std::vector<double> midday_amp;
  std::vector<double> evening_amp;
  double daily_amplitude_sigma = 0.25;  // per-pattern day-to-day demand modulation
  int days = 7;
  double unmatched_fraction = 0.05;  // extra rides beyond the matching window
  bool drop_bus_day = true;          // erase one (bus, day) of events
  std::uint64_t seed = 42;

  // Fills derived defaults and checks consistency.
  void finalize() {
    if (n_stops < 4 || n_routes < 1 || n_passengers < 1 || n_patterns < 1 || days < 1)
      throw ConfigError("synth: degenerate city dimensions");
    if (n_patterns > n_passengers) throw ConfigError("synth: more patterns than passengers");
    if (pattern_sizes.empty()) {
      pattern_sizes.assign(n_patterns, n_passengers / n_patterns);
      for (int i = 0; i < n_passengers % n_patterns; ++i) ++pattern_sizes[i];
    }
    if (static_cast<int>(pattern_sizes.size()) != n_patterns)
      throw ConfigError("synth: pattern_sizes length != n_patterns");
    int total = 0;
    for (int s : pattern_sizes) total += s;
    if (total != n_passengers)
      throw ConfigError("synth: pattern sizes sum to " + std::to_string(total) + ", expected " +
                        std::to_string(n_passengers));
    if (route_preference.empty()) {
      // Each pattern leans on its own pair of routes, with mass spread thinly
      // over the rest so patterns still overlap at shared stops.
      route_preference.assign(n_patterns, std::vector<double>(n_routes, 0.0));
      for (int p = 0; p < n_patterns; ++p) {
        const int r0 = (2 * p) % n_routes;
        const int r1 = (2 * p + 1) % n_routes;
        const double spread = 0.15;
        for (int r = 0; r < n_routes; ++r) route_preference[p][r] = spread / n_routes;
        route_preference[p][r0] += (1.0 - spread) / 2;
        route_preference[p][r1] += (1.0 - spread) / 2;
      }
    }
    if (static_cast<int>(route_preference.size()) != n_patterns)
      throw ConfigError("synth: route_preference rows != n_patterns");
    for (const auto& row : route_preference) {
      if (static_cast<int>(row.size()) != n_routes)
        throw ConfigError("synth: route_preference row length != n_routes");
      double s = 0.0;
      for (double v : row) {
        if (v < 0) throw ConfigError("synth: negative route preference");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-6)
        throw ConfigError("synth: route preference row sums to " + std::to_string(s));
    }
    auto fill = [&](std::vector<double>& v, std::initializer_list<double> cycle) {
      if (!v.empty()) {
        if (static_cast<int>(v.size()) != n_patterns)
          throw ConfigError("synth: per-pattern vector length != n_patterns");
        return;
      }
      std::vector<double> c(cycle);
      for (int p = 0; p < n_patterns; ++p) v.push_back(c[p % c.size()]);
    };
    fill(trips_per_day, {2.5});
    fill(ns_median, {8.0});
    fill(ns_sigma, {0.45});
    // Distinct diurnal shapes: commuters, reverse commuters, midday, flat-ish.
    fill(morning_amp, {1.0, 0.2, 0.1, 0.4});
    fill(midday_amp, {0.1, 0.2, 1.0, 0.4});
    fill(evening_amp, {0.6, 1.0, 0.2, 0.4});
    if (route_min_len < 2 || route_max_len < route_min_len || route_max_len > n_stops)
      throw ConfigError("synth: invalid route length range");
    if (unmatched_fraction < 0.0 || unmatched_fraction >= 1.0)
      throw ConfigError("synth: unmatched_fraction outside [0,1)");
  }
};

struct SynthCity {
  std::vector<RideRecord> rides;
  std::vector<StopEvent> events;
  StopRegistry registry;
  std::map<std::string, int> labels;            // card -> planted pattern
  Tensor planted_shares;                        // pattern x route (matchable boardings)
  std::vector<std::string> share_routes;        // column order of planted_shares
  std::vector<double> planted_ns_median;
  std::vector<double> planted_ns_sigma;
  std::size_t matchable_rides = 0;
  std::size_t expected_unmatched = 0;  // offset rides plus rides on the dropped bus day
  std::string dropped_bus;
  std::int64_t dropped_day = -1;
};

namespace synthdetail {

inline double diurnal_sample(Rng& rng, double wm, double wd, double we) {
  const double base = 0.10;
  const double total = wm + wd + we + base;
  for (int tries = 0; tries < 64; ++tries) {
    const double pick = rng.uniform() * total;
    double hour;
    if (pick < wm) hour = rng.normal(7.75, 0.75);
    else if (pick < wm + wd) hour = rng.normal(13.0, 1.5);
    else if (pick < wm + wd + we) hour = rng.normal(18.0, 1.0);
    else hour = rng.uniform(5.0, 23.0);
    if (hour >= 5.0 && hour < 22.8) return hour;
  }
  return 12.0;
}

struct EventKey {
  std::string route;
  std::string stop;
  std::int64_t day;
  bool operator<(const EventKey& o) const {
    return std::tie(route, stop, day) < std::tie(o.route, o.stop, o.day);
  }
};

}  // namespace synthdetail

// Deterministic synthetic city: bus schedules that traverse jittered-grid
// routes in both directions, passengers with planted mobility patterns,
// per-pattern diurnal shapes and distinct-stop-count laws, plus the exact
// raw-table schemas of the ingest stage.
inline SynthCity generate_city(CityConfig cfg) {
  cfg.finalize();
  SynthCity city;
  Rng geo_rng(sub_seed(cfg.seed, "geometry"));

  // Stops on a jittered grid.
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_stops))));
  std::vector<std::string> stop_ids;
  for (int i = 0; i < cfg.n_stops; ++i) {
    const int row = i / grid, col = i % grid;
    std::string id = "S" + std::to_string(1000 + i);
    stop_ids.push_back(id);
    city.registry.stop_ids.push_back(id);
    city.registry.coords[id] = {119.0 + 0.012 * col + geo_rng.uniform(-0.002, 0.002),
                                33.50 + 0.010 * row + geo_rng.uniform(-0.002, 0.002)};
  }
  city.registry.finalize();

  // Routes: greedy nearest-neighbor walks; every stop gets covered.
  std::vector<std::vector<std::string>> routes;
  {
    std::set<std::string> covered;
    for (int r = 0; r < cfg.n_routes; ++r) {
      const int len = cfg.route_min_len +
                      static_cast<int>(geo_rng.below(cfg.route_max_len - cfg.route_min_len + 1));
      std::string start;
      for (const auto& s : stop_ids)
        if (!covered.count(s)) {
          start = s;
          break;
        }
      if (start.empty()) start = stop_ids[geo_rng.below(stop_ids.size())];
      std::vector<std::string> route{start};
      std::set<std::string> used{start};
      while (static_cast<int>(route.size()) < len) {
        const auto& cur = city.registry.coords[route.back()];
        std::string best;
        double best_d = 1e18;
        for (const auto& s : stop_ids) {
          if (used.count(s)) continue;
          const auto& c = city.registry.coords[s];
          double d = haversine_m(cur.lon, cur.lat, c.lon, c.lat);
          if (!covered.count(s)) d *= 0.55;  // pull routes toward uncovered stops
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        if (best.empty()) break;
        route.push_back(best);
        used.insert(best);
      }
      for (const auto& s : route) covered.insert(s);
      routes.push_back(route);
    }
    // Any stop still uncovered joins the nearest route's end.
    for (const auto& s : stop_ids)
      if (!covered.count(s)) {
        routes[geo_rng.below(routes.size())].push_back(s);
        covered.insert(s);
      }
  }
  for (int r = 0; r < cfg.n_routes; ++r) {
    std::string rid = "R" + std::to_string(1 + r);
    city.registry.route_stops[rid] = routes[r];
  }

  // Bus schedules. Both directions alternate; travel times keep consecutive
  // dwell windows (widened by tau and the unmatched offsets) disjoint.
  Rng bus_rng(sub_seed(cfg.seed, "buses"));
  const std::int64_t day0 = days_from_civil(2019, 11, 1);
  std::map<synthdetail::EventKey, std::vector<std::size_t>> event_index;
  for (int r = 0; r < cfg.n_routes; ++r) {
    const std::string rid = "R" + std::to_string(1 + r);
    const auto& stops = routes[r];
    std::vector<std::int64_t> travel(stops.size() - 1);
    for (std::size_t k = 0; k + 1 < stops.size(); ++k) {
      const auto& a = city.registry.coords[stops[k]];
      const auto& b = city.registry.coords[stops[k + 1]];
      travel[k] = std::max<std::int64_t>(
          80, static_cast<std::int64_t>(haversine_m(a.lon, a.lat, b.lon, b.lat) / 6.0));
    }
    for (int bi = 0; bi < cfg.buses_per_route; ++bi) {
      const std::string bus = "B" + std::to_string(100 + r * 10 + bi);
      for (int d = 0; d < cfg.days; ++d) {
        std::int64_t t = (day0 + d) * 86400 + 5 * 3600 +
                         bi * (900 / std::max(1, cfg.buses_per_route)) +
                         static_cast<std::int64_t>(bus_rng.below(120));
        const std::int64_t day_end = (day0 + d) * 86400 + 23 * 3600;
        int direction = 0;
        while (true) {
          const bool up = direction == 0;
          bool finished = false;
          for (std::size_t k = 0; k < stops.size(); ++k) {
            const std::size_t idx = up ? k : stops.size() - 1 - k;
            const std::int64_t dwell = 15 + static_cast<std::int64_t>(bus_rng.below(26));
            if (t + dwell >= day_end) {
              finished = true;
              break;
            }
            StopEvent e{bus, t, t + dwell, stops[idx], rid, direction, dwell};
            event_index[{rid, stops[idx], day0 + d}].push_back(city.events.size());
            city.events.push_back(e);
            if (k + 1 < stops.size()) t += dwell + travel[up ? idx : idx - 1];
            else t += dwell + 300 + static_cast<std::int64_t>(bus_rng.below(120));  // turnaround
          }
          if (finished) break;
          direction = 1 - direction;
        }
      }
    }
  }

  // Feasibility: demanded boardings per route-day against scheduled visits.
  {
    std::map<std::string, double> visits_per_day;
    for (const auto& e : city.events) visits_per_day[e.route_id] += 1.0 / cfg.days;
    for (int r = 0; r < cfg.n_routes; ++r) {
      const std::string rid = "R" + std::to_string(1 + r);
      double demand = 0.0;
      for (int p = 0; p < cfg.n_patterns; ++p)
        demand += cfg.pattern_sizes[p] * cfg.trips_per_day[p] * cfg.route_preference[p][r];
      if (demand > visits_per_day[rid] * 100.0)
        throw GeneratorError("route " + rid + " demands " + std::to_string(demand) +
                             " boardings/day against " +
                             std::to_string(visits_per_day[rid]) + " stop visits/day");
    }
  }

  // Passengers.
  Rng pax_rng(sub_seed(cfg.seed, "passengers"));
  std::vector<std::vector<double>> day_mod(cfg.n_patterns, std::vector<double>(cfg.days, 1.0));
  for (int p = 0; p < cfg.n_patterns; ++p)
    for (int d = 0; d < cfg.days; ++d)
      day_mod[p][d] = pax_rng.lognormal(1.0, cfg.daily_amplitude_sigma);

  struct PendingRide {
    std::int64_t time;
    std::string bus;
    std::string card;
    std::string route;
    bool matchable;
  };
  std::vector<PendingRide> pending;
  Tensor share_counts({static_cast<std::size_t>(cfg.n_patterns),
                       static_cast<std::size_t>(cfg.n_routes)});

  int card_serial = 0;
  for (int p = 0; p < cfg.n_patterns; ++p) {
    for (int i = 0; i < cfg.pattern_sizes[p]; ++i) {
      const std::string card = "C" + std::to_string(2230000000000000LL + card_serial++);
      city.labels[card] = p;

      // Personal stop pool sampled through the pattern's route preferences.
      int n_target = static_cast<int>(std::lround(pax_rng.lognormal(cfg.ns_median[p],
                                                                    cfg.ns_sigma[p])));
      n_target = std::clamp(n_target, 2, cfg.n_stops);
      std::vector<std::pair<std::string, int>> pool;  // (stop, route index)
      std::set<std::string> pool_stops;
      for (int tries = 0; tries < 60 * n_target && static_cast<int>(pool.size()) < n_target;
           ++tries) {
        double pick = pax_rng.uniform();
        int route = 0;
        for (; route < cfg.n_routes - 1; ++route) {
          pick -= cfg.route_preference[p][route];
          if (pick <= 0.0) break;
        }
        const auto& rstops = routes[route];
        const std::string& stop = rstops[pax_rng.below(rstops.size())];
        if (pool_stops.insert(stop).second) pool.push_back({stop, route});
      }
      if (pool.size() < 2) {
        const auto& rstops = routes[0];
        for (std::size_t k = 0; k < rstops.size() && pool.size() < 2; ++k)
          if (pool_stops.insert(rstops[k]).second) pool.push_back({rstops[k], 0});
      }

      // Boardings cycle the pool so the distinct-stop count hits the target.
      std::vector<std::size_t> order(pool.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      pax_rng.shuffle(order);
      std::size_t cursor = 0;
      long total_boardings = 0;
      std::vector<int> per_day(cfg.days, 0);
      for (int d = 0; d < cfg.days; ++d) {
        per_day[d] = pax_rng.poisson(cfg.trips_per_day[p] * day_mod[p][d]);
        total_boardings += per_day[d];
      }
      // Top up so every pool stop gets visited at least once.
      long deficit = static_cast<long>(pool.size()) - total_boardings;
      for (int d = 0; deficit > 0; d = (d + 1) % cfg.days, --deficit) ++per_day[d];

      for (int d = 0; d < cfg.days; ++d) {
        for (int b = 0; b < per_day[d]; ++b) {
          const auto& [stop, route] = pool[order[cursor % order.size()]];
          ++cursor;
          const std::string rid = "R" + std::to_string(1 + route);
          const double hour =
              synthdetail::diurnal_sample(pax_rng, cfg.morning_amp[p], cfg.midday_amp[p],
                                          cfg.evening_amp[p]);
          const std::int64_t want =
              (day0 + d) * 86400 + static_cast<std::int64_t>(hour * 3600.0);
          auto it = event_index.find({rid, stop, day0 + d});
          if (it == event_index.end() || it->second.empty()) continue;  // no visit that day
          // Nearest scheduled visit.
          const auto& evs = it->second;
          std::size_t best = evs[0];
          std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
          for (std::size_t ei : evs) {
            const std::int64_t gap = std::llabs(city.events[ei].enter_time - want);
            if (gap < best_gap) {
              best_gap = gap;
              best = ei;
            }
          }
          const StopEvent& ev = city.events[best];
          PendingRide ride;
          ride.bus = ev.bus_no;
          ride.card = card;
          ride.route = rid;
          ride.matchable = pax_rng.uniform() >= cfg.unmatched_fraction;
          if (ride.matchable) {
            ride.time = ev.enter_time - 5 +
                        static_cast<std::int64_t>(pax_rng.below(
                            static_cast<std::uint64_t>(ev.leave_time - ev.enter_time + 21)));
          } else {
            // (20s, 40s] beyond the widened window end; stays clear of the
            // next visit because travel times are at least 80s.
            ride.time = ev.leave_time + 15 + 21 +
                        static_cast<std::int64_t>(pax_rng.below(20));
          }
          pending.push_back(ride);
          if (ride.matchable) {
            ++city.matchable_rides;
            share_counts.at(p, route) += 1.0;
          } else {
            ++city.expected_unmatched;
          }
        }
      }
    }
  }

  // Missing-data injection: drop one (bus, day) worth of events.
  if (cfg.drop_bus_day && !city.events.empty()) {
    Rng drop_rng(sub_seed(cfg.seed, "drop"));
    std::set<std::string> buses;
    for (const auto& e : city.events) buses.insert(e.bus_no);
    std::vector<std::string> bus_list(buses.begin(), buses.end());
    city.dropped_bus = bus_list[drop_rng.below(bus_list.size())];
    city.dropped_day = day0 + static_cast<std::int64_t>(drop_rng.below(cfg.days));
    std::vector<StopEvent> kept;
    kept.reserve(city.events.size());
    for (const auto& e : city.events) {
      if (e.bus_no == city.dropped_bus && day_of(e.enter_time) == city.dropped_day) continue;
      kept.push_back(e);
    }
    city.events = std::move(kept);
    for (auto& r : pending)
      if (r.matchable && r.bus == city.dropped_bus && day_of(r.time) == city.dropped_day) {
        r.matchable = false;
        --city.matchable_rides;
        ++city.expected_unmatched;
      }
  }

  // Emit rides in time order; ties by card then bus for a stable file.
  std::sort(pending.begin(), pending.end(), [](const PendingRide& a, const PendingRide& b) {
    return std::tie(a.time, a.card, a.bus) < std::tie(b.time, b.card, b.bus);
  });
  for (const auto& r : pending)
    city.rides.push_back({r.bus, r.card, 1, r.time, r.route});

  // Planted route shares over matchable boardings.
  city.planted_shares = Tensor({static_cast<std::size_t>(cfg.n_patterns),
                                static_cast<std::size_t>(cfg.n_routes)});
  for (int r = 0; r < cfg.n_routes; ++r) {
    city.share_routes.push_back("R" + std::to_string(1 + r));
    double total = 0.0;
    for (int p = 0; p < cfg.n_patterns; ++p) total += share_counts.at(p, r);
    for (int p = 0; p < cfg.n_patterns; ++p)
      city.planted_shares.at(p, r) = total > 0.0 ? share_counts.at(p, r) / total : 0.0;
  }
  city.planted_ns_median = cfg.ns_median;
  city.planted_ns_sigma = cfg.ns_sigma;

  // Events in (bus, time) order.
  std::sort(city.events.begin(), city.events.end(), [](const StopEvent& a, const StopEvent& b) {
    return std::tie(a.bus_no, a.enter_time, a.stop_id) <
           std::tie(b.bus_no, b.enter_time, b.stop_id);
  });
  return city;
}

// --- CSV writers (exact ingest schemas) ---------------------------------------------

inline void write_rides_csv(const SynthCity& city, const std::string& path) {
  CsvWriter w(path);
  w.raw(kRideHeader);
  for (const auto& r : city.rides)
    w.row({r.bus_no, r.card_no, std::to_string(r.card_type), format_timestamp(r.riding_time),
           r.route_id});
  w.close();
}

inline void write_events_csv(const SynthCity& city, const std::string& path) {
  CsvWriter w(path);
  w.raw(kStopEventHeader);
  for (const auto& e : city.events)
    w.row({e.bus_no, format_timestamp(e.enter_time), format_timestamp(e.leave_time), e.stop_id,
           e.route_id, std::to_string(e.direct_id), std::to_string(e.stay_time)});
  w.close();
}

inline void write_registry_csv(const StopRegistry& reg, const std::string& path) {
  CsvWriter w(path);
  w.raw(kStopRegistryHeader);
  char buf[32];
  for (const auto& [route, stops] : reg.route_stops)
    for (std::size_t k = 0; k < stops.size(); ++k) {
      const auto& c = reg.coords.at(stops[k]);
      std::string lon, lat;
      std::snprintf(buf, sizeof(buf), "%.6f", c.lon);
      lon = buf;
      std::snprintf(buf, sizeof(buf), "%.6f", c.lat);
      lat = buf;
      w.row({stops[k], route, std::to_string(k), lon, lat});
    }
  w.close();
}

}  // namespace mpgcn
