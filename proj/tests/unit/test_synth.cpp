#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "mpgcn/analysis.hpp"
#include "mpgcn/clustering.hpp"
#include "mpgcn/synth.hpp"

using namespace mpgcn;

namespace {

CityConfig tiny_city() {
  CityConfig cfg;
  cfg.n_stops = 12;
  cfg.n_routes = 3;
  cfg.route_min_len = 4;
  cfg.route_max_len = 6;
  cfg.n_passengers = 60;
  cfg.n_patterns = 2;
  cfg.days = 3;
  cfg.buses_per_route = 1;
  cfg.seed = 5;
  return cfg;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("single passenger, single trip city is minimal and matched", "[synth]") {
  CityConfig cfg;
  cfg.n_stops = 6;
  cfg.n_routes = 1;
  cfg.route_min_len = 4;
  cfg.route_max_len = 6;
  cfg.n_passengers = 1;
  cfg.n_patterns = 1;
  cfg.days = 1;
  cfg.buses_per_route = 1;
  cfg.trips_per_day = {0.0};  // the distinct-stop target still forces boardings
  cfg.ns_median = {2.0};
  cfg.ns_sigma = {0.0};
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = false;
  cfg.seed = 3;
  auto city = generate_city(cfg);
  REQUIRE(city.rides.size() == 2);  // pool of two stops, each visited once
  auto res = match_stops(city.rides, city.events, 20);
  REQUIRE(res.unmatched == 0);
  REQUIRE(res.matched == city.rides.size());
}

TEST_CASE("every nominal ride matches at tau=20 when offsets are disabled", "[synth]") {
  auto cfg = tiny_city();
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = false;
  auto city = generate_city(cfg);
  REQUIRE(city.expected_unmatched == 0);
  auto res = match_stops(city.rides, city.events, 20);
  REQUIRE(res.unmatched == 0);
  REQUIRE(res.matched == city.matchable_rides);
}

TEST_CASE("offset rides are unmatched in the expected proportion", "[synth]") {
  auto cfg = tiny_city();
  cfg.n_passengers = 200;
  cfg.unmatched_fraction = 0.05;
  cfg.drop_bus_day = false;
  auto city = generate_city(cfg);
  auto res = match_stops(city.rides, city.events, 20);
  REQUIRE(res.unmatched == city.expected_unmatched);
  REQUIRE(res.matched == city.matchable_rides);
  const double frac =
      static_cast<double>(res.unmatched) / static_cast<double>(city.rides.size());
  REQUIRE(frac > 0.01);
  REQUIRE(frac < 0.12);
}

TEST_CASE("dropping a bus day produces detectable gaps and unmatched rides", "[synth]") {
  auto cfg = tiny_city();
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = true;
  auto city = generate_city(cfg);
  REQUIRE(!city.dropped_bus.empty());
  for (const auto& e : city.events)
    REQUIRE(!(e.bus_no == city.dropped_bus && day_of(e.enter_time) == city.dropped_day));
  auto res = match_stops(city.rides, city.events, 20);
  REQUIRE(res.unmatched == city.expected_unmatched);
}

TEST_CASE("generated tables round-trip through the ingest parsers", "[synth]") {
  auto cfg = tiny_city();
  auto city = generate_city(cfg);
  write_rides_csv(city, "/tmp/mpgcn_synth_rides.csv");
  write_events_csv(city, "/tmp/mpgcn_synth_events.csv");
  write_registry_csv(city.registry, "/tmp/mpgcn_synth_stops.csv");
  auto tables = parse_tables("/tmp/mpgcn_synth_rides.csv", "/tmp/mpgcn_synth_events.csv");
  REQUIRE(tables.rides.size() == city.rides.size());
  REQUIRE(tables.events.size() == city.events.size());
  REQUIRE(tables.ride_stats.malformed == 0);
  REQUIRE(tables.event_stats.malformed == 0);
  REQUIRE(tables.event_stats.stay_time_mismatches == 0);
  auto reg = parse_stop_registry("/tmp/mpgcn_synth_stops.csv");
  REQUIRE(reg.stop_ids == city.registry.stop_ids);
  REQUIRE(reg.route_stops.size() == city.registry.route_stops.size());
}

TEST_CASE("fixed seed reproduces byte-identical tables", "[synth]") {
  auto cfg = tiny_city();
  auto c1 = generate_city(cfg);
  auto c2 = generate_city(cfg);
  write_rides_csv(c1, "/tmp/mpgcn_synth_a.csv");
  write_rides_csv(c2, "/tmp/mpgcn_synth_b.csv");
  REQUIRE(file_bytes("/tmp/mpgcn_synth_a.csv") == file_bytes("/tmp/mpgcn_synth_b.csv"));
  write_events_csv(c1, "/tmp/mpgcn_synth_a.csv");
  write_events_csv(c2, "/tmp/mpgcn_synth_b.csv");
  REQUIRE(file_bytes("/tmp/mpgcn_synth_a.csv") == file_bytes("/tmp/mpgcn_synth_b.csv"));

  CityConfig other = cfg;
  other.seed = cfg.seed + 1;
  auto c3 = generate_city(other);
  write_rides_csv(c3, "/tmp/mpgcn_synth_c.csv");
  REQUIRE(file_bytes("/tmp/mpgcn_synth_b.csv") != file_bytes("/tmp/mpgcn_synth_c.csv"));
}

TEST_CASE("planted patterns create a blocky sharing-stop graph", "[synth]") {
  // Disjoint preferred routes: each pattern rides its own two routes only,
  // and the route lengths tile the stop set with almost no sharing.
  CityConfig cfg;
  cfg.n_stops = 48;
  cfg.n_routes = 8;
  cfg.route_min_len = 6;
  cfg.route_max_len = 6;
  cfg.n_passengers = 160;
  cfg.n_patterns = 4;
  cfg.days = 5;
  cfg.route_preference.assign(4, std::vector<double>(8, 0.0));
  for (int p = 0; p < 4; ++p) {
    cfg.route_preference[p][2 * p] = 0.5;
    cfg.route_preference[p][2 * p + 1] = 0.5;
  }
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = false;
  cfg.seed = 11;
  auto city = generate_city(cfg);
  auto res = match_stops(city.rides, city.events, 20);
  auto g = build_sharing_stop(res.profile);

  // mean within-pattern weight vs cross-pattern weight
  double win = 0, wcross = 0;
  std::size_t nwin = 0, ncross = 0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const int pi = city.labels.at(g.passenger_ids[i]);
    for (std::size_t j = i + 1; j < g.node_count(); ++j) {
      const int pj = city.labels.at(g.passenger_ids[j]);
      const double w = g.adjacency.value_at(i, j);
      if (pi == pj) {
        win += w;
        ++nwin;
      } else {
        wcross += w;
        ++ncross;
      }
    }
  }
  REQUIRE(nwin > 0);
  REQUIRE(ncross > 0);
  const double cross_mean = wcross / ncross;
  REQUIRE(win / nwin >= 5.0 * std::max(cross_mean, 1e-12));
}

TEST_CASE("planted route shares are recovered through the analysis pipeline", "[synth]") {
  CityConfig cfg;
  cfg.n_stops = 30;
  cfg.n_routes = 8;
  cfg.n_passengers = 400;
  cfg.n_patterns = 4;
  cfg.days = 5;
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = false;
  cfg.seed = 13;
  auto city = generate_city(cfg);
  auto res = match_stops(city.rides, city.events, 20);
  auto rs = route_contribution(res.profile, city.labels, cfg.n_patterns);
  for (std::size_t r = 0; r < rs.routes.size(); ++r) {
    // align planted column by route id
    std::size_t pr = 0;
    while (city.share_routes[pr] != rs.routes[r]) ++pr;
    for (int p = 0; p < cfg.n_patterns; ++p)
      REQUIRE(rs.shares.at(p, r) ==
              Catch::Approx(city.planted_shares.at(p, pr)).margin(0.02));
  }
}

TEST_CASE("planted lognormal stop-count law is recovered at scale", "[synth]") {
  CityConfig cfg;
  cfg.n_stops = 120;
  cfg.n_routes = 12;
  cfg.route_min_len = 9;
  cfg.route_max_len = 12;
  cfg.n_passengers = 5200;
  cfg.n_patterns = 4;
  cfg.days = 5;
  cfg.trips_per_day = {3.0, 3.0, 3.0, 3.0};
  cfg.ns_median = {12.0, 12.0, 12.0, 12.0};
  cfg.ns_sigma = {0.40, 0.40, 0.40, 0.40};
  cfg.unmatched_fraction = 0.0;
  cfg.drop_bus_day = false;
  cfg.seed = 17;
  auto city = generate_city(cfg);
  auto res = match_stops(city.rides, city.events, 20);
  auto hists = ns_histograms(res.profile, city.labels, cfg.n_patterns);
  for (int p = 0; p < cfg.n_patterns; ++p) {
    auto fit = fit_distribution(hists[p], DistFamily::Lognormal);
    REQUIRE(fit.params.at("c") == Catch::Approx(cfg.ns_median[p]).epsilon(0.15));
    REQUIRE(fit.params.at("w") == Catch::Approx(cfg.ns_sigma[p]).epsilon(0.60));
  }
}

TEST_CASE("infeasible demand raises a generator error", "[synth]") {
  auto cfg = tiny_city();
  cfg.trips_per_day = {100000.0, 100000.0};
  REQUIRE_THROWS_AS(generate_city(cfg), GeneratorError);
}
