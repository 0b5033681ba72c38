#include <catch2/catch_amalgamated.hpp>

#include "mpgcn/optimizer.hpp"
#include "mpgcn/rng.hpp"

using namespace mpgcn;

namespace {

StopNetwork net_from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  StopNetwork net;
  for (std::size_t i = 0; i < n; ++i) net.stop_ids.push_back("S" + std::to_string(i));
  std::vector<SparseEntry> t;
  for (auto [a, b] : edges) t.push_back({a, b, 100.0});
  net.adjacency = SparseMatrix::from_triplets(n, n, std::move(t));
  return net;
}

ODMatrix od_for(const StopNetwork& net,
                const std::vector<std::tuple<std::size_t, std::size_t, long>>& demands) {
  ODMatrix od(net.stop_ids);
  for (auto [i, j, d] : demands) {
    od.at(i, j) += d;
    od.at(j, i) += d;
  }
  return od;
}

// All simple paths from i to j, depth-first, no pruning.
void all_paths(const std::vector<std::vector<std::size_t>>& adj, std::size_t u, std::size_t dest,
               std::vector<std::size_t>& path, std::vector<char>& seen,
               std::vector<std::vector<std::size_t>>& out) {
  if (u == dest) {
    out.push_back(path);
    return;
  }
  for (std::size_t v : adj[u]) {
    if (seen[v]) continue;
    seen[v] = 1;
    path.push_back(v);
    all_paths(adj, v, dest, path, seen, out);
    path.pop_back();
    seen[v] = 0;
  }
}

}  // namespace

TEST_CASE("line graph has a single candidate", "[optimizer]") {
  auto net = net_from_edges(3, {{0, 1}, {1, 2}, {1, 0}, {2, 1}});
  auto od = od_for(net, {{0, 2, 1}});
  auto set = generate_candidates(net, od, std::vector<double>(3, 0.0));
  // both directions of the pair are demanded (symmetric OD)
  REQUIRE(set.pairs.size() == 2);
  REQUIRE(set.pairs[0].routes.size() == 1);
  REQUIRE(set.pairs[0].routes[0] == std::vector<std::size_t>{0, 1, 2});
  REQUIRE(set.pairs[0].shortest_hops == 2);
}

TEST_CASE("four-cycle yields both sides as candidates", "[optimizer]") {
  auto net = net_from_edges(4, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}, {3, 0}, {0, 3}});
  auto od = od_for(net, {{0, 2, 1}});
  OptimizerConfig cfg;
  cfg.eps = 1;
  auto set = generate_candidates(net, od, std::vector<double>(4, 0.0), cfg);
  const auto& routes = set.pairs[0].routes;
  REQUIRE(routes.size() == 2);
  REQUIRE(routes[0] == std::vector<std::size_t>{0, 1, 2});
  REQUIRE(routes[1] == std::vector<std::size_t>{0, 3, 2});
}

TEST_CASE("candidates equal exhaustive enumeration under the eps bound", "[optimizer]") {
  Rng rng(61);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t n = 12;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && rng.uniform() < 0.22) edges.push_back({i, j});
    // ring for connectivity
    for (std::size_t i = 0; i < n; ++i) {
      edges.push_back({i, (i + 1) % n});
      edges.push_back({(i + 1) % n, i});
    }
    auto net = net_from_edges(n, edges);
    auto od = od_for(net, {{0, 7, 1}});
    OptimizerConfig cfg;
    cfg.eps = 3;
    cfg.candidate_cap = 100000;
    auto set = generate_candidates(net, od, std::vector<double>(n, 0.0), cfg);

    std::vector<std::vector<std::size_t>> adj(n);
    for (auto [a, b] : edges) adj[a].push_back(b);
    for (auto& v : adj) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (const auto& pair : set.pairs) {
      std::vector<std::vector<std::size_t>> expect;
      std::vector<std::size_t> path{pair.origin};
      std::vector<char> seen(n, 0);
      seen[pair.origin] = 1;
      all_paths(adj, pair.origin, pair.dest, path, seen, expect);
      std::vector<std::vector<std::size_t>> bounded;
      for (auto& p : expect)
        if (p.size() - 1 <= pair.shortest_hops + cfg.eps) bounded.push_back(p);
      std::sort(bounded.begin(), bounded.end(),
                [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
                  if (a.size() != b.size()) return a.size() < b.size();
                  return a < b;
                });
      REQUIRE(pair.routes == bounded);
    }
  }
}

TEST_CASE("disconnected demanded pair raises with the pair named", "[optimizer]") {
  auto net = net_from_edges(4, {{0, 1}, {1, 0}});  // 2 and 3 isolated
  auto od = od_for(net, {{0, 3, 2}});
  REQUIRE_THROWS_WITH(generate_candidates(net, od, std::vector<double>(4, 0.0)),
                      Catch::Matchers::ContainsSubstring("S0") &&
                          Catch::Matchers::ContainsSubstring("S3"));
}

TEST_CASE("recount and objective basics", "[optimizer]") {
  REQUIRE(objective({3, 3, 3}) == 0.0);
  REQUIRE(objective({0, 2}) == 1.0);
  Rng rng(62);
  std::vector<double> f;
  for (int i = 0; i < 40; ++i) f.push_back(rng.uniform(0, 30));
  double mean = 0;
  for (double v : f) mean += v;
  mean /= f.size();
  double ss = 0;
  for (double v : f) ss += (v - mean) * (v - mean);
  REQUIRE(objective(f) == Catch::Approx(std::sqrt(ss / f.size())).epsilon(1e-12));
  REQUIRE_THROWS_AS(objective({}), ContractError);
}

TEST_CASE("single-candidate trips cannot move", "[optimizer]") {
  auto net = net_from_edges(3, {{0, 1}, {1, 2}});
  auto od = ODMatrix(net.stop_ids);
  od.at(0, 2) = 3;  // one direction only to keep it routable
  od.at(2, 0) = 0;
  auto set = generate_candidates(net, od, std::vector<double>(3, 0.0));
  auto st = optimize_assignment(set, std::vector<double>(3, 0.0));
  REQUIRE(st.switches == 0);
  REQUIRE(st.objective == st.initial_objective);
  REQUIRE(st.flow == std::vector<double>{3, 3, 3});
}

TEST_CASE("two trips on a four-cycle split across the two sides", "[optimizer]") {
  auto net = net_from_edges(4, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}, {3, 0}, {0, 3}});
  ODMatrix od(net.stop_ids);
  od.at(0, 2) = 2;  // two trips 0 -> 2
  OptimizerConfig cfg;
  cfg.eps = 1;
  auto set = generate_candidates(net, od, std::vector<double>(4, 0.0), cfg);
  auto st = optimize_assignment(set, std::vector<double>(4, 0.0), cfg);
  // One trip per side balances: every stop except the shared endpoints sees 1.
  REQUIRE(st.objective < st.initial_objective);
  std::vector<double> want{2, 1, 2, 1};
  REQUIRE(st.flow == want);
}

TEST_CASE("coordinate descent matches exhaustive search on small instances", "[optimizer]") {
  Rng rng(63);
  int evaluated = 0;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6 + rng.below(3);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < n; ++i) {
      edges.push_back({i, (i + 1) % n});
      edges.push_back({(i + 1) % n, i});
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && rng.uniform() < 0.2) edges.push_back({i, j});
    auto net = net_from_edges(n, edges);
    ODMatrix od(net.stop_ids);
    const int n_trips = 1 + static_cast<int>(rng.below(6));
    for (int t = 0; t < n_trips; ++t) {
      const std::size_t a = rng.below(n);
      std::size_t b = rng.below(n);
      if (a == b) b = (b + 1) % n;
      od.at(a, b) += 1;
    }
    OptimizerConfig cfg;
    cfg.eps = 2;
    cfg.candidate_cap = 3;
    std::vector<double> base(n);
    for (auto& v : base) v = static_cast<double>(rng.below(5));
    auto set = generate_candidates(net, od, base, cfg);
    auto st = optimize_assignment(set, base, cfg);

    // Exhaustive assignment enumeration.
    std::vector<std::size_t> trip_pair;
    for (std::size_t pi = 0; pi < set.pairs.size(); ++pi)
      for (long c = 0; c < set.pairs[pi].demand; ++c) trip_pair.push_back(pi);
    std::vector<std::size_t> choice(trip_pair.size(), 0);
    double best = std::numeric_limits<double>::max();
    while (true) {
      std::vector<double> flow = base;
      for (std::size_t t = 0; t < trip_pair.size(); ++t)
        for (std::size_t s : set.pairs[trip_pair[t]].routes[choice[t]]) flow[s] += 1.0;
      best = std::min(best, objective(flow));
      std::size_t k = 0;
      while (k < choice.size()) {
        if (++choice[k] < set.pairs[trip_pair[k]].routes.size()) break;
        choice[k] = 0;
        ++k;
      }
      if (k == choice.size()) break;
    }
    ++evaluated;
    REQUIRE(st.objective >= best - 1e-12);
    REQUIRE(st.objective <= st.initial_objective + 1e-12);
    if (best > 1e-12) worst_gap = std::max(worst_gap, (st.objective - best) / best);
    REQUIRE(st.objective <= best * 1.05 + 1e-9);
  }
  INFO("instances " << evaluated << " worst relative gap " << worst_gap);
  REQUIRE(evaluated == 50);
}

TEST_CASE("final flow equals recount and eps constraints hold", "[optimizer]") {
  Rng rng(64);
  const std::size_t n = 10;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i) {
    edges.push_back({i, (i + 1) % n});
    edges.push_back({(i + 1) % n, i});
  }
  for (int e = 0; e < 10; ++e) {
    const std::size_t a = rng.below(n), b = rng.below(n);
    if (a != b) edges.push_back({a, b});
  }
  auto net = net_from_edges(n, edges);
  ODMatrix od(net.stop_ids);
  for (int t = 0; t < 12; ++t) {
    const std::size_t a = rng.below(n);
    std::size_t b = rng.below(n);
    if (a == b) b = (b + 3) % n;
    od.at(a, b) += 1 + rng.below(3);
  }
  OptimizerConfig cfg;
  cfg.eps = 4;
  std::vector<double> base(n, 1.0);
  auto set = generate_candidates(net, od, base, cfg);
  auto st = optimize_assignment(set, base, cfg);
  REQUIRE(st.flow == recount_flow(set, st.trip_pair, st.choices, n));
  for (std::size_t t = 0; t < st.choices.size(); ++t) {
    const auto& pair = set.pairs[st.trip_pair[t]];
    REQUIRE(pair.routes[st.choices[t]].size() - 1 <= pair.shortest_hops + cfg.eps);
  }
  REQUIRE(st.objective <= st.initial_objective);
}

TEST_CASE("reroute fraction freezes part of the demand", "[optimizer]") {
  auto net = net_from_edges(4, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}, {3, 0}, {0, 3}});
  ODMatrix od(net.stop_ids);
  od.at(0, 2) = 10;
  OptimizerConfig cfg;
  cfg.eps = 1;
  cfg.reroute_fraction = 0.0;
  auto set = generate_candidates(net, od, std::vector<double>(4, 0.0), cfg);
  auto st = optimize_assignment(set, std::vector<double>(4, 0.0), cfg);
  REQUIRE(st.switches == 0);  // everything frozen on the shortest route
  for (std::size_t c : st.choices) REQUIRE(c == 0);
}
