#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"

namespace mpgcn {

struct OptimizerConfig {
  int eps = 5;                    // extra hops allowed over the shortest route
  int candidate_cap = 50;         // per OD pair, lowest hop counts kept
  int max_sweeps = 20;
  double min_improvement = 1e-9;  // required strict objective decrease
  double reroute_fraction = 1.0;  // share of each pair's trips allowed to move
  std::size_t expansion_limit = 200000;  // DFS safety valve per OD pair
  // Paired switches escape two-trip local optima once single-trip sweeps
  // stall; skipped when the joint search would exceed this evaluation budget.
  std::size_t pair_escape_budget = 250000;
};

struct CandidatePair {
  std::size_t origin = 0;
  std::size_t dest = 0;
  long demand = 0;
  std::size_t shortest_hops = 0;
  std::vector<std::vector<std::size_t>> routes;  // sorted by (hops, lexicographic)
};

struct CandidateRouteSet {
  std::vector<CandidatePair> pairs;  // ascending (origin, dest)
  std::vector<double> predicted_flow;
  int eps = 5;
  bool cap_hit = false;
};

struct AssignmentState {
  std::vector<std::size_t> trip_pair;   // trip -> index into candidate pairs
  std::vector<std::size_t> choices;     // trip -> route index within its pair
  std::vector<double> flow;             // per-stop recount of chosen routes only
  double objective = 0.0;               // std of flow + predicted background
  double initial_objective = 0.0;
  int sweeps = 0;
  std::size_t switches = 0;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> adjacency_lists(const StopNetwork& net) {
  std::vector<std::vector<std::size_t>> adj(net.node_count());
  for (const auto& e : net.adjacency.entries()) adj[e.row].push_back(e.col);
  for (auto& v : adj) std::sort(v.begin(), v.end());
  return adj;
}

inline std::vector<std::size_t> bfs_hops(const std::vector<std::vector<std::size_t>>& adj,
                                         std::size_t from) {
  const std::size_t inf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(adj.size(), inf);
  std::queue<std::size_t> q;
  dist[from] = 0;
  q.push(from);
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : adj[u])
      if (dist[v] == inf) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
  }
  return dist;
}

struct PathEnumerator {
  const std::vector<std::vector<std::size_t>>& adj;
  const std::vector<std::size_t>& dist_to_dest;  // reverse BFS lower bound
  std::size_t dest;
  std::size_t bound;
  std::size_t expansions = 0;
  std::size_t limit;
  std::vector<std::vector<std::size_t>> found;
  std::vector<std::size_t> path;
  std::vector<char> on_path;

  void dfs(std::size_t u) {
    if (++expansions > limit)
      throw OptimizationError("candidate enumeration exceeded the expansion limit");
    if (u == dest) {
      found.push_back(path);
      return;
    }
    for (std::size_t v : adj[u]) {
      if (on_path[v]) continue;
      const std::size_t used = path.size();  // hops so far
      if (dist_to_dest[v] == std::numeric_limits<std::size_t>::max()) continue;
      if (used + dist_to_dest[v] > bound) continue;
      on_path[v] = 1;
      path.push_back(v);
      dfs(v);
      path.pop_back();
      on_path[v] = 0;
    }
  }
};

}  // namespace detail

// Hop-count shortest paths define the budget; all simple paths within
// shortest + eps hops are enumerated, lowest hop counts first, capped.
inline CandidateRouteSet generate_candidates(const StopNetwork& net, const ODMatrix& od,
                                             const std::vector<double>& predicted_flow,
                                             const OptimizerConfig& cfg = {}) {
  if (od.stops != net.stop_ids)
    throw ContractError("generate_candidates: OD and network stop registries differ");
  if (predicted_flow.size() != net.node_count())
    throw ContractError("generate_candidates: predicted flow length mismatch");
  auto adj = detail::adjacency_lists(net);
  auto radj = adj;  // reversed
  {
    std::vector<std::vector<std::size_t>> rev(adj.size());
    for (std::size_t u = 0; u < adj.size(); ++u)
      for (std::size_t v : adj[u]) rev[v].push_back(u);
    for (auto& v : rev) std::sort(v.begin(), v.end());
    radj = std::move(rev);
  }

  CandidateRouteSet set;
  set.eps = cfg.eps;
  set.predicted_flow = predicted_flow;
  std::vector<std::vector<std::size_t>> fwd_cache(net.node_count());
  std::vector<std::vector<std::size_t>> rev_cache(net.node_count());
  const std::size_t inf = std::numeric_limits<std::size_t>::max();

  for (std::size_t i = 0; i < od.size(); ++i) {
    for (std::size_t j = 0; j < od.size(); ++j) {
      if (i == j || od.at(i, j) <= 0) continue;
      if (fwd_cache[i].empty()) fwd_cache[i] = detail::bfs_hops(adj, i);
      if (fwd_cache[i][j] == inf)
        throw OptimizationError("demanded OD pair " + net.stop_ids[i] + " -> " +
                                net.stop_ids[j] + " is disconnected");
      if (rev_cache[j].empty()) rev_cache[j] = detail::bfs_hops(radj, j);

      detail::PathEnumerator en{adj, rev_cache[j], j,
                                fwd_cache[i][j] + static_cast<std::size_t>(cfg.eps),
                                0, cfg.expansion_limit, {}, {}, {}};
      en.on_path.assign(net.node_count(), 0);
      en.on_path[i] = 1;
      en.path.push_back(i);
      en.dfs(i);

      CandidatePair pair;
      pair.origin = i;
      pair.dest = j;
      pair.demand = od.at(i, j);
      pair.shortest_hops = fwd_cache[i][j];
      std::sort(en.found.begin(), en.found.end(),
                [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
                  if (a.size() != b.size()) return a.size() < b.size();
                  return a < b;
                });
      if (en.found.size() > static_cast<std::size_t>(cfg.candidate_cap)) {
        en.found.resize(cfg.candidate_cap);
        set.cap_hit = true;
      }
      pair.routes = std::move(en.found);
      set.pairs.push_back(std::move(pair));
    }
  }
  return set;
}

// Flow at a stop counts the chosen routes that pass it, endpoints included.
inline std::vector<double> recount_flow(const CandidateRouteSet& set,
                                        const std::vector<std::size_t>& trip_pair,
                                        const std::vector<std::size_t>& choices,
                                        std::size_t n_stops) {
  std::vector<double> flow(n_stops, 0.0);
  for (std::size_t t = 0; t < trip_pair.size(); ++t) {
    const auto& route = set.pairs[trip_pair[t]].routes[choices[t]];
    for (std::size_t s : route) flow[s] += 1.0;
  }
  return flow;
}

// Population standard deviation (Eq. 13).
inline double objective(const std::vector<double>& flow) {
  if (flow.empty()) throw ContractError("objective: empty flow vector");
  double sum = 0.0;
  for (double v : flow) sum += v;
  const double mean = sum / static_cast<double>(flow.size());
  double ss = 0.0;
  for (double v : flow) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(flow.size()));
}

// Coordinate descent: every trip starts on its shortest candidate; sweeps in
// demand-descending order switch a trip to the candidate that minimizes the
// objective given all other choices, until no switch improves it.
inline AssignmentState optimize_assignment(const CandidateRouteSet& set,
                                           const std::vector<double>& base_flow,
                                           const OptimizerConfig& cfg = {}) {
  const std::size_t n_stops = base_flow.size();
  AssignmentState st;
  struct TripRef {
    long demand;
    std::size_t pair;
    std::size_t copy;
    bool frozen;
  };
  std::vector<TripRef> trips;
  for (std::size_t pi = 0; pi < set.pairs.size(); ++pi) {
    const auto& pair = set.pairs[pi];
    if (pair.routes.empty())
      throw ContractError("optimize_assignment: pair without candidates");
    const long movable = static_cast<long>(pair.demand * cfg.reroute_fraction + 1e-9);
    for (long c = 0; c < pair.demand; ++c)
      trips.push_back({pair.demand, pi, static_cast<std::size_t>(c), c >= movable});
  }
  std::sort(trips.begin(), trips.end(), [&](const TripRef& a, const TripRef& b) {
    if (a.demand != b.demand) return a.demand > b.demand;
    const auto& pa = set.pairs[a.pair];
    const auto& pb = set.pairs[b.pair];
    return std::tie(pa.origin, pa.dest, a.copy) < std::tie(pb.origin, pb.dest, b.copy);
  });

  st.trip_pair.resize(trips.size());
  st.choices.assign(trips.size(), 0);
  for (std::size_t t = 0; t < trips.size(); ++t) st.trip_pair[t] = trips[t].pair;

  std::vector<double> cur(n_stops);  // flow + base
  auto rebuild = [&]() {
    cur = base_flow;
    for (std::size_t t = 0; t < trips.size(); ++t)
      for (std::size_t s : set.pairs[st.trip_pair[t]].routes[st.choices[t]]) cur[s] += 1.0;
  };
  rebuild();
  st.initial_objective = objective(cur);
  double cur_obj = st.initial_objective;

  double sum = 0.0, sumsq = 0.0;
  auto refresh_moments = [&]() {
    sum = sumsq = 0.0;
    for (double v : cur) {
      sum += v;
      sumsq += v * v;
    }
  };
  auto std_of_moments = [&](double s1, double s2) {
    const double n = static_cast<double>(n_stops);
    const double var = std::max(0.0, s2 / n - (s1 / n) * (s1 / n));
    return std::sqrt(var);
  };

  // Objective of the full assignment with two trips overridden; used by the
  // paired escape phase.
  auto joint_objective = [&](std::size_t ta, std::size_t ra, std::size_t tb, std::size_t rb) {
    const auto& route_a_old = set.pairs[st.trip_pair[ta]].routes[st.choices[ta]];
    const auto& route_b_old = set.pairs[st.trip_pair[tb]].routes[st.choices[tb]];
    const auto& route_a_new = set.pairs[st.trip_pair[ta]].routes[ra];
    const auto& route_b_new = set.pairs[st.trip_pair[tb]].routes[rb];
    double s1 = sum, s2 = sumsq;
    auto remove = [&](const std::vector<std::size_t>& r) {
      for (std::size_t s : r) {
        s2 += -2.0 * cur[s] + 1.0;
        s1 -= 1.0;
        cur[s] -= 1.0;
      }
    };
    auto add = [&](const std::vector<std::size_t>& r) {
      for (std::size_t s : r) {
        s2 += 2.0 * cur[s] + 1.0;
        s1 += 1.0;
        cur[s] += 1.0;
      }
    };
    remove(route_a_old);
    remove(route_b_old);
    add(route_a_new);
    add(route_b_new);
    const double obj = std_of_moments(s1, s2);
    remove(route_a_new);
    remove(route_b_new);
    add(route_a_old);
    add(route_b_old);
    return obj;
  };

  std::size_t movable_choices = 0;
  for (const auto& tr : trips)
    if (!tr.frozen) movable_choices += set.pairs[tr.pair].routes.size();
  const bool pair_escape_allowed = movable_choices * movable_choices <= cfg.pair_escape_budget;
  const bool triple_escape_allowed =
      movable_choices * movable_choices * movable_choices <= cfg.pair_escape_budget;

  for (st.sweeps = 0; st.sweeps < cfg.max_sweeps; ++st.sweeps) {
    rebuild();  // guards against accumulated floating-point drift
    refresh_moments();
    cur_obj = std_of_moments(sum, sumsq);
    bool any_switch = false;
    for (std::size_t t = 0; t < trips.size(); ++t) {
      if (trips[t].frozen) continue;
      const auto& pair = set.pairs[st.trip_pair[t]];
      if (pair.routes.size() < 2) continue;
      // Remove the current route's contribution.
      const auto& cur_route = pair.routes[st.choices[t]];
      double s1 = sum, s2 = sumsq;
      for (std::size_t s : cur_route) {
        s2 += -2.0 * cur[s] + 1.0;
        s1 -= 1.0;
        cur[s] -= 1.0;
      }
      double best_obj = cur_obj;
      std::size_t best_choice = st.choices[t];
      for (std::size_t r = 0; r < pair.routes.size(); ++r) {
        double c1 = s1, c2 = s2;
        for (std::size_t s : pair.routes[r]) {
          c2 += 2.0 * cur[s] + 1.0;
          c1 += 1.0;
          cur[s] += 1.0;
        }
        const double obj = std_of_moments(c1, c2);
        for (std::size_t s : pair.routes[r]) cur[s] -= 1.0;
        if (obj < best_obj - cfg.min_improvement) {
          best_obj = obj;
          best_choice = r;
        }
      }
      // Re-apply the winning route.
      for (std::size_t s : pair.routes[best_choice]) {
        s2 += 2.0 * cur[s] + 1.0;
        s1 += 1.0;
        cur[s] += 1.0;
      }
      sum = s1;
      sumsq = s2;
      if (best_choice != st.choices[t]) {
        st.choices[t] = best_choice;
        ++st.switches;
        any_switch = true;
        cur_obj = best_obj;
      }
    }
    if (any_switch) continue;

    // Single-trip moves are exhausted; look for one strictly improving
    // paired switch, then for a triple, before giving up.
    if (!pair_escape_allowed) break;
    double best_obj = cur_obj;
    std::vector<std::pair<std::size_t, std::size_t>> best_move;  // (trip, route)
    for (std::size_t ta = 0; ta < trips.size(); ++ta) {
      if (trips[ta].frozen) continue;
      for (std::size_t tb = ta + 1; tb < trips.size(); ++tb) {
        if (trips[tb].frozen) continue;
        const auto& ra_routes = set.pairs[st.trip_pair[ta]].routes;
        const auto& rb_routes = set.pairs[st.trip_pair[tb]].routes;
        for (std::size_t ra = 0; ra < ra_routes.size(); ++ra)
          for (std::size_t rb = 0; rb < rb_routes.size(); ++rb) {
            if (ra == st.choices[ta] && rb == st.choices[tb]) continue;
            const double obj = joint_objective(ta, ra, tb, rb);
            if (obj < best_obj - cfg.min_improvement) {
              best_obj = obj;
              best_move = {{ta, ra}, {tb, rb}};
            }
          }
      }
    }
    if (best_move.empty() && triple_escape_allowed) {
      for (std::size_t ta = 0; ta < trips.size(); ++ta) {
        if (trips[ta].frozen) continue;
        for (std::size_t tb = ta + 1; tb < trips.size(); ++tb) {
          if (trips[tb].frozen) continue;
          for (std::size_t tc = tb + 1; tc < trips.size(); ++tc) {
            if (trips[tc].frozen) continue;
            const auto& ra_routes = set.pairs[st.trip_pair[ta]].routes;
            const auto& rb_routes = set.pairs[st.trip_pair[tb]].routes;
            const auto& rc_routes = set.pairs[st.trip_pair[tc]].routes;
            for (std::size_t ra = 0; ra < ra_routes.size(); ++ra)
              for (std::size_t rb = 0; rb < rb_routes.size(); ++rb)
                for (std::size_t rc = 0; rc < rc_routes.size(); ++rc) {
                  if (ra == st.choices[ta] && rb == st.choices[tb] && rc == st.choices[tc])
                    continue;
                  double s1 = sum, s2 = sumsq;
                  auto adjust = [&](const std::vector<std::size_t>& r, double dir) {
                    for (std::size_t s : r) {
                      s2 += dir * 2.0 * cur[s] + 1.0;
                      s1 += dir;
                      cur[s] += dir;
                    }
                  };
                  adjust(set.pairs[st.trip_pair[ta]].routes[st.choices[ta]], -1.0);
                  adjust(set.pairs[st.trip_pair[tb]].routes[st.choices[tb]], -1.0);
                  adjust(set.pairs[st.trip_pair[tc]].routes[st.choices[tc]], -1.0);
                  adjust(ra_routes[ra], +1.0);
                  adjust(rb_routes[rb], +1.0);
                  adjust(rc_routes[rc], +1.0);
                  const double obj3 = std_of_moments(s1, s2);
                  adjust(ra_routes[ra], -1.0);
                  adjust(rb_routes[rb], -1.0);
                  adjust(rc_routes[rc], -1.0);
                  adjust(set.pairs[st.trip_pair[ta]].routes[st.choices[ta]], +1.0);
                  adjust(set.pairs[st.trip_pair[tb]].routes[st.choices[tb]], +1.0);
                  adjust(set.pairs[st.trip_pair[tc]].routes[st.choices[tc]], +1.0);
                  if (obj3 < best_obj - cfg.min_improvement) {
                    best_obj = obj3;
                    best_move = {{ta, ra}, {tb, rb}, {tc, rc}};
                  }
                }
          }
        }
      }
    }
    if (best_move.empty()) break;
    for (auto [t, r] : best_move) st.choices[t] = r;
    st.switches += best_move.size();
  }

  st.flow = recount_flow(set, st.trip_pair, st.choices, n_stops);
  std::vector<double> final_total(n_stops);
  for (std::size_t s = 0; s < n_stops; ++s) final_total[s] = st.flow[s] + base_flow[s];
  st.objective = objective(final_total);
  return st;
}

}  // namespace mpgcn
