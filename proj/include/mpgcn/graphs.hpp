#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/sparse.hpp"

namespace mpgcn {

// Weighted undirected passenger graph; edge weight counts shared-stop
// co-occurrences (per-stop minimum of the two visit counts, summed).
struct SharingStopGraph {
  std::vector<std::string> passenger_ids;  // node order
  SparseMatrix adjacency;                  // symmetric, zero diagonal

  std::size_t node_count() const { return passenger_ids.size(); }
};

// Directed stop graph; an edge i->j with its geographic distance in meters
// exists where some route serves stop j immediately after stop i.
struct StopNetwork {
  std::vector<std::string> stop_ids;  // registry order
  SparseMatrix adjacency;             // weights are distances in meters

  std::size_t node_count() const { return stop_ids.size(); }
};

// D^(-1/2) (A + I) D^(-1/2) with degrees computed from A + I.
struct NormalizedPropagation {
  SparseMatrix matrix;
};

inline SharingStopGraph build_sharing_stop(const PassengerStopProfile& profile) {
  if (profile.passengers.empty()) throw ContractError("build_sharing_stop: empty profile");
  SharingStopGraph g;
  for (const auto& [card, boardings] : profile.passengers) g.passenger_ids.push_back(card);

  // Inverted index stop -> (passenger, visit count); each stop contributes
  // min(count_i, count_j) to every pair that visits it, which reproduces the
  // pairwise intersection loop exactly.
  std::map<std::string, std::vector<std::pair<std::uint32_t, std::uint32_t>>> by_stop;
  {
    std::size_t idx = 0;
    for (const auto& [card, boardings] : profile.passengers) {
      std::map<std::string, std::uint32_t> counts;
      for (const auto& b : boardings) ++counts[b.stop_id];
      for (const auto& [stop, c] : counts)
        by_stop[stop].push_back({static_cast<std::uint32_t>(idx), c});
      ++idx;
    }
  }

  std::unordered_map<std::uint64_t, double> weights;
  for (const auto& [stop, visitors] : by_stop) {
    for (std::size_t a = 0; a < visitors.size(); ++a)
      for (std::size_t b = a + 1; b < visitors.size(); ++b) {
        const auto [i, ci] = visitors[a];
        const auto [j, cj] = visitors[b];
        weights[(static_cast<std::uint64_t>(i) << 32) | j] += std::min(ci, cj);
      }
  }

  std::vector<SparseEntry> entries;
  entries.reserve(weights.size() * 2);
  for (const auto& [key, w] : weights) {
    const std::size_t i = key >> 32;
    const std::size_t j = key & 0xffffffffULL;
    entries.push_back({i, j, w});
    entries.push_back({j, i, w});
  }
  g.adjacency = SparseMatrix::from_triplets(g.passenger_ids.size(), g.passenger_ids.size(),
                                            std::move(entries), true);
  return g;
}

// Great-circle distance in meters (mean Earth radius).
inline double haversine_m(double lon1, double lat1, double lon2, double lat2) {
  constexpr double kEarthRadiusM = 6371000.0;
  constexpr double kDeg = M_PI / 180.0;
  const double dlat = (lat2 - lat1) * kDeg;
  const double dlon = (lon2 - lon1) * kDeg;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

// One directed edge per consecutive pair of each route sequence. When
// bidirectional is set, the downline direction contributes the reversed
// pairs of every route as well.
inline StopNetwork build_stop_network(const StopRegistry& registry, bool bidirectional = false) {
  StopNetwork net;
  net.stop_ids = registry.stop_ids;
  std::map<std::pair<std::size_t, std::size_t>, double> edges;  // first weight wins
  auto add_pair = [&](const std::string& from, const std::string& to) {
    if (from == to) return;
    auto cf = registry.coords.find(from);
    auto ct = registry.coords.find(to);
    if (cf == registry.coords.end() || ct == registry.coords.end())
      throw GraphError("missing coordinates for stop '" +
                       (cf == registry.coords.end() ? from : to) + "'");
    const std::size_t i = registry.index_of(from);
    const std::size_t j = registry.index_of(to);
    if (edges.count({i, j})) return;
    double d = haversine_m(cf->second.lon, cf->second.lat, ct->second.lon, ct->second.lat);
    if (d <= 0.0) d = 1e-6;  // co-located stops; keep the edge usable
    edges[{i, j}] = d;
  };
  for (const auto& [route, stops] : registry.route_stops) {
    for (std::size_t k = 0; k + 1 < stops.size(); ++k) add_pair(stops[k], stops[k + 1]);
    if (bidirectional)
      for (std::size_t k = stops.size(); k-- > 1;) add_pair(stops[k], stops[k - 1]);
  }
  std::vector<SparseEntry> entries;
  entries.reserve(edges.size());
  for (const auto& [ij, d] : edges) entries.push_back({ij.first, ij.second, d});
  net.adjacency =
      SparseMatrix::from_triplets(net.stop_ids.size(), net.stop_ids.size(), std::move(entries));
  return net;
}

// Distance weights become similarities through a Gaussian kernel before
// normalization; sigma defaults to the median edge distance.
inline SparseMatrix affinity_from_distances(const SparseMatrix& distances, double sigma = 0.0) {
  if (distances.nnz() == 0) return distances;
  if (sigma <= 0.0) {
    std::vector<double> d;
    d.reserve(distances.nnz());
    for (const auto& e : distances.entries()) d.push_back(e.value);
    std::sort(d.begin(), d.end());
    sigma = d[d.size() / 2];
    if (sigma <= 0.0) sigma = 1.0;
  }
  std::vector<SparseEntry> entries;
  entries.reserve(distances.nnz());
  for (const auto& e : distances.entries())
    entries.push_back({e.row, e.col, std::exp(-(e.value * e.value) / (sigma * sigma))});
  return SparseMatrix::from_triplets(distances.rows(), distances.cols(), std::move(entries),
                                     distances.symmetric());
}

inline NormalizedPropagation normalize(const SparseMatrix& adjacency, bool symmetrize = false) {
  if (adjacency.rows() != adjacency.cols())
    throw ShapeError("normalize: adjacency must be square");
  const std::size_t n = adjacency.rows();
  std::vector<SparseEntry> base;
  base.reserve(adjacency.nnz() * (symmetrize ? 2 : 1) + n);
  if (symmetrize) {
    // max(A, A^T): emit both orientations of the larger value.
    std::map<std::pair<std::size_t, std::size_t>, double> sym;
    for (const auto& e : adjacency.entries()) {
      auto key = std::minmax(e.row, e.col);
      auto& v = sym[{key.first, key.second}];
      v = std::max(v, e.value);
    }
    for (const auto& [ij, v] : sym) {
      base.push_back({ij.first, ij.second, v});
      if (ij.first != ij.second) base.push_back({ij.second, ij.first, v});
    }
  } else {
    base.assign(adjacency.entries().begin(), adjacency.entries().end());
  }
  // A + I
  for (std::size_t i = 0; i < n; ++i) base.push_back({i, i, 1.0});
  auto tilde = SparseMatrix::from_triplets(n, n, std::move(base));
  const auto degrees = tilde.row_sums();
  std::vector<SparseEntry> out;
  out.reserve(tilde.nnz());
  for (const auto& e : tilde.entries()) {
    const double d = std::sqrt(degrees[e.row]) * std::sqrt(degrees[e.col]);
    out.push_back({e.row, e.col, e.value / d});
  }
  NormalizedPropagation prop;
  prop.matrix = SparseMatrix::from_triplets(n, n, std::move(out),
                                            symmetrize || adjacency.symmetric());
  return prop;
}

inline std::map<std::size_t, std::size_t> degree_distribution(const SharingStopGraph& g) {
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto [b, e] = g.adjacency.row(i);
    hist[static_cast<std::size_t>(e - b)] += 1;
  }
  return hist;
}

}  // namespace mpgcn
