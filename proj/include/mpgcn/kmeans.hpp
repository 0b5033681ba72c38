#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/rng.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

struct KMeansResult {
  Tensor centers;           // K x d
  std::vector<int> labels;  // per point
  double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double v = a[i] - b[i];
    s += v * v;
  }
  return s;
}

inline KMeansResult lloyd_once(const Tensor& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows(), d = points.cols();
  KMeansResult res;
  res.centers = Tensor({k, d});

  // K-means++ seeding.
  std::vector<std::size_t> chosen;
  chosen.push_back(rng.below(n));
  std::vector<double> dist2(n, std::numeric_limits<double>::max());
  while (chosen.size() < k) {
    const double* last = points.data() + chosen.back() * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], sq_dist(points.data() + i * d, last, d));
      total += dist2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(n);
    } else {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  for (std::size_t c = 0; c < k; ++c)
    std::copy(points.data() + chosen[c] * d, points.data() + (chosen[c] + 1) * d,
              res.centers.data() + c * d);

  res.labels.assign(n, 0);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double v = sq_dist(points.data() + i * d, res.centers.data() + c * d, d);
        if (v < best) {
          best = v;
          arg = static_cast<int>(c);
        }
      }
      if (res.labels[i] != arg) {
        res.labels[i] = arg;
        changed = true;
      }
    }
    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.labels[i]];
      for (std::size_t j = 0; j < d; ++j)
        sums.at(res.labels[i], j) += points.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its center.
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double v = sq_dist(points.data() + i * d,
                                   res.centers.data() + res.labels[i] * d, d);
          if (v > fd) {
            fd = v;
            far = i;
          }
        }
        std::copy(points.data() + far * d, points.data() + (far + 1) * d,
                  res.centers.data() + c * d);
        changed = true;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j)
        res.centers.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += sq_dist(points.data() + i * d, res.centers.data() + res.labels[i] * d, d);
  return res;
}

}  // namespace detail

// Lloyd's algorithm with K-means++ seeding; best inertia over 10 restarts.
inline KMeansResult kmeans_init(const Tensor& points, std::size_t k, std::uint64_t seed,
                                int restarts = 10) {
  if (points.rank() != 2) throw ShapeError("kmeans_init expects an N x d matrix");
  if (k == 0 || k > points.rows())
    throw ConfigError("kmeans_init: k=" + std::to_string(k) + " for " +
                      std::to_string(points.rows()) + " points");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::max();
  for (int r = 0; r < restarts; ++r) {
    Rng rng(sub_seed(seed, "kmeans-restart-" + std::to_string(r)));
    auto cur = detail::lloyd_once(points, k, rng);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

}  // namespace mpgcn
