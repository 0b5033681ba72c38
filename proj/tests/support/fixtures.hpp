#pragma once

// Shared synthetic fixtures for the predictor and acceptance suites.

#include <cmath>
#include <cstdint>
#include <string>

#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/rng.hpp"

namespace fixtures {

// Stops laid out on a line, one route covering them in order.
inline mpgcn::StopRegistry line_registry(int n_stops) {
  mpgcn::StopRegistry reg;
  for (int i = 0; i < n_stops; ++i) {
    std::string id = "L" + std::to_string(100 + i);
    reg.stop_ids.push_back(id);
    reg.coords[id] = {119.0 + 0.005 * i, 33.5};
    reg.route_stops["1"].push_back(id);
  }
  reg.finalize();
  return reg;
}

inline mpgcn::NormalizedPropagation line_propagation(int n_stops) {
  auto net = mpgcn::build_stop_network(line_registry(n_stops), true);
  return mpgcn::normalize(mpgcn::affinity_from_distances(net.adjacency), true);
}

// Smooth diurnal sinusoid per stop with small seeded noise.
inline mpgcn::FlowTensor sinusoid_flow(int days, int n_stops, int step_minutes,
                                       std::uint64_t seed, double noise_frac = 0.02) {
  auto reg = line_registry(n_stops);
  mpgcn::FlowTensor flow;
  flow.step_minutes = step_minutes;
  flow.start_day = 18200;
  flow.n_days = days;
  flow.stops = reg.stop_ids;
  const int spd = flow.slots_per_day();
  flow.values = mpgcn::Tensor({static_cast<std::size_t>(days) * spd,
                               static_cast<std::size_t>(n_stops)});
  mpgcn::Rng rng(seed);
  for (int d = 0; d < days; ++d)
    for (int k = 0; k < spd; ++k)
      for (int s = 0; s < n_stops; ++s) {
        const double phase = 2.0 * M_PI * (static_cast<double>(k) / spd);
        const double amp = 8.0 + 3.0 * s;
        const double base = 12.0 + 2.0 * s;
        double v = base + amp * std::sin(2.0 * phase + 0.4 * s) +
                   0.5 * amp * std::sin(phase + 1.1 * s);
        v += noise_frac * amp * rng.normal();
        flow.values.at(static_cast<std::size_t>(d) * spd + k, s) = std::max(0.0, v);
      }
  return flow;
}

}  // namespace fixtures
