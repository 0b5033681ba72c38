#pragma once

#include <vector>

#include "mpgcn/optim.hpp"
#include "mpgcn/tape.hpp"

namespace mpgcn::graphnodes {

inline std::vector<Tape::NodeId> register_params(Tape& t, const ParamSet& ps) {
  std::vector<Tape::NodeId> ids;
  ids.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) ids.push_back(t.parameter(ps.tensor(i)));
  return ids;
}

}  // namespace mpgcn::graphnodes
