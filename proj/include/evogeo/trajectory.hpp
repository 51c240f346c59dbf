#pragma once

#include <vector>

#include "evogeo/core.hpp"

namespace evogeo {

// Ordered histograms with per-step costs; step_costs may be empty for raw
// simulated paths that have not been costed yet.
struct Trajectory {
  std::vector<Histogram> points;
  std::vector<double> step_costs;
  double total_cost = 0.0;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

}  // namespace evogeo
