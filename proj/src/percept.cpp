#include "narpath/percept.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace narpath::percept {

using mapf::Cell;

nn::Tensor observe(const mapf::Scenario& scenario, const std::vector<Cell>& positions, int agent) {
  if (agent < 0 || agent >= static_cast<int>(positions.size()))
    throw std::invalid_argument("percept: agent index out of range");
  const Cell center = positions[agent];
  nn::Tensor obs({kChannels, kFov, kFov});
  auto at = [&](int ch, int i, int j) -> double& {
    return obs.v[(static_cast<size_t>(ch) * kFov + i) * kFov + j];
  };

  for (int i = 0; i < kFov; ++i) {
    for (int j = 0; j < kFov; ++j) {
      const Cell world{center.row - kFovRadius + i, center.col - kFovRadius + j};
      if (!scenario.map.is_free(world)) at(0, i, j) = 1.0;
    }
  }
  for (int other = 0; other < static_cast<int>(positions.size()); ++other) {
    if (other == agent) continue;
    const int di = positions[other].row - center.row + kFovRadius;
    const int dj = positions[other].col - center.col + kFovRadius;
    if (di >= 0 && di < kFov && dj >= 0 && dj < kFov) at(1, di, dj) = 1.0;
  }
  const Cell goal = scenario.goals[agent];
  const int gi = std::clamp(goal.row - center.row, -kFovRadius, kFovRadius) + kFovRadius;
  const int gj = std::clamp(goal.col - center.col, -kFovRadius, kFovRadius) + kFovRadius;
  at(2, gi, gj) = 1.0;
  return obs;
}

std::vector<nn::Tensor> observe_all(const mapf::Scenario& scenario,
                                    const std::vector<Cell>& positions) {
  std::vector<nn::Tensor> all;
  all.reserve(positions.size());
  for (int i = 0; i < static_cast<int>(positions.size()); ++i)
    all.push_back(observe(scenario, positions, i));
  return all;
}

nn::Tensor build_adjacency(const std::vector<Cell>& positions, int r_comm) {
  if (r_comm < 1) throw std::invalid_argument("percept: r_comm must be >= 1");
  const int n = static_cast<int>(positions.size());
  nn::Tensor a({n, n});
  for (int i = 0; i < n; ++i) {
    a.at(i, i) = 1.0;  // self-loop
    for (int j = i + 1; j < n; ++j) {
      const int cheb = std::max(std::abs(positions[i].row - positions[j].row),
                                std::abs(positions[i].col - positions[j].col));
      if (cheb <= r_comm) a.at(i, j) = a.at(j, i) = 1.0;
    }
  }
  std::vector<double> inv_sqrt_deg(n);
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += a.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

}  // namespace narpath::percept
