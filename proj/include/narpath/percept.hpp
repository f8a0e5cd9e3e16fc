// Per-agent local observations and the inter-agent adjacency consumed by the
// graph network.
#pragma once

#include <vector>

#include "narpath/mapf.hpp"
#include "narpath/nn.hpp"

namespace narpath::percept {

inline constexpr int kFov = 9;
inline constexpr int kFovRadius = 4;
inline constexpr int kChannels = 3;
inline constexpr int kDefaultCommRadius = 4;

// 3 x 9 x 9 window centered on the agent:
//   channel 0: obstacle or out-of-bounds mask
//   channel 1: other-agent occupancy (the agent itself excluded)
//   channel 2: own goal, clipped to the window boundary when outside the FOV
// window index (i, j) maps to world cell (row - 4 + i, col - 4 + j)
nn::Tensor observe(const mapf::Scenario& scenario, const std::vector<mapf::Cell>& positions,
                   int agent);

std::vector<nn::Tensor> observe_all(const mapf::Scenario& scenario,
                                    const std::vector<mapf::Cell>& positions);

// symmetric-normalized adjacency with self-loops, C = D^{-1/2} (A + I) D^{-1/2},
// where A links agents within Chebyshev distance r_comm
nn::Tensor build_adjacency(const std::vector<mapf::Cell>& positions,
                           int r_comm = kDefaultCommRadius);

}  // namespace narpath::percept
