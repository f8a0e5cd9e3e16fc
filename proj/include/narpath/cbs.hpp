// Optimal Conflict-Based Search over the grid environment, plus an exhaustive
// joint-state oracle used to certify optimality in tests. Objective is
// sum-of-costs with per-agent cost = final arrival time.
#pragma once

#include <optional>
#include <vector>

#include "narpath/mapf.hpp"

namespace narpath::cbs {

struct Constraint {
  enum class Kind { VertexBan, EdgeBan };
  int agent = 0;
  Kind kind = Kind::VertexBan;
  mapf::Cell from;  // EdgeBan source; unused for VertexBan
  mapf::Cell to;    // banned cell (VertexBan) or edge target (EdgeBan)
  int time = 1;     // the timestep being arrived at
};

struct Solution {
  // padded with goal repetitions to a common horizon; paths[i][0] == starts[i]
  std::vector<std::vector<mapf::Cell>> paths;
  std::vector<int> costs;  // per-agent final arrival time
  int sum_of_costs = 0;
  std::vector<mapf::JointAction> joint_actions;  // length = horizon
};

struct Outcome {
  enum class Status { Solved, Infeasible, BudgetExhausted };
  Status status = Status::Infeasible;
  std::optional<Solution> solution;
  int expanded = 0;
};

Outcome solve(const mapf::Scenario& scenario, int node_budget = 100000);

// consecutive path cells -> actions; padded tail steps are Stay; throws
// std::runtime_error on non-adjacent consecutive cells
std::vector<mapf::JointAction> extract_labels(const Solution& solution);

struct OracleResult {
  bool feasible = false;
  int sum_of_costs = 0;
};

// exhaustive joint-state search (A* over joint configurations, searched
// backwards from the goal configuration so that parked time costs nothing
// until an agent is disturbed). Guard: N <= 4 and H*W <= 36.
OracleResult joint_oracle(const mapf::Scenario& scenario);

}  // namespace narpath::cbs
