#include "narpath/cbs.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace narpath::cbs {

using mapf::Action;
using mapf::Cell;
using mapf::GridMap;
using mapf::Scenario;

namespace {

// expansion order fixes tie-breaking everywhere
constexpr Action kActionOrder[5] = {Action::Up, Action::Down, Action::Left, Action::Right,
                                    Action::Stay};

int cell_index(const GridMap& map, Cell c) { return c.row * map.width + c.col; }

// BFS distances to `target` over free cells; -1 for unreachable
std::vector<int> bfs_distances(const GridMap& map, Cell target) {
  std::vector<int> dist(static_cast<size_t>(map.height) * map.width, -1);
  std::deque<Cell> queue;
  dist[cell_index(map, target)] = 0;
  queue.push_back(target);
  while (!queue.empty()) {
    Cell cur = queue.front();
    queue.pop_front();
    for (Action a : kActionOrder) {
      if (a == Action::Stay) continue;
      Cell nxt = mapf::apply(cur, a);
      if (!map.is_free(nxt)) continue;
      int& d = dist[cell_index(map, nxt)];
      if (d < 0) {
        d = dist[cell_index(map, cur)] + 1;
        queue.push_back(nxt);
      }
    }
  }
  return dist;
}

std::uint64_t pack3(int a, int b, int c) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 40) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(b) & 0xfffff) << 20) |
         (static_cast<std::uint32_t>(c) & 0xfffff);
}

struct LowLevelResult {
  bool found = false;
  std::vector<Cell> path;  // start .. goal
  int cost = 0;
};

// space-time A* for one agent under its constraint set; cost = arrival time,
// ties broken by fewer direction changes, then by expansion order
LowLevelResult low_level(const GridMap& map, Cell start, Cell goal,
                         const std::vector<Constraint>& constraints, int agent,
                         const std::vector<int>& dist_to_goal) {
  std::unordered_set<std::uint64_t> vertex_bans;   // (cell, t)
  std::unordered_set<std::uint64_t> edge_bans;     // (from, to, t)
  int max_constraint_time = 0;
  int goal_hold = 0;  // must not sit on the goal before this time
  for (const auto& c : constraints) {
    if (c.agent != agent) continue;
    max_constraint_time = std::max(max_constraint_time, c.time);
    if (c.kind == Constraint::Kind::VertexBan) {
      vertex_bans.insert(pack3(cell_index(map, c.to), c.time, 0));
      if (c.to == goal) goal_hold = std::max(goal_hold, c.time + 1);
    } else {
      edge_bans.insert(pack3(cell_index(map, c.from), cell_index(map, c.to), c.time));
    }
  }
  const int horizon = map.height * map.width + max_constraint_time;

  struct NodeRec {
    Cell cell;
    int t;
    int last_action;  // -1 at the root
    int dir_changes;
    int parent;
  };
  struct QEntry {
    int f;
    int dir_changes;
    long seq;
    int node;
    bool operator>(const QEntry& o) const {
      if (f != o.f) return f > o.f;
      if (dir_changes != o.dir_changes) return dir_changes > o.dir_changes;
      return seq > o.seq;
    }
  };

  if (dist_to_goal[cell_index(map, start)] < 0) return {};

  std::vector<NodeRec> nodes;
  std::priority_queue<QEntry, std::vector<QEntry>, std::greater<QEntry>> open;
  std::unordered_set<std::uint64_t> closed;  // (cell, t, last_action+1)
  long seq = 0;

  nodes.push_back({start, 0, -1, 0, -1});
  open.push({dist_to_goal[cell_index(map, start)], 0, seq++, 0});

  while (!open.empty()) {
    QEntry top = open.top();
    open.pop();
    const NodeRec cur = nodes[top.node];
    const std::uint64_t key = pack3(cell_index(map, cur.cell), cur.t, cur.last_action + 1);
    if (!closed.insert(key).second) continue;

    if (cur.cell == goal && cur.t >= goal_hold) {
      LowLevelResult res;
      res.found = true;
      res.cost = cur.t;
      for (int i = top.node; i >= 0; i = nodes[i].parent) res.path.push_back(nodes[i].cell);
      std::reverse(res.path.begin(), res.path.end());
      return res;
    }
    if (cur.t >= horizon) continue;

    for (int ai = 0; ai < 5; ++ai) {
      const Action a = kActionOrder[ai];
      Cell nxt = mapf::apply(cur.cell, a);
      if (!map.is_free(nxt)) continue;
      const int nt = cur.t + 1;
      if (vertex_bans.count(pack3(cell_index(map, nxt), nt, 0))) continue;
      if (edge_bans.count(pack3(cell_index(map, cur.cell), cell_index(map, nxt), nt))) continue;
      const int h = dist_to_goal[cell_index(map, nxt)];
      if (h < 0) continue;
      const int changes = cur.dir_changes + (cur.last_action >= 0 && cur.last_action != ai ? 1 : 0);
      nodes.push_back({nxt, nt, ai, changes, top.node});
      open.push({nt + h, changes, seq++, static_cast<int>(nodes.size()) - 1});
    }
  }
  return {};
}

struct FoundConflict {
  bool any = false;
  mapf::Conflict conflict;
  int count = 0;
};

Cell padded_at(const std::vector<Cell>& path, int t) {
  return t < static_cast<int>(path.size()) ? path[t] : path.back();
}

FoundConflict scan_conflicts(const std::vector<std::vector<Cell>>& paths) {
  FoundConflict out;
  int horizon = 0;
  for (const auto& p : paths) horizon = std::max(horizon, static_cast<int>(p.size()) - 1);
  const int n = static_cast<int>(paths.size());
  for (int t = 1; t <= horizon; ++t) {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const Cell pi = padded_at(paths[i], t - 1), pj = padded_at(paths[j], t - 1);
        const Cell ni = padded_at(paths[i], t), nj = padded_at(paths[j], t);
        if (ni == nj) {
          out.count += 1;
          if (!out.any) {
            out.any = true;
            out.conflict = {mapf::Conflict::Kind::Vertex, i, j, ni, ni, t};
          }
        } else if (ni == pj && nj == pi) {
          out.count += 1;
          if (!out.any) {
            out.any = true;
            out.conflict = {mapf::Conflict::Kind::Edge, i, j, pi, ni, t};
          }
        }
      }
    }
  }
  return out;
}

struct CtNode {
  std::vector<Constraint> constraints;
  std::vector<std::vector<Cell>> paths;
  std::vector<int> costs;
  int cost = 0;
  int conflicts = 0;
  long seq = 0;
};

struct CtCompare {
  bool operator()(const CtNode& a, const CtNode& b) const {
    if (a.cost != b.cost) return a.cost > b.cost;
    if (a.conflicts != b.conflicts) return a.conflicts > b.conflicts;
    return a.seq > b.seq;
  }
};

Solution finish_solution(CtNode&& node) {
  Solution sol;
  sol.costs = std::move(node.costs);
  sol.sum_of_costs = node.cost;
  int horizon = 0;
  for (const auto& p : node.paths) horizon = std::max(horizon, static_cast<int>(p.size()) - 1);
  sol.paths = std::move(node.paths);
  for (auto& p : sol.paths)
    while (static_cast<int>(p.size()) <= horizon) p.push_back(p.back());
  sol.joint_actions = extract_labels(sol);
  return sol;
}

}  // namespace

std::vector<mapf::JointAction> extract_labels(const Solution& solution) {
  std::vector<mapf::JointAction> labels;
  if (solution.paths.empty()) return labels;
  const int horizon = static_cast<int>(solution.paths.front().size()) - 1;
  for (int t = 0; t < horizon; ++t) {
    mapf::JointAction joint;
    joint.reserve(solution.paths.size());
    for (const auto& path : solution.paths) {
      try {
        joint.push_back(mapf::action_between(path[t], path[t + 1]));
      } catch (const std::invalid_argument&) {
        throw std::runtime_error("cbs: corrupt solution, non-adjacent consecutive cells");
      }
    }
    labels.push_back(std::move(joint));
  }
  return labels;
}

Outcome solve(const Scenario& scenario, int node_budget) {
  scenario.validate();
  const int n = scenario.agent_count();

  std::vector<std::vector<int>> dists(n);
  for (int i = 0; i < n; ++i) dists[i] = bfs_distances(scenario.map, scenario.goals[i]);

  Outcome out;
  CtNode root;
  root.paths.resize(n);
  root.costs.resize(n);
  for (int i = 0; i < n; ++i) {
    auto res = low_level(scenario.map, scenario.starts[i], scenario.goals[i], {}, i, dists[i]);
    if (!res.found) {
      out.status = Outcome::Status::Infeasible;
      return out;
    }
    root.paths[i] = std::move(res.path);
    root.costs[i] = res.cost;
    root.cost += res.cost;
  }
  root.conflicts = scan_conflicts(root.paths).count;

  std::priority_queue<CtNode, std::vector<CtNode>, CtCompare> open;
  long seq = 0;
  root.seq = seq++;
  open.push(std::move(root));

  while (!open.empty()) {
    CtNode cur = open.top();
    open.pop();
    if (out.expanded >= node_budget) {
      out.status = Outcome::Status::BudgetExhausted;
      return out;
    }
    out.expanded += 1;

    FoundConflict fc = scan_conflicts(cur.paths);
    if (!fc.any) {
      out.status = Outcome::Status::Solved;
      out.solution = finish_solution(std::move(cur));
      return out;
    }

    const auto& c = fc.conflict;
    for (int side = 0; side < 2; ++side) {
      const int agent = side == 0 ? c.agent_a : c.agent_b;
      Constraint nc;
      nc.agent = agent;
      nc.time = c.time;
      if (c.kind == mapf::Conflict::Kind::Vertex) {
        nc.kind = Constraint::Kind::VertexBan;
        nc.to = c.cell_a;
      } else {
        nc.kind = Constraint::Kind::EdgeBan;
        // cell_a -> cell_b is agent_a's move; agent_b moves the reverse way
        nc.from = side == 0 ? c.cell_a : c.cell_b;
        nc.to = side == 0 ? c.cell_b : c.cell_a;
      }
      CtNode child;
      child.constraints = cur.constraints;
      child.constraints.push_back(nc);
      child.paths = cur.paths;
      child.costs = cur.costs;
      auto res = low_level(scenario.map, scenario.starts[agent], scenario.goals[agent],
                           child.constraints, agent, dists[agent]);
      if (!res.found) continue;
      child.paths[agent] = std::move(res.path);
      child.cost = cur.cost - child.costs[agent] + res.cost;
      child.costs[agent] = res.cost;
      child.conflicts = scan_conflicts(child.paths).count;
      child.seq = seq++;
      open.push(std::move(child));
    }
  }
  out.status = Outcome::Status::Infeasible;
  return out;
}

OracleResult joint_oracle(const Scenario& scenario) {
  scenario.validate();
  const int n = scenario.agent_count();
  const GridMap& map = scenario.map;
  if (n > 4 || map.height * map.width > 36)
    throw std::invalid_argument("joint_oracle: guard violated (N <= 4, H*W <= 36)");

  // Searched backwards: the walk starts from the goal configuration with all
  // agents parked for free and ends at the start configuration. An agent
  // begins paying 1 per (reverse) step once it has been moved off its goal,
  // which reproduces cost-to-final-arrival accounting in forward time.
  std::vector<std::vector<int>> dist_to_start(n);
  for (int i = 0; i < n; ++i) dist_to_start[i] = bfs_distances(map, scenario.starts[i]);
  for (int i = 0; i < n; ++i)
    if (dist_to_start[i][cell_index(map, scenario.goals[i])] < 0) return {false, 0};

  auto pack_state = [&](const std::vector<Cell>& cells, unsigned moved) {
    std::uint64_t key = moved;
    for (const Cell& c : cells) key = key * 64 + cell_index(map, c);
    return key;
  };
  auto heuristic = [&](const std::vector<Cell>& cells) {
    int h = 0;
    for (int i = 0; i < n; ++i) h += dist_to_start[i][cell_index(map, cells[i])];
    return h;
  };

  struct State {
    std::vector<Cell> cells;
    unsigned moved;
  };
  struct QEntry {
    int f, g;
    long seq;
    int idx;
    bool operator>(const QEntry& o) const {
      if (f != o.f) return f > o.f;
      if (g != o.g) return g < o.g;  // deeper first among equal f
      return seq > o.seq;
    }
  };

  std::vector<State> states;
  std::unordered_map<std::uint64_t, int> best_g;
  std::priority_queue<QEntry, std::vector<QEntry>, std::greater<QEntry>> open;
  long seq = 0;

  State init{scenario.goals, 0};
  best_g[pack_state(init.cells, init.moved)] = 0;
  states.push_back(init);
  open.push({heuristic(init.cells), 0, seq++, 0});

  std::vector<std::pair<Cell, int>> options[8];  // (next cell, cost), per agent

  while (!open.empty()) {
    QEntry top = open.top();
    open.pop();
    const State cur = states[top.idx];
    const std::uint64_t cur_key = pack_state(cur.cells, cur.moved);
    auto it = best_g.find(cur_key);
    if (it == best_g.end() || it->second != top.g) continue;  // stale entry

    if (cur.cells == scenario.starts) return {true, top.g};

    for (int i = 0; i < n; ++i) {
      options[i].clear();
      const bool parked = (cur.moved & (1u << i)) == 0;
      if (parked) {
        options[i].push_back({cur.cells[i], 0});  // remain parked for free
        for (Action a : kActionOrder) {
          if (a == Action::Stay) continue;
          Cell nxt = mapf::apply(cur.cells[i], a);
          if (map.is_free(nxt)) options[i].push_back({nxt, 1});
        }
      } else {
        for (Action a : kActionOrder) {
          Cell nxt = mapf::apply(cur.cells[i], a);
          if (map.is_free(nxt)) options[i].push_back({nxt, 1});
        }
      }
    }

    std::vector<int> pick(n, 0);
    std::vector<Cell> next(n);
    while (true) {
      int step_cost = 0;
      unsigned moved = cur.moved;
      for (int i = 0; i < n; ++i) {
        const auto& [cell, cost] = options[i][pick[i]];
        next[i] = cell;
        step_cost += cost;
        if (cost == 1) moved |= (1u << i);
      }
      bool valid = true;
      for (int i = 0; i < n && valid; ++i)
        for (int j = i + 1; j < n && valid; ++j) {
          if (next[i] == next[j]) valid = false;
          else if (next[i] == cur.cells[j] && next[j] == cur.cells[i]) valid = false;
        }
      if (valid && step_cost > 0) {
        const int ng = top.g + step_cost;
        const std::uint64_t key = pack_state(next, moved);
        auto bit = best_g.find(key);
        if (bit == best_g.end() || ng < bit->second) {
          best_g[key] = ng;
          states.push_back({next, moved});
          open.push({ng + heuristic(next), ng, seq++, static_cast<int>(states.size()) - 1});
        }
      }
      int k = n - 1;
      while (k >= 0 && ++pick[k] == static_cast<int>(options[k].size())) pick[k--] = 0;
      if (k < 0) break;
    }
  }
  return {false, 0};
}

}  // namespace narpath::cbs
