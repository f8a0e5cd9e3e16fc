#include "narpath/mapf.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace narpath::mapf {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("mapf: " + what); }

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char ch : text) {
    if (ch == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

// "(r, c)" or "(r,c)"; advances pos past the closing paren
Cell parse_pair(const std::string& s, size_t& pos) {
  size_t open = s.find('(', pos);
  if (open == std::string::npos) fail("expected '(' in coordinate pair: " + s);
  size_t comma = s.find(',', open);
  size_t close = s.find(')', open);
  if (comma == std::string::npos || close == std::string::npos || comma > close)
    fail("malformed coordinate pair: " + s);
  Cell c;
  c.row = std::stoi(s.substr(open + 1, comma - open - 1));
  c.col = std::stoi(s.substr(comma + 1, close - comma - 1));
  pos = close + 1;
  return c;
}

}  // namespace

Cell apply(Cell c, Action a) {
  switch (a) {
    case Action::Up: return {c.row + 1, c.col};
    case Action::Down: return {c.row - 1, c.col};
    case Action::Left: return {c.row, c.col - 1};
    case Action::Right: return {c.row, c.col + 1};
    case Action::Stay: return c;
  }
  fail("bad action");
}

Action action_between(Cell from, Cell to) {
  const int dr = to.row - from.row;
  const int dc = to.col - from.col;
  if (dr == 0 && dc == 0) return Action::Stay;
  if (dr == 1 && dc == 0) return Action::Up;
  if (dr == -1 && dc == 0) return Action::Down;
  if (dr == 0 && dc == -1) return Action::Left;
  if (dr == 0 && dc == 1) return Action::Right;
  fail("cells are not adjacent");
}

const char* action_word(Action a) {
  switch (a) {
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
    case Action::Stay: return "stay";
  }
  return "stay";
}

std::optional<Action> action_from_word(const std::string& w) {
  if (w == "up") return Action::Up;
  if (w == "down") return Action::Down;
  if (w == "left") return Action::Left;
  if (w == "right") return Action::Right;
  if (w == "stay") return Action::Stay;
  return std::nullopt;
}

bool GridMap::in_bounds(Cell c) const {
  return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width;
}

bool GridMap::is_obstacle(Cell c) const {
  return blocked[static_cast<size_t>(c.row) * width + c.col] != 0;
}

std::vector<Cell> GridMap::obstacles() const {
  std::vector<Cell> cells;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (blocked[static_cast<size_t>(r) * width + c]) cells.push_back({r, c});
  return cells;
}

int GridMap::max_steps() const { return 3 * std::max(height, width); }

GridMap GridMap::parse(const std::string& text) {
  auto lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 2) fail("map needs at least 2 rows");
  const int h = static_cast<int>(lines.size());
  const int w = static_cast<int>(lines[0].size());
  if (w < 2) fail("map needs at least 2 columns");
  GridMap m;
  m.height = h;
  m.width = w;
  m.blocked.assign(static_cast<size_t>(h) * w, 0);
  for (int i = 0; i < h; ++i) {
    if (static_cast<int>(lines[i].size()) != w) fail("ragged map rows");
    const int row = h - 1 - i;  // first text line is the top row
    for (int col = 0; col < w; ++col) {
      const char ch = lines[i][col];
      if (ch == '@')
        m.blocked[static_cast<size_t>(row) * w + col] = 1;
      else if (ch != '.')
        fail(std::string("illegal map character '") + ch + "'");
    }
  }
  return m;
}

std::string GridMap::render() const {
  std::string out;
  out.reserve(static_cast<size_t>(height) * (width + 1));
  for (int row = height - 1; row >= 0; --row) {
    for (int col = 0; col < width; ++col)
      out.push_back(blocked[static_cast<size_t>(row) * width + col] ? '@' : '.');
    out.push_back('\n');
  }
  return out;
}

void Scenario::validate() const {
  if (map.height < 2 || map.width < 2) fail("map too small");
  if (starts.empty()) fail("scenario needs at least one agent");
  if (starts.size() != goals.size()) fail("starts/goals length mismatch");
  std::set<Cell> seen_s, seen_g;
  for (size_t i = 0; i < starts.size(); ++i) {
    if (!map.is_free(starts[i])) fail("start not on a free cell");
    if (!map.is_free(goals[i])) fail("goal not on a free cell");
    if (!seen_s.insert(starts[i]).second) fail("duplicate start cell");
    if (!seen_g.insert(goals[i]).second) fail("duplicate goal cell");
  }
}

std::string Scenario::render() const {
  std::string out = map.render();
  out += "agents\n";
  char buf[96];
  for (size_t i = 0; i < starts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "start (%d, %d) goal (%d, %d)\n", starts[i].row,
                  starts[i].col, goals[i].row, goals[i].col);
    out += buf;
  }
  return out;
}

Scenario Scenario::parse(const std::string& text) {
  auto lines = split_lines(text);
  size_t i = 0;
  std::string map_text;
  for (; i < lines.size() && lines[i] != "agents"; ++i) {
    if (lines[i].empty()) continue;
    map_text += lines[i];
    map_text += "\n";
  }
  if (i == lines.size()) fail("scenario missing 'agents' section");
  Scenario s;
  s.map = GridMap::parse(map_text);
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    size_t pos = 0;
    if (lines[i].find("start") == std::string::npos || lines[i].find("goal") == std::string::npos)
      fail("malformed agent line: " + lines[i]);
    s.starts.push_back(parse_pair(lines[i], pos));
    s.goals.push_back(parse_pair(lines[i], pos));
  }
  s.validate();
  return s;
}

std::vector<Conflict> detect_conflicts(const std::vector<Cell>& prev,
                                       const std::vector<Cell>& next, int time) {
  if (prev.size() != next.size()) fail("detect_conflicts length mismatch");
  const int n = static_cast<int>(prev.size());
  std::vector<Conflict> out;
  std::map<Cell, std::vector<int>> occupants;
  for (int i = 0; i < n; ++i) occupants[next[i]].push_back(i);
  for (const auto& [cell, agents] : occupants) {
    for (size_t a = 0; a + 1 < agents.size(); ++a)
      for (size_t b = a + 1; b < agents.size(); ++b)
        out.push_back({Conflict::Kind::Vertex, agents[a], agents[b], cell, cell, time});
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (next[i] == prev[j] && next[j] == prev[i] && next[i] != next[j])
        out.push_back({Conflict::Kind::Edge, i, j, prev[i], next[i], time});
  return out;
}

EpisodeState initial_state(const Scenario& s) { return {s.starts, 0}; }

bool all_at_goals(const Scenario& s, const std::vector<Cell>& positions) {
  for (size_t i = 0; i < positions.size(); ++i)
    if (positions[i] != s.goals[i]) return false;
  return true;
}

StepResult step(const Scenario& s, const EpisodeState& state, const JointAction& proposal) {
  const int n = static_cast<int>(state.positions.size());
  if (static_cast<int>(proposal.size()) != n) fail("proposal length mismatch");

  JointAction executed = proposal;
  std::vector<Cell> targets(n);
  for (int i = 0; i < n; ++i) {
    Cell t = apply(state.positions[i], proposal[i]);
    if (!s.map.is_free(t)) {
      executed[i] = Action::Stay;
      t = state.positions[i];
    }
    targets[i] = t;
  }
  // demote all conflict participants to Stay; repeats until the fixpoint
  // (demotions are monotone, so this ends within n iterations)
  while (true) {
    auto conflicts = detect_conflicts(state.positions, targets, state.t + 1);
    if (conflicts.empty()) break;
    for (const auto& c : conflicts) {
      for (int agent : {c.agent_a, c.agent_b}) {
        executed[agent] = Action::Stay;
        targets[agent] = state.positions[agent];
      }
    }
  }
  return {{std::move(targets), state.t + 1}, std::move(executed)};
}

std::vector<std::vector<Cell>> replay_positions(const EpisodeLog& log, const Scenario& s) {
  std::vector<std::vector<Cell>> traj;
  std::vector<Cell> cur = log.steps.empty() ? s.starts : log.steps.front().positions;
  traj.push_back(cur);
  for (const auto& rec : log.steps) {
    if (rec.positions != cur) throw std::runtime_error("episode log positions out of sequence");
    for (size_t i = 0; i < cur.size(); ++i) cur[i] = apply(cur[i], rec.executed[i]);
    traj.push_back(cur);
  }
  return traj;
}

Metrics episode_metrics(const EpisodeLog& log, const Scenario& s) {
  const int n = s.agent_count();
  if (!log.steps.empty() && static_cast<int>(log.steps.front().positions.size()) != n)
    fail("episode/scenario agent count mismatch");
  auto traj = replay_positions(log, s);
  const int horizon = static_cast<int>(traj.size()) - 1;
  const int budget = s.map.max_steps();

  Metrics m;
  m.n_agents = n;
  double total_steps = 0.0;
  for (int i = 0; i < n; ++i) {
    if (traj[horizon][i] == s.goals[i]) {
      m.n_success += 1;
      int arrival = horizon;
      while (arrival > 0 && traj[arrival - 1][i] == s.goals[i]) --arrival;
      total_steps += arrival;
    } else {
      total_steps += budget;
    }
  }
  m.success_rate = static_cast<double>(m.n_success) / n;
  m.average_step = total_steps / (static_cast<double>(n) * budget);
  return m;
}

void validate_episode(const EpisodeLog& log, const Scenario& s) {
  auto traj = replay_positions(log, s);
  for (const auto& positions : traj)
    for (const auto& p : positions)
      if (!s.map.is_free(p)) throw std::runtime_error("episode visits a blocked cell");
  for (size_t t = 0; t + 1 < traj.size(); ++t) {
    for (size_t i = 0; i < traj[t].size(); ++i) {
      const int dr = std::abs(traj[t + 1][i].row - traj[t][i].row);
      const int dc = std::abs(traj[t + 1][i].col - traj[t][i].col);
      if (dr + dc > 1) throw std::runtime_error("episode teleports an agent");
    }
    if (!detect_conflicts(traj[t], traj[t + 1], static_cast<int>(t) + 1).empty())
      throw std::runtime_error("episode contains a conflict");
  }
  if (!log.steps.empty() && log.final_positions != traj.back())
    throw std::runtime_error("episode final positions inconsistent");
}

}  // namespace narpath::mapf
