// Deterministic grid-world MAPF environment: maps, scenarios, the five-action
// move model, vertex/edge conflict detection, the repairing step function and
// episode metrics. Coordinates are (row, col) with (0,0) at the lower-left;
// Up increments the row.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace narpath::mapf {

struct Cell {
  int row = 0;
  int col = 0;

  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

enum class Action { Up, Down, Left, Right, Stay };

inline constexpr int kActionCount = 5;

Cell apply(Cell c, Action a);
// throws std::invalid_argument unless the cells are identical or 4-adjacent
Action action_between(Cell from, Cell to);
const char* action_word(Action a);
std::optional<Action> action_from_word(const std::string& lower_word);

struct GridMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> blocked;  // row-major, [row * width + col]

  bool in_bounds(Cell c) const;
  bool is_obstacle(Cell c) const;
  bool is_free(Cell c) const { return in_bounds(c) && !is_obstacle(c); }
  std::vector<Cell> obstacles() const;  // ascending (row, col)

  // episode step budget: three times the longer map side
  int max_steps() const;

  // text form: '@' obstacle, '.' free; first text line is row height-1
  static GridMap parse(const std::string& text);
  std::string render() const;
};

struct Scenario {
  GridMap map;
  std::vector<Cell> starts;
  std::vector<Cell> goals;

  int agent_count() const { return static_cast<int>(starts.size()); }
  void validate() const;  // throws std::invalid_argument on broken invariants

  std::string render() const;
  static Scenario parse(const std::string& text);
};

struct Conflict {
  enum class Kind { Vertex, Edge };
  Kind kind;
  int agent_a = 0;  // agent_a < agent_b
  int agent_b = 0;
  Cell cell_a;  // Vertex: the shared cell; Edge: agent_a's source cell
  Cell cell_b;  // Edge: agent_a's target cell (= agent_b's source)
  int time = 0;
};

// every vertex conflict in `next` plus every swap between `prev` and `next`
std::vector<Conflict> detect_conflicts(const std::vector<Cell>& prev,
                                       const std::vector<Cell>& next, int time = 0);

using JointAction = std::vector<Action>;

struct EpisodeState {
  std::vector<Cell> positions;
  int t = 0;
};

EpisodeState initial_state(const Scenario& s);
bool all_at_goals(const Scenario& s, const std::vector<Cell>& positions);

struct StepResult {
  EpisodeState state;
  JointAction executed;
};

// applies a joint proposal with repair: out-of-bounds/obstacle moves become
// Stay, then all conflict participants are demoted to Stay until the
// transition is conflict-free
StepResult step(const Scenario& s, const EpisodeState& state, const JointAction& proposal);

// symbol indices 0..4 are actions, 5 marks an unparseable proposal
inline constexpr int kInvalidSymbol = 5;

struct StepRecord {
  int t = 0;
  std::vector<Cell> positions;  // before executing this step
  std::string prompt;
  std::string raw_reply;
  std::vector<int> parsed;  // 0..5 per agent
  JointAction fused;        // empty unless a fusion policy decided
  JointAction executed;
};

struct EpisodeLog {
  std::string scenario_id;
  std::vector<Cell> final_positions;
  std::vector<StepRecord> steps;
  bool aborted = false;

  // run statistics, never serialized
  double decision_seconds = 0.0;
  int decisions = 0;
};

struct Metrics {
  double success_rate = 0.0;
  double average_step = 0.0;
  int n_success = 0;
  int n_agents = 0;
};

// R = n_success / n; per-agent steps = final-arrival time for successes and
// the full step budget for failures; delta = total steps / (n * budget)
Metrics episode_metrics(const EpisodeLog& log, const Scenario& s);

// recomputes the position trajectory of a log
std::vector<std::vector<Cell>> replay_positions(const EpisodeLog& log, const Scenario& s);

// throws std::runtime_error if the log teleports, visits blocked cells or
// contains a vertex/edge conflict
void validate_episode(const EpisodeLog& log, const Scenario& s);

}  // namespace narpath::mapf
