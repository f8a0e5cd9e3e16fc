// Operational surface: scenario generation, expert labeling, dataset files,
// policy evaluation with success-rate/average-step tables, and trajectory
// export. Everything is seeded and reproducible.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "narpath/cbs.hpp"
#include "narpath/fusion.hpp"
#include "narpath/llm.hpp"
#include "narpath/mapf.hpp"
#include "narpath/nar.hpp"

namespace narpath::harness {

struct RunConfig {
  int height = 8;
  int width = 8;
  double density = 0.0;        // obstacle fraction, [0, 0.3]
  int agents = 4;
  int scenario_count = 10;
  std::uint64_t seed = 0;
  bool seed_set = false;       // the seed must be given explicitly
  std::string policy = "stub-llm";  // stub-llm | live-llm | nar | llm-nar | cbs

  double stub_invalid_rate = 0.10;
  int stub_rtt_ms = 0;
  int reset_rounds = 5;
  int invalid_rounds = 3;
  int r_comm = 4;
  int cbs_budget = 100000;

  int train_steps = 6000;
  int batch_size = 16;
  double lr = 1e-3;

  int repeats = 0;   // 0 = 10 for stochastic policies, 1 for deterministic
  int workers = 1;

  llm::HttpConfig http;

  void validate() const;
};

// key=value lines, '#' comments; unknown keys rejected
RunConfig load_config(const std::string& path);

struct ScenarioSet {
  std::vector<std::string> ids;
  std::vector<mapf::Scenario> scenarios;

  int size() const { return static_cast<int>(scenarios.size()); }
};

// seeded obstacles at the requested density plus distinct starts/goals;
// every emitted scenario is reachability-checked and solved by the expert
// within budget, rejected draws are resampled
ScenarioSet gen_scenarios(const RunConfig& cfg);

void write_scenarios(const ScenarioSet& set, const std::string& dir);
ScenarioSet load_scenarios(const std::string& dir);

struct LabelRecord {
  std::string scenario_id;
  int t = 0;
  std::vector<mapf::Cell> positions;
  std::vector<int> actions;
};

// expert joint-action labels for every timestep of every scenario
std::vector<LabelRecord> make_labels(const ScenarioSet& set, int budget = 100000);

void write_labels_jsonl(const std::string& path, const std::vector<LabelRecord>& records);
std::vector<LabelRecord> read_labels_jsonl(const std::string& path);

void write_episodes_jsonl(const std::string& path, const std::vector<mapf::EpisodeLog>& logs,
                          const ScenarioSet& set);
std::vector<mapf::EpisodeLog> read_episodes_jsonl(const std::string& path);

// replayable training records: observations and adjacency rebuilt from the
// logged positions
std::vector<nar::TrainRecord> nar_dataset(const ScenarioSet& set,
                                          const std::vector<LabelRecord>& records, int r_comm = 4);

// pairs each episode timestep with fresh expert labels solved from that
// timestep's positions, plus frozen graph embeddings; timesteps whose expert
// solve fails are skipped (count reported via dropped)
std::vector<fusion::TrainRecord> fusion_dataset(const ScenarioSet& set,
                                                const std::vector<mapf::EpisodeLog>& logs,
                                                const nn::ParamStore& nar_params,
                                                const RunConfig& cfg, int* dropped = nullptr);

struct EvalRow {
  std::string policy;
  int height = 0, width = 0;
  double density = 0.0;
  int agents = 0;
  int episodes = 0;
  double success_rate = 0.0;
  double average_step = 0.0;
  // wall-clock statistics, reported separately from the deterministic table
  double mean_episode_seconds = 0.0;
  double mean_decision_seconds = 0.0;
};

struct EvalResult {
  EvalRow row;
  std::vector<mapf::EpisodeLog> logs;
};

struct PolicyArtifacts {
  const nn::ParamStore* nar_params = nullptr;
  const nn::ParamStore* fusion_params = nullptr;
};

// runs every scenario (repeats per RunConfig), validates each episode for
// conflict-freedom, pools metrics
EvalResult evaluate(const RunConfig& cfg, const ScenarioSet& set, const PolicyArtifacts& artifacts);

void write_results_csv(const std::string& path, const std::vector<EvalRow>& rows);
void write_timings_csv(const std::string& path, const std::vector<EvalRow>& rows);
void write_curve_csv(const std::string& path, const std::vector<nar::CurvePoint>& curve);

std::string trajectory_svg(const mapf::EpisodeLog& log, const mapf::Scenario& scenario);
std::string trajectory_positions_json(const mapf::EpisodeLog& log, const mapf::Scenario& scenario);

}  // namespace narpath::harness
