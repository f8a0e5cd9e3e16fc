#include "narpath/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "narpath/percept.hpp"

namespace narpath::harness {

namespace fs = std::filesystem;
using mapf::Cell;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("harness: " + what); }

bool policy_is_stochastic(const std::string& policy) {
  return policy == "stub-llm" || policy == "live-llm" || policy == "llm-nar";
}

std::string format_double(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

json cells_to_json(const std::vector<Cell>& cells) {
  json arr = json::array();
  for (const Cell& c : cells) arr.push_back({c.row, c.col});
  return arr;
}

std::vector<Cell> cells_from_json(const json& arr) {
  std::vector<Cell> cells;
  for (const auto& e : arr) cells.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  return cells;
}

}  // namespace

void RunConfig::validate() const {
  if (!seed_set) fail("seed is mandatory");
  if (height < 2 || width < 2) fail("map must be at least 2x2");
  if (density < 0.0 || density > 0.3) fail("density must be in [0, 0.3]");
  if (agents < 1 || agents > fusion::kMaxAgents) fail("agent count must be in [1, 32]");
  if (scenario_count < 1) fail("scenario count must be positive");
  if (workers < 1) fail("workers must be positive");
  static const std::set<std::string> known = {"stub-llm", "live-llm", "nar", "llm-nar", "cbs"};
  if (!known.count(policy)) fail("unknown policy " + policy);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    const size_t vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);

    if (key == "height") cfg.height = std::stoi(value);
    else if (key == "width") cfg.width = std::stoi(value);
    else if (key == "size") cfg.height = cfg.width = std::stoi(value);
    else if (key == "density") cfg.density = std::stod(value);
    else if (key == "agents") cfg.agents = std::stoi(value);
    else if (key == "scenarios") cfg.scenario_count = std::stoi(value);
    else if (key == "seed") { cfg.seed = std::stoull(value); cfg.seed_set = true; }
    else if (key == "policy") cfg.policy = value;
    else if (key == "stub_invalid_rate") cfg.stub_invalid_rate = std::stod(value);
    else if (key == "stub_rtt_ms") cfg.stub_rtt_ms = std::stoi(value);
    else if (key == "reset_rounds") cfg.reset_rounds = std::stoi(value);
    else if (key == "invalid_rounds") cfg.invalid_rounds = std::stoi(value);
    else if (key == "r_comm") cfg.r_comm = std::stoi(value);
    else if (key == "cbs_budget") cfg.cbs_budget = std::stoi(value);
    else if (key == "train_steps") cfg.train_steps = std::stoi(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "repeats") cfg.repeats = std::stoi(value);
    else if (key == "workers") cfg.workers = std::stoi(value);
    else if (key == "model") cfg.http.model = value;
    else if (key == "temperature") cfg.http.temperature = std::stod(value);
    else if (key == "requests_per_minute") cfg.http.requests_per_minute = std::stoi(value);
    else fail("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

ScenarioSet gen_scenarios(const RunConfig& cfg) {
  cfg.validate();
  const int cells = cfg.height * cfg.width;
  const int n_obstacles = static_cast<int>(cfg.density * cells);
  if (cells - n_obstacles < 2 * cfg.agents) fail("map too dense for the agent count");

  ScenarioSet set;
  Rng rng(mix_seed(cfg.seed, 0x67656eULL));
  int rejections = 0;
  while (set.size() < cfg.scenario_count) {
    mapf::Scenario s;
    s.map.height = cfg.height;
    s.map.width = cfg.width;
    s.map.blocked.assign(static_cast<size_t>(cells), 0);
    std::set<int> obstacle_cells;
    while (static_cast<int>(obstacle_cells.size()) < n_obstacles)
      obstacle_cells.insert(rng.index(cells));
    for (int c : obstacle_cells) s.map.blocked[c] = 1;

    std::vector<int> free_cells;
    for (int c = 0; c < cells; ++c)
      if (!s.map.blocked[c]) free_cells.push_back(c);

    auto sample_distinct = [&](int count) {
      std::vector<Cell> out;
      std::set<int> seen;
      while (static_cast<int>(out.size()) < count) {
        const int c = free_cells[rng.index(static_cast<int>(free_cells.size()))];
        if (seen.insert(c).second) out.push_back({c / cfg.width, c % cfg.width});
      }
      return out;
    };
    s.starts = sample_distinct(cfg.agents);
    s.goals = sample_distinct(cfg.agents);

    bool ok = true;
    try {
      s.validate();
    } catch (const std::invalid_argument&) {
      ok = false;
    }
    // single-agent reachability first, then a full expert solve within budget
    for (int a = 0; ok && a < cfg.agents; ++a) {
      mapf::Scenario single;
      single.map = s.map;
      single.starts = {s.starts[a]};
      single.goals = {s.goals[a]};
      ok = cbs::solve(single, cfg.cbs_budget).status == cbs::Outcome::Status::Solved;
    }
    if (ok) {
      auto outcome = cbs::solve(s, cfg.cbs_budget);
      ok = outcome.status == cbs::Outcome::Status::Solved;
    }
    if (!ok) {
      if (++rejections >= 1000) fail("scenario generation stuck: density too high");
      continue;
    }
    rejections = 0;
    char id[32];
    std::snprintf(id, sizeof id, "scn_%04d", set.size());
    set.ids.push_back(id);
    set.scenarios.push_back(std::move(s));
  }
  return set;
}

void write_scenarios(const ScenarioSet& set, const std::string& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < set.size(); ++i) {
    std::ofstream out(fs::path(dir) / (set.ids[i] + ".scen"));
    if (!out) fail("cannot write scenario file in " + dir);
    out << set.scenarios[i].render();
  }
}

ScenarioSet load_scenarios(const std::string& dir) {
  ScenarioSet set;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".scen") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file);
    std::stringstream ss;
    ss << in.rdbuf();
    set.ids.push_back(file.stem().string());
    set.scenarios.push_back(mapf::Scenario::parse(ss.str()));
  }
  if (set.scenarios.empty()) fail("no .scen files in " + dir);
  return set;
}

std::vector<LabelRecord> make_labels(const ScenarioSet& set, int budget) {
  std::vector<LabelRecord> records;
  for (int i = 0; i < set.size(); ++i) {
    auto outcome = cbs::solve(set.scenarios[i], budget);
    if (outcome.status != cbs::Outcome::Status::Solved)
      throw std::runtime_error("harness: expert failed on " + set.ids[i]);
    const auto& sol = *outcome.solution;
    const int horizon = static_cast<int>(sol.joint_actions.size());
    for (int t = 0; t < horizon; ++t) {
      LabelRecord rec;
      rec.scenario_id = set.ids[i];
      rec.t = t;
      rec.positions.reserve(sol.paths.size());
      for (const auto& path : sol.paths) rec.positions.push_back(path[t]);
      for (mapf::Action a : sol.joint_actions[t]) rec.actions.push_back(static_cast<int>(a));
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_labels_jsonl(const std::string& path, const std::vector<LabelRecord>& records) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (const auto& rec : records) {
    json j = {{"kind", "labels"},
              {"schema_version", 1},
              {"scenario_id", rec.scenario_id},
              {"t", rec.t},
              {"positions", cells_to_json(rec.positions)},
              {"optimal_actions", rec.actions}};
    out << j.dump() << "\n";
  }
}

namespace {

json parse_record_line(const std::string& line, int lineno, const char* expected_kind) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!j.contains("kind") || j["kind"] != expected_kind)
    throw std::runtime_error("dataset line " + std::to_string(lineno) + ": expected kind '" +
                             expected_kind + "'");
  if (!j.contains("schema_version") || j["schema_version"] != 1)
    throw std::runtime_error("dataset line " + std::to_string(lineno) +
                             ": unsupported schema_version");
  return j;
}

}  // namespace

std::vector<LabelRecord> read_labels_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  std::vector<LabelRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_record_line(line, lineno, "labels");
    try {
      LabelRecord rec;
      rec.scenario_id = j.at("scenario_id").get<std::string>();
      rec.t = j.at("t").get<int>();
      rec.positions = cells_from_json(j.at("positions"));
      rec.actions = j.at("optimal_actions").get<std::vector<int>>();
      for (int a : rec.actions)
        if (a < 0 || a >= mapf::kActionCount) throw std::runtime_error("action out of range");
      if (rec.actions.size() != rec.positions.size())
        throw std::runtime_error("positions/actions length mismatch");
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_episodes_jsonl(const std::string& path, const std::vector<mapf::EpisodeLog>& logs,
                          const ScenarioSet& set) {
  std::map<std::string, const mapf::Scenario*> by_id;
  for (int i = 0; i < set.size(); ++i) by_id[set.ids[i]] = &set.scenarios[i];
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  for (const auto& log : logs) {
    auto it = by_id.find(log.scenario_id);
    if (it == by_id.end()) fail("episode references unknown scenario " + log.scenario_id);
    for (const auto& rec : log.steps) {
      json j = {{"kind", "episodes"},
                {"schema_version", 1},
                {"scenario_id", log.scenario_id},
                {"t", rec.t},
                {"positions", cells_to_json(rec.positions)},
                {"goals", cells_to_json(it->second->goals)},
                {"prompt", rec.prompt},
                {"raw_reply", rec.raw_reply},
                {"parsed", rec.parsed}};
      std::vector<int> executed;
      for (mapf::Action a : rec.executed) executed.push_back(static_cast<int>(a));
      j["executed"] = executed;
      if (!rec.fused.empty()) {
        std::vector<int> fused;
        for (mapf::Action a : rec.fused) fused.push_back(static_cast<int>(a));
        j["fused"] = fused;
      }
      out << j.dump() << "\n";
    }
  }
}

std::vector<mapf::EpisodeLog> read_episodes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  std::vector<mapf::EpisodeLog> logs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_record_line(line, lineno, "episodes");
    try {
      mapf::StepRecord rec;
      const std::string scenario_id = j.at("scenario_id").get<std::string>();
      rec.t = j.at("t").get<int>();
      rec.positions = cells_from_json(j.at("positions"));
      rec.prompt = j.at("prompt").get<std::string>();
      rec.raw_reply = j.at("raw_reply").get<std::string>();
      rec.parsed = j.at("parsed").get<std::vector<int>>();
      for (int p : rec.parsed)
        if (p < 0 || p > mapf::kInvalidSymbol) throw std::runtime_error("parsed symbol out of range");
      for (int a : j.at("executed").get<std::vector<int>>()) {
        if (a < 0 || a >= mapf::kActionCount) throw std::runtime_error("action out of range");
        rec.executed.push_back(static_cast<mapf::Action>(a));
      }
      if (j.contains("fused")) {
        for (int a : j.at("fused").get<std::vector<int>>()) {
          if (a < 0 || a >= mapf::kActionCount) throw std::runtime_error("action out of range");
          rec.fused.push_back(static_cast<mapf::Action>(a));
        }
      }

      if (logs.empty() || logs.back().scenario_id != scenario_id || rec.t == 0) {
        logs.emplace_back();
        logs.back().scenario_id = scenario_id;
      }
      logs.back().steps.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (auto& log : logs) {
    if (log.steps.empty()) continue;
    std::vector<Cell> cur = log.steps.back().positions;
    for (size_t i = 0; i < cur.size(); ++i) cur[i] = mapf::apply(cur[i], log.steps.back().executed[i]);
    log.final_positions = cur;
  }
  return logs;
}

std::vector<nar::TrainRecord> nar_dataset(const ScenarioSet& set,
                                          const std::vector<LabelRecord>& records, int r_comm) {
  std::map<std::string, const mapf::Scenario*> by_id;
  for (int i = 0; i < set.size(); ++i) by_id[set.ids[i]] = &set.scenarios[i];
  std::vector<nar::TrainRecord> dataset;
  dataset.reserve(records.size());
  for (const auto& rec : records) {
    auto it = by_id.find(rec.scenario_id);
    if (it == by_id.end()) fail("label references unknown scenario " + rec.scenario_id);
    nar::TrainRecord tr;
    tr.observations = percept::observe_all(*it->second, rec.positions);
    tr.adjacency = percept::build_adjacency(rec.positions, r_comm);
    tr.labels = rec.actions;
    dataset.push_back(std::move(tr));
  }
  return dataset;
}

std::vector<fusion::TrainRecord> fusion_dataset(const ScenarioSet& set,
                                                const std::vector<mapf::EpisodeLog>& logs,
                                                const nn::ParamStore& nar_params,
                                                const RunConfig& cfg, int* dropped) {
  std::map<std::string, const mapf::Scenario*> by_id;
  for (int i = 0; i < set.size(); ++i) by_id[set.ids[i]] = &set.scenarios[i];
  std::vector<fusion::TrainRecord> dataset;
  int skipped = 0;
  for (const auto& log : logs) {
    auto it = by_id.find(log.scenario_id);
    if (it == by_id.end()) fail("episode references unknown scenario " + log.scenario_id);
    const mapf::Scenario& scenario = *it->second;
    for (const auto& step : log.steps) {
      // fresh expert labels from this timestep's positions
      mapf::Scenario from_here = scenario;
      from_here.starts = step.positions;
      auto outcome = cbs::solve(from_here, cfg.cbs_budget);
      if (outcome.status != cbs::Outcome::Status::Solved) {
        skipped += 1;
        continue;
      }
      std::vector<int> labels;
      if (outcome.solution->joint_actions.empty()) {
        labels.assign(step.positions.size(), static_cast<int>(mapf::Action::Stay));
      } else {
        for (mapf::Action a : outcome.solution->joint_actions.front())
          labels.push_back(static_cast<int>(a));
      }
      fusion::TrainRecord tr;
      llm::ParsedReply parsed;
      parsed.proposals = step.parsed;
      tr.tokens = fusion::token_inputs(parsed, scenario, step.positions);
      tr.xl = nar::embed(nar_params, percept::observe_all(scenario, step.positions),
                         percept::build_adjacency(step.positions, cfg.r_comm));
      tr.labels = std::move(labels);
      dataset.push_back(std::move(tr));
    }
  }
  if (dropped) *dropped = skipped;
  return dataset;
}

namespace {

mapf::EpisodeLog run_cbs_episode(const mapf::Scenario& scenario, const std::string& id,
                                 int budget) {
  mapf::EpisodeLog log;
  log.scenario_id = id;
  const auto begin = std::chrono::steady_clock::now();
  auto outcome = cbs::solve(scenario, budget);
  log.decision_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  log.decisions = 1;
  if (outcome.status != cbs::Outcome::Status::Solved) {
    log.aborted = true;
    log.final_positions = scenario.starts;
    return log;
  }
  mapf::EpisodeState state = mapf::initial_state(scenario);
  for (const auto& joint : outcome.solution->joint_actions) {
    mapf::StepRecord rec;
    rec.t = state.t;
    rec.positions = state.positions;
    for (mapf::Action a : joint) rec.parsed.push_back(static_cast<int>(a));
    auto [next, executed] = mapf::step(scenario, state, joint);
    rec.executed = executed;
    log.steps.push_back(std::move(rec));
    state = std::move(next);
  }
  log.final_positions = state.positions;
  return log;
}

mapf::EpisodeLog run_nar_episode(const mapf::Scenario& scenario, const std::string& id,
                                 const nn::ParamStore& nar_params, const RunConfig& cfg) {
  mapf::EpisodeLog log;
  log.scenario_id = id;
  mapf::EpisodeState state = mapf::initial_state(scenario);
  const int budget = scenario.map.max_steps();
  while (state.t < budget && !mapf::all_at_goals(scenario, state.positions)) {
    const auto begin = std::chrono::steady_clock::now();
    auto output = nar::forward_eval(nar_params, percept::observe_all(scenario, state.positions),
                                    percept::build_adjacency(state.positions, cfg.r_comm));
    auto actions = nar::argmax_actions(output.logits);
    log.decision_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
    log.decisions += 1;
    mapf::JointAction joint;
    for (int a : actions) joint.push_back(static_cast<mapf::Action>(a));
    mapf::StepRecord rec;
    rec.t = state.t;
    rec.positions = state.positions;
    rec.parsed = actions;
    auto [next, executed] = mapf::step(scenario, state, joint);
    rec.executed = executed;
    log.steps.push_back(std::move(rec));
    state = std::move(next);
  }
  log.final_positions = state.positions;
  return log;
}

}  // namespace

EvalResult evaluate(const RunConfig& cfg, const ScenarioSet& set, const PolicyArtifacts& artifacts) {
  cfg.validate();
  if (set.size() == 0) fail("evaluate needs at least one scenario");
  for (const auto& s : set.scenarios)
    if (s.map.max_steps() != set.scenarios.front().map.max_steps())
      fail("evaluate expects a homogeneous scenario set (one step budget)");
  if ((cfg.policy == "nar" || cfg.policy == "llm-nar") && !artifacts.nar_params)
    fail("policy " + cfg.policy + " needs a reasoner checkpoint");
  if (cfg.policy == "llm-nar" && !artifacts.fusion_params)
    fail("policy llm-nar needs a fusion checkpoint");
  if (cfg.policy == "live-llm" && cfg.http.base_url.empty())
    fail("policy live-llm needs NARPATH_API_BASE");

  const int repeats = cfg.repeats > 0 ? cfg.repeats : (policy_is_stochastic(cfg.policy) ? 10 : 1);

  struct Slot {
    mapf::EpisodeLog log;
    double episode_seconds = 0.0;
  };
  std::vector<Slot> slots(static_cast<size_t>(set.size()) * repeats);

  auto run_one = [&](int scenario_idx, int repeat) {
    const mapf::Scenario& scenario = set.scenarios[scenario_idx];
    const std::string& id = set.ids[scenario_idx];
    const std::uint64_t ep_seed = mix_seed(cfg.seed, scenario_idx, repeat);
    llm::EpisodeConfig ecfg;
    ecfg.reset_rounds = cfg.reset_rounds;
    ecfg.invalid_rounds = cfg.invalid_rounds;

    const auto begin = std::chrono::steady_clock::now();
    mapf::EpisodeLog log;
    if (cfg.policy == "cbs") {
      log = run_cbs_episode(scenario, id, cfg.cbs_budget);
    } else if (cfg.policy == "nar") {
      log = run_nar_episode(scenario, id, *artifacts.nar_params, cfg);
    } else if (cfg.policy == "stub-llm") {
      llm::StubChatClient client({ep_seed, cfg.stub_invalid_rate, cfg.stub_rtt_ms});
      log = llm::run_llm_episode(scenario, client, ecfg);
      log.scenario_id = id;
    } else if (cfg.policy == "live-llm") {
      llm::HttpChatClient client(cfg.http);
      log = llm::run_llm_episode(scenario, client, ecfg);
      log.scenario_id = id;
    } else {  // llm-nar
      llm::StubChatClient stub({ep_seed, cfg.stub_invalid_rate, cfg.stub_rtt_ms});
      llm::HttpChatClient* live = nullptr;
      std::unique_ptr<llm::HttpChatClient> live_holder;
      if (!cfg.http.base_url.empty()) {
        live_holder = std::make_unique<llm::HttpChatClient>(cfg.http);
        live = live_holder.get();
      }
      llm::ChatClient& client = live ? static_cast<llm::ChatClient&>(*live)
                                     : static_cast<llm::ChatClient&>(stub);
      log = fusion::run_llm_nar_episode(scenario, client, *artifacts.nar_params,
                                        *artifacts.fusion_params, ecfg, cfg.r_comm);
      log.scenario_id = id;
    }
    Slot& slot = slots[static_cast<size_t>(scenario_idx) * repeats + repeat];
    slot.episode_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
    slot.log = std::move(log);
  };

  if (cfg.workers <= 1) {
    for (int i = 0; i < set.size(); ++i)
      for (int r = 0; r < repeats; ++r) run_one(i, r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> cursor{0};
    const int total = set.size() * repeats;
    for (int w = 0; w < cfg.workers; ++w)
      pool.emplace_back([&] {
        for (int k = cursor.fetch_add(1); k < total; k = cursor.fetch_add(1))
          run_one(k / repeats, k % repeats);
      });
    for (auto& t : pool) t.join();
  }

  EvalResult result;
  result.row.policy = cfg.policy;
  result.row.height = cfg.height;
  result.row.width = cfg.width;
  result.row.density = cfg.density;
  result.row.agents = cfg.agents;

  double total_steps = 0.0, total_episode_s = 0.0, total_decision_s = 0.0;
  long n_success = 0, n_agents = 0, decisions = 0;
  for (int i = 0; i < set.size(); ++i) {
    const mapf::Scenario& scenario = set.scenarios[i];
    const int budget = scenario.map.max_steps();
    for (int r = 0; r < repeats; ++r) {
      Slot& slot = slots[static_cast<size_t>(i) * repeats + r];
      mapf::validate_episode(slot.log, scenario);
      mapf::Metrics m = mapf::episode_metrics(slot.log, scenario);
      n_success += m.n_success;
      n_agents += m.n_agents;
      total_steps += m.average_step * m.n_agents * budget;
      total_episode_s += slot.episode_seconds;
      total_decision_s += slot.log.decision_seconds;
      decisions += slot.log.decisions;
      result.logs.push_back(std::move(slot.log));
    }
  }
  const long episodes = static_cast<long>(set.size()) * repeats;
  result.row.episodes = static_cast<int>(episodes);
  result.row.success_rate = static_cast<double>(n_success) / static_cast<double>(n_agents);
  // pool over agents and episodes; budget is constant across the set
  result.row.average_step =
      total_steps / (static_cast<double>(n_agents) * set.scenarios.front().map.max_steps());
  result.row.mean_episode_seconds = total_episode_s / static_cast<double>(episodes);
  result.row.mean_decision_seconds =
      decisions > 0 ? total_decision_s / static_cast<double>(decisions) : 0.0;
  return result;
}

void write_results_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "policy,height,width,density,agents,episodes,success_rate,average_step\n";
  for (const auto& r : rows)
    out << r.policy << "," << r.height << "," << r.width << "," << format_double(r.density) << ","
        << r.agents << "," << r.episodes << "," << format_double(r.success_rate) << ","
        << format_double(r.average_step) << "\n";
}

void write_timings_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "policy,agents,episodes,mean_episode_seconds,mean_decision_seconds\n";
  for (const auto& r : rows)
    out << r.policy << "," << r.agents << "," << r.episodes << ","
        << format_double(r.mean_episode_seconds) << "," << format_double(r.mean_decision_seconds)
        << "\n";
}

void write_curve_csv(const std::string& path, const std::vector<nar::CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "step,loss,agreement\n";
  for (const auto& p : curve)
    out << p.step << "," << format_double(p.loss) << "," << format_double(p.agreement) << "\n";
}

std::string trajectory_svg(const mapf::EpisodeLog& log, const mapf::Scenario& scenario) {
  static const char* kPalette[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
                                   "#46f0f0", "#f032e6", "#bcf60c", "#008080", "#9a6324"};
  const int cell = 24;
  const int w = scenario.map.width * cell;
  const int h = scenario.map.height * cell;
  auto cx = [&](const Cell& c) { return c.col * cell + cell / 2; };
  auto cy = [&](const Cell& c) { return (scenario.map.height - 1 - c.row) * cell + cell / 2; };

  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                w, h, w, h);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const Cell& c : scenario.map.obstacles()) {
    std::snprintf(buf, sizeof buf, "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#444\"/>\n",
                  c.col * cell, (scenario.map.height - 1 - c.row) * cell, cell, cell);
    out += buf;
  }
  for (int i = 0; i <= scenario.map.width; ++i) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%d\" y1=\"0\" x2=\"%d\" y2=\"%d\" stroke=\"#ddd\" stroke-width=\"1\"/>\n",
                  i * cell, i * cell, h);
    out += buf;
  }
  for (int i = 0; i <= scenario.map.height; ++i) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"0\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#ddd\" stroke-width=\"1\"/>\n",
                  i * cell, w, i * cell);
    out += buf;
  }

  auto traj = mapf::replay_positions(log, scenario);
  const int n = scenario.agent_count();
  for (int i = 0; i < n; ++i) {
    const char* color = kPalette[i % 10];
    std::string points;
    for (const auto& positions : traj) {
      std::snprintf(buf, sizeof buf, "%d,%d ", cx(positions[i]), cy(positions[i]));
      points += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                  points.c_str(), color);
    out += buf;
    std::snprintf(buf, sizeof buf, "<circle cx=\"%d\" cy=\"%d\" r=\"5\" fill=\"%s\"/>\n",
                  cx(traj.front()[i]), cy(traj.front()[i]), color);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%d\" width=\"10\" height=\"10\" fill=\"none\" stroke=\"%s\" "
                  "stroke-width=\"2\"/>\n",
                  cx(scenario.goals[i]) - 5, cy(scenario.goals[i]) - 5, color);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

std::string trajectory_positions_json(const mapf::EpisodeLog& log, const mapf::Scenario& scenario) {
  auto traj = mapf::replay_positions(log, scenario);
  json j;
  j["scenario_id"] = log.scenario_id;
  j["goals"] = cells_to_json(scenario.goals);
  json steps = json::array();
  for (const auto& positions : traj) steps.push_back(cells_to_json(positions));
  j["positions"] = steps;
  return j.dump(2) + "\n";
}

}  // namespace narpath::harness
