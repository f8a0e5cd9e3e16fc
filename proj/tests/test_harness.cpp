#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <doctest.h>

#include "narpath/harness.hpp"

using namespace narpath;
using mapf::Cell;

namespace fs = std::filesystem;

TEST_SUITE_BEGIN("harness");

namespace {

harness::RunConfig small_config() {
  harness::RunConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.density = 0.1;
  cfg.agents = 4;
  cfg.scenario_count = 6;
  cfg.seed = 31337;
  cfg.seed_set = true;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& file = "") const { return (path / file).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen: zero density produces empty maps, same seed same bytes") {
  auto cfg = small_config();
  cfg.density = 0.0;
  auto a = harness::gen_scenarios(cfg);
  auto b = harness::gen_scenarios(cfg);
  REQUIRE(a.size() == cfg.scenario_count);
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.scenarios[i].map.obstacles().empty());
    CHECK(a.scenarios[i].render() == b.scenarios[i].render());
  }
}

TEST_CASE("gen: every emitted scenario is expert-solvable") {
  auto cfg = small_config();
  auto set = harness::gen_scenarios(cfg);
  for (const auto& s : set.scenarios) {
    CHECK(cbs::solve(s).status == cbs::Outcome::Status::Solved);
    CHECK(static_cast<int>(s.map.obstacles().size()) == static_cast<int>(0.1 * 64));
  }
}

TEST_CASE("gen: config invariants enforced") {
  auto cfg = small_config();
  cfg.density = 0.5;
  CHECK_THROWS_AS(harness::gen_scenarios(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.seed_set = false;
  CHECK_THROWS_AS(harness::gen_scenarios(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.agents = 40;
  CHECK_THROWS_AS(harness::gen_scenarios(cfg), std::invalid_argument);
}

TEST_CASE("scenario files round trip through a directory") {
  TempDir dir("narpath_scen_test");
  auto set = harness::gen_scenarios(small_config());
  harness::write_scenarios(set, dir.str());
  auto loaded = harness::load_scenarios(dir.str());
  REQUIRE(loaded.size() == set.size());
  for (int i = 0; i < set.size(); ++i) {
    CHECK(loaded.ids[i] == set.ids[i]);
    CHECK(loaded.scenarios[i].render() == set.scenarios[i].render());
  }
}

TEST_CASE("labels JSONL round trips losslessly") {
  TempDir dir("narpath_labels_test");
  auto set = harness::gen_scenarios(small_config());
  auto labels = harness::make_labels(set);
  REQUIRE(!labels.empty());
  harness::write_labels_jsonl(dir.str("labels.jsonl"), labels);
  auto loaded = harness::read_labels_jsonl(dir.str("labels.jsonl"));
  REQUIRE(loaded.size() == labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    CHECK(loaded[i].scenario_id == labels[i].scenario_id);
    CHECK(loaded[i].t == labels[i].t);
    CHECK(loaded[i].positions == labels[i].positions);
    CHECK(loaded[i].actions == labels[i].actions);
  }
  // writing the loaded records again produces identical bytes
  harness::write_labels_jsonl(dir.str("labels2.jsonl"), loaded);
  CHECK(slurp(dir.str("labels.jsonl")) == slurp(dir.str("labels2.jsonl")));
}

TEST_CASE("dataset validation: truncated line reported with its number") {
  TempDir dir("narpath_badline_test");
  auto set = harness::gen_scenarios(small_config());
  auto labels = harness::make_labels(set);
  harness::write_labels_jsonl(dir.str("labels.jsonl"), labels);
  std::string text = slurp(dir.str("labels.jsonl"));
  text = text.substr(0, text.find('\n') + 1) + "{\"kind\":\"labels\",\"schema";
  std::ofstream(dir.str("broken.jsonl")) << text;
  try {
    harness::read_labels_jsonl(dir.str("broken.jsonl"));
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("dataset validation: kind field is enforced") {
  TempDir dir("narpath_kind_test");
  std::ofstream(dir.str("mixed.jsonl"))
      << R"({"kind":"episodes","schema_version":1,"scenario_id":"x","t":0,"positions":[[0,0]],"goals":[[1,1]],"prompt":"p","raw_reply":"r","parsed":[0],"executed":[0]})"
      << "\n";
  CHECK_THROWS_AS(harness::read_labels_jsonl(dir.str("mixed.jsonl")), std::runtime_error);
}

TEST_CASE("dataset validation: schema version is enforced") {
  TempDir dir("narpath_schema_test");
  std::ofstream(dir.str("v9.jsonl"))
      << R"({"kind":"labels","schema_version":9,"scenario_id":"x","t":0,"positions":[[0,0]],"optimal_actions":[0]})"
      << "\n";
  CHECK_THROWS_AS(harness::read_labels_jsonl(dir.str("v9.jsonl")), std::runtime_error);
}

TEST_CASE("episode JSONL round trips the step records") {
  TempDir dir("narpath_episodes_test");
  auto cfg = small_config();
  auto set = harness::gen_scenarios(cfg);
  std::vector<mapf::EpisodeLog> logs;
  for (int i = 0; i < set.size(); ++i) {
    llm::StubChatClient client({mix_seed(cfg.seed, i), 0.1, 0});
    auto log = llm::run_llm_episode(set.scenarios[i], client);
    log.scenario_id = set.ids[i];
    logs.push_back(std::move(log));
  }
  harness::write_episodes_jsonl(dir.str("episodes.jsonl"), logs, set);
  auto loaded = harness::read_episodes_jsonl(dir.str("episodes.jsonl"));
  REQUIRE(loaded.size() == logs.size());
  for (size_t i = 0; i < logs.size(); ++i) {
    REQUIRE(loaded[i].steps.size() == logs[i].steps.size());
    CHECK(loaded[i].scenario_id == logs[i].scenario_id);
    CHECK(loaded[i].final_positions == logs[i].final_positions);
    for (size_t t = 0; t < logs[i].steps.size(); ++t) {
      CHECK(loaded[i].steps[t].positions == logs[i].steps[t].positions);
      CHECK(loaded[i].steps[t].prompt == logs[i].steps[t].prompt);
      CHECK(loaded[i].steps[t].raw_reply == logs[i].steps[t].raw_reply);
      CHECK(loaded[i].steps[t].parsed == logs[i].steps[t].parsed);
      CHECK(loaded[i].steps[t].executed == logs[i].steps[t].executed);
    }
  }
}

TEST_CASE("nar dataset replays positions into observations") {
  auto cfg = small_config();
  cfg.scenario_count = 2;
  auto set = harness::gen_scenarios(cfg);
  auto labels = harness::make_labels(set);
  auto dataset = harness::nar_dataset(set, labels);
  REQUIRE(dataset.size() == labels.size());
  for (const auto& rec : dataset) {
    CHECK(rec.observations.size() == 4);
    CHECK(rec.adjacency.shape == std::vector<int>{4, 4});
    CHECK(rec.labels.size() == 4);
  }
}

TEST_CASE("evaluate: cbs policy solves everything and episodes validate") {
  auto cfg = small_config();
  cfg.policy = "cbs";
  auto set = harness::gen_scenarios(cfg);
  auto result = harness::evaluate(cfg, set, {});
  CHECK(result.row.success_rate == 1.0);
  CHECK(result.row.episodes == set.size());
  CHECK(result.row.average_step > 0.0);
  CHECK(result.row.average_step < 1.0);
}

TEST_CASE("evaluate: stub policy is reproducible and CSV output is stable") {
  TempDir dir("narpath_eval_test");
  auto cfg = small_config();
  cfg.policy = "stub-llm";
  cfg.repeats = 2;
  auto set = harness::gen_scenarios(cfg);
  auto r1 = harness::evaluate(cfg, set, {});
  auto r2 = harness::evaluate(cfg, set, {});
  CHECK(r1.row.success_rate == r2.row.success_rate);
  CHECK(r1.row.average_step == r2.row.average_step);
  harness::write_results_csv(dir.str("a.csv"), {r1.row});
  harness::write_results_csv(dir.str("b.csv"), {r2.row});
  CHECK(slurp(dir.str("a.csv")) == slurp(dir.str("b.csv")));
}

TEST_CASE("evaluate: parallel workers produce the serial result") {
  auto cfg = small_config();
  cfg.policy = "stub-llm";
  cfg.repeats = 2;
  auto set = harness::gen_scenarios(cfg);
  auto serial = harness::evaluate(cfg, set, {});
  cfg.workers = 4;
  auto parallel = harness::evaluate(cfg, set, {});
  CHECK(serial.row.success_rate == parallel.row.success_rate);
  CHECK(serial.row.average_step == parallel.row.average_step);
  REQUIRE(serial.logs.size() == parallel.logs.size());
  for (size_t i = 0; i < serial.logs.size(); ++i)
    CHECK(serial.logs[i].final_positions == parallel.logs[i].final_positions);
}

TEST_CASE("evaluate: pooled metrics are recomputable from the raw logs") {
  auto cfg = small_config();
  cfg.policy = "stub-llm";
  auto set = harness::gen_scenarios(cfg);
  auto result = harness::evaluate(cfg, set, {});
  long n_success = 0, n_agents = 0;
  double steps = 0;
  std::map<std::string, const mapf::Scenario*> by_id;
  for (int i = 0; i < set.size(); ++i) by_id[set.ids[i]] = &set.scenarios[i];
  for (const auto& log : result.logs) {
    auto m = mapf::episode_metrics(log, *by_id.at(log.scenario_id));
    n_success += m.n_success;
    n_agents += m.n_agents;
    steps += m.average_step * m.n_agents * by_id.at(log.scenario_id)->map.max_steps();
  }
  CHECK(result.row.success_rate ==
        doctest::Approx(static_cast<double>(n_success) / n_agents).epsilon(1e-12));
  CHECK(result.row.average_step ==
        doctest::Approx(steps / (n_agents * 24.0)).epsilon(1e-12));
}

TEST_CASE("evaluate: missing checkpoints are a configuration error") {
  auto cfg = small_config();
  cfg.policy = "nar";
  auto set = harness::gen_scenarios(cfg);
  CHECK_THROWS_AS(harness::evaluate(cfg, set, {}), std::invalid_argument);
  cfg.policy = "llm-nar";
  auto nar_params = nar::init_params(1);
  harness::PolicyArtifacts artifacts;
  artifacts.nar_params = &nar_params;
  CHECK_THROWS_AS(harness::evaluate(cfg, set, artifacts), std::invalid_argument);
}

TEST_CASE("trajectory export: polylines stay inside the drawing") {
  auto cfg = small_config();
  cfg.scenario_count = 1;
  auto set = harness::gen_scenarios(cfg);
  llm::StubChatClient client({5, 0.1, 0});
  auto log = llm::run_llm_episode(set.scenarios[0], client);
  log.scenario_id = set.ids[0];
  const std::string svg = harness::trajectory_svg(log, set.scenarios[0]);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
  // every plotted coordinate lies inside the canvas
  const int side = 8 * 24;
  size_t pos = 0;
  while ((pos = svg.find("points=\"", pos)) != std::string::npos) {
    pos += 8;
    const size_t end = svg.find('"', pos);
    std::stringstream ss(svg.substr(pos, end - pos));
    std::string pair;
    while (ss >> pair) {
      const size_t comma = pair.find(',');
      const int x = std::stoi(pair.substr(0, comma));
      const int y = std::stoi(pair.substr(comma + 1));
      CHECK(x >= 0);
      CHECK(x <= side);
      CHECK(y >= 0);
      CHECK(y <= side);
    }
    pos = end;
  }

  const std::string json = harness::trajectory_positions_json(log, set.scenarios[0]);
  CHECK(json.find("\"positions\"") != std::string::npos);
}

TEST_CASE("trajectory export: stationary agent degenerates to a point") {
  mapf::Scenario s;
  s.map = mapf::GridMap::parse("..\n..");
  s.starts = {{0, 0}};
  s.goals = {{0, 0}};
  mapf::EpisodeLog log;
  log.scenario_id = "still";
  log.final_positions = s.starts;
  const std::string svg = harness::trajectory_svg(log, s);
  CHECK(svg.find("points=\"12,36 \"") != std::string::npos);
}

TEST_CASE("config file parsing") {
  TempDir dir("narpath_cfg_test");
  std::ofstream(dir.str("run.cfg")) << "# comment line\n"
                                    << "size = 16\n"
                                    << "density = 0.1\n"
                                    << "agents = 8\n"
                                    << "seed = 99\n"
                                    << "policy = cbs\n"
                                    << "train_steps = 1234\n";
  auto cfg = harness::load_config(dir.str("run.cfg"));
  CHECK(cfg.height == 16);
  CHECK(cfg.width == 16);
  CHECK(cfg.density == 0.1);
  CHECK(cfg.agents == 8);
  CHECK(cfg.seed == 99);
  CHECK(cfg.seed_set);
  CHECK(cfg.policy == "cbs");
  CHECK(cfg.train_steps == 1234);

  std::ofstream(dir.str("bad.cfg")) << "unknown_key = 1\n";
  CHECK_THROWS_AS(harness::load_config(dir.str("bad.cfg")), std::invalid_argument);
}

TEST_SUITE_END();
