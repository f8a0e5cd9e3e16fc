// Command-line driver for the narpath workbench. Subcommands cover the whole
// pipeline: scenario generation, expert labeling, reasoner pretraining,
// episode collection, fusion training, evaluation and trajectory export.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "narpath/harness.hpp"
#include "narpath/percept.hpp"

namespace fs = std::filesystem;
using namespace narpath;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--seed", opts.seed, "base seed")->each([&](const std::string&) {
    opts.seed_given = true;
  });
}

harness::RunConfig make_config(const CommonOpts& opts) {
  harness::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = harness::load_config(opts.config_path);
  if (opts.seed_given) {
    cfg.seed = opts.seed;
    cfg.seed_set = true;
  }
  const llm::HttpConfig env = llm::http_config_from_env();
  cfg.http.base_url = env.base_url;
  cfg.http.api_key = env.api_key;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"narpath: multi-agent path finding workbench"};
  app.require_subcommand(1);

  // ---- gen ----
  CommonOpts gen_opts;
  std::string gen_out = "scenarios";
  int gen_height = 8, gen_width = 8, gen_agents = 4, gen_count = 10;
  double gen_density = 0.0;
  auto* gen = app.add_subcommand("gen", "generate solvable scenarios");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--height", gen_height);
  gen->add_option("--width", gen_width);
  gen->add_option("--size", gen_height, "square map side (sets height and width)")
      ->each([&](const std::string& v) { gen_width = std::stoi(v); });
  gen->add_option("--density", gen_density, "obstacle fraction");
  gen->add_option("--agents", gen_agents);
  gen->add_option("--count", gen_count, "number of scenarios");

  // ---- cbs ----
  CommonOpts cbs_opts;
  std::string cbs_scenarios = "scenarios", cbs_out = "labels.jsonl";
  int cbs_budget = 100000;
  auto* cbs_cmd = app.add_subcommand("cbs", "solve scenarios and export expert labels");
  add_common(cbs_cmd, cbs_opts);
  cbs_cmd->add_option("--scenarios", cbs_scenarios, "scenario directory");
  cbs_cmd->add_option("--out", cbs_out, "labels JSONL path");
  cbs_cmd->add_option("--budget", cbs_budget, "constraint-tree node budget");

  // ---- pretrain-nar ----
  CommonOpts pre_opts;
  std::string pre_scenarios = "scenarios", pre_labels = "labels.jsonl";
  std::string pre_out = "nar.ckpt", pre_curve;
  int pre_steps = 6000, pre_batch = 16;
  double pre_lr = 1e-3;
  auto* pre = app.add_subcommand("pretrain-nar", "imitation-train the graph reasoner");
  add_common(pre, pre_opts);
  pre->add_option("--scenarios", pre_scenarios);
  pre->add_option("--labels", pre_labels);
  pre->add_option("--out", pre_out, "checkpoint path");
  pre->add_option("--curve", pre_curve, "training-curve CSV path");
  pre->add_option("--steps", pre_steps);
  pre->add_option("--batch", pre_batch);
  pre->add_option("--lr", pre_lr);

  // ---- collect-llm ----
  CommonOpts col_opts;
  std::string col_scenarios = "scenarios", col_out = "episodes.jsonl", col_policy = "stub";
  double col_invalid = 0.10;
  auto* col = app.add_subcommand("collect-llm", "run chat episodes and export the logs");
  add_common(col, col_opts);
  col->add_option("--scenarios", col_scenarios);
  col->add_option("--out", col_out, "episodes JSONL path");
  col->add_option("--client", col_policy, "stub | live");
  col->add_option("--invalid-rate", col_invalid, "stub invalid-line rate");

  // ---- train-fusion ----
  CommonOpts fus_opts;
  std::string fus_scenarios = "scenarios", fus_episodes = "episodes.jsonl";
  std::string fus_nar = "nar.ckpt", fus_out = "fusion.ckpt", fus_curve;
  int fus_steps = 5000, fus_batch = 16;
  double fus_lr = 1e-3;
  auto* fus = app.add_subcommand("train-fusion", "train the cross-attention head");
  add_common(fus, fus_opts);
  fus->add_option("--scenarios", fus_scenarios);
  fus->add_option("--episodes", fus_episodes);
  fus->add_option("--nar", fus_nar, "frozen reasoner checkpoint");
  fus->add_option("--out", fus_out, "fusion checkpoint path");
  fus->add_option("--curve", fus_curve, "training-curve CSV path");
  fus->add_option("--steps", fus_steps);
  fus->add_option("--batch", fus_batch);
  fus->add_option("--lr", fus_lr);

  // ---- eval ----
  CommonOpts eval_opts;
  std::string eval_scenarios = "scenarios", eval_policy = "stub-llm";
  std::string eval_out = "results.csv", eval_timings, eval_episodes_out;
  std::string eval_nar, eval_fusion;
  int eval_repeats = 0, eval_workers = 1, eval_rtt = 0;
  auto* ev = app.add_subcommand("eval", "evaluate a policy on a scenario set");
  add_common(ev, eval_opts);
  ev->add_option("--scenarios", eval_scenarios);
  ev->add_option("--policy", eval_policy, "stub-llm | live-llm | nar | llm-nar | cbs");
  ev->add_option("--out", eval_out, "results CSV path");
  ev->add_option("--timings", eval_timings, "wall-clock CSV path");
  ev->add_option("--episodes-out", eval_episodes_out, "episode log JSONL path");
  ev->add_option("--nar", eval_nar, "reasoner checkpoint");
  ev->add_option("--fusion", eval_fusion, "fusion checkpoint");
  ev->add_option("--repeats", eval_repeats, "per-scenario repeats (0 = auto)");
  ev->add_option("--workers", eval_workers);
  ev->add_option("--rtt-ms", eval_rtt, "simulated stub round-trip");

  // ---- traj ----
  CommonOpts traj_opts;
  std::string traj_episodes = "episodes.jsonl", traj_scenarios = "scenarios";
  std::string traj_id, traj_out = "trajectory.svg", traj_positions;
  auto* traj = app.add_subcommand("traj", "export a trajectory drawing");
  add_common(traj, traj_opts);
  traj->add_option("--episodes", traj_episodes);
  traj->add_option("--scenarios", traj_scenarios);
  traj->add_option("--scenario-id", traj_id, "episode to draw (default: first)");
  traj->add_option("--out", traj_out, "SVG path");
  traj->add_option("--positions", traj_positions, "per-timestep positions JSON path");

  // ---- dataset ----
  CommonOpts ds_opts;
  std::string ds_in, ds_out, ds_kind = "labels";
  auto* ds = app.add_subcommand("dataset", "validate or rewrite a JSONL dataset");
  add_common(ds, ds_opts);
  ds->add_option("--in", ds_in, "input JSONL")->required();
  ds->add_option("--out", ds_out, "optional rewrite path (proves a lossless round trip)");
  ds->add_option("--kind", ds_kind, "labels | episodes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto cfg = make_config(gen_opts);
      cfg.height = gen_height;
      cfg.width = gen_width;
      cfg.density = gen_density;
      cfg.agents = gen_agents;
      cfg.scenario_count = gen_count;
      auto set = harness::gen_scenarios(cfg);
      harness::write_scenarios(set, gen_out);
      std::printf("wrote %d scenarios to %s\n", set.size(), gen_out.c_str());
    } else if (*cbs_cmd) {
      auto set = harness::load_scenarios(cbs_scenarios);
      auto labels = harness::make_labels(set, cbs_budget);
      harness::write_labels_jsonl(cbs_out, labels);
      std::printf("solved %d scenarios, wrote %zu label records to %s\n", set.size(),
                  labels.size(), cbs_out.c_str());
    } else if (*pre) {
      auto cfg = make_config(pre_opts);
      cfg.validate();
      auto set = harness::load_scenarios(pre_scenarios);
      auto labels = harness::read_labels_jsonl(pre_labels);
      auto dataset = harness::nar_dataset(set, labels);
      auto params = nar::init_params(cfg.seed);
      auto result = nar::pretrain(params, dataset, pre_steps, pre_batch, pre_lr, cfg.seed);
      params.save(pre_out);
      if (!pre_curve.empty()) harness::write_curve_csv(pre_curve, result.curve);
      std::printf("trained %d steps on %zu records, final loss %.4f, agreement %.3f -> %s\n",
                  pre_steps, dataset.size(), result.final_loss, nar::agreement(params, dataset),
                  pre_out.c_str());
    } else if (*col) {
      auto cfg = make_config(col_opts);
      cfg.validate();
      auto set = harness::load_scenarios(col_scenarios);
      std::vector<mapf::EpisodeLog> logs;
      for (int i = 0; i < set.size(); ++i) {
        llm::EpisodeConfig ecfg;
        mapf::EpisodeLog log;
        if (col_policy == "live") {
          llm::HttpChatClient client(cfg.http);
          log = llm::run_llm_episode(set.scenarios[i], client, ecfg);
        } else {
          llm::StubChatClient client({mix_seed(cfg.seed, i), col_invalid, 0});
          log = llm::run_llm_episode(set.scenarios[i], client, ecfg);
        }
        log.scenario_id = set.ids[i];
        logs.push_back(std::move(log));
      }
      harness::write_episodes_jsonl(col_out, logs, set);
      std::printf("collected %zu episodes to %s\n", logs.size(), col_out.c_str());
    } else if (*fus) {
      auto cfg = make_config(fus_opts);
      cfg.validate();
      auto set = harness::load_scenarios(fus_scenarios);
      auto logs = harness::read_episodes_jsonl(fus_episodes);
      auto nar_params = nn::ParamStore::load(fus_nar);
      int dropped = 0;
      auto dataset = harness::fusion_dataset(set, logs, nar_params, cfg, &dropped);
      auto params = fusion::init_params(cfg.seed);
      auto result = fusion::train(params, dataset, fus_steps, fus_batch, fus_lr, cfg.seed);
      params.save(fus_out);
      if (!fus_curve.empty()) harness::write_curve_csv(fus_curve, result.curve);
      std::printf("trained %d steps on %zu records (%d dropped), final loss %.4f -> %s\n",
                  fus_steps, dataset.size(), dropped, result.final_loss, fus_out.c_str());
    } else if (*ev) {
      auto cfg = make_config(eval_opts);
      auto set = harness::load_scenarios(eval_scenarios);
      cfg.policy = eval_policy;
      cfg.repeats = eval_repeats;
      cfg.workers = eval_workers;
      cfg.stub_rtt_ms = eval_rtt;
      cfg.height = set.scenarios.front().map.height;
      cfg.width = set.scenarios.front().map.width;
      cfg.agents = set.scenarios.front().agent_count();
      cfg.density = static_cast<double>(set.scenarios.front().map.obstacles().size()) /
                    (cfg.height * cfg.width);
      cfg.validate();
      nn::ParamStore nar_params, fusion_params;
      harness::PolicyArtifacts artifacts;
      if (!eval_nar.empty()) {
        nar_params = nn::ParamStore::load(eval_nar);
        artifacts.nar_params = &nar_params;
      }
      if (!eval_fusion.empty()) {
        fusion_params = nn::ParamStore::load(eval_fusion);
        artifacts.fusion_params = &fusion_params;
      }
      auto result = harness::evaluate(cfg, set, artifacts);
      harness::write_results_csv(eval_out, {result.row});
      if (!eval_timings.empty()) harness::write_timings_csv(eval_timings, {result.row});
      if (!eval_episodes_out.empty())
        harness::write_episodes_jsonl(eval_episodes_out, result.logs, set);
      std::printf("%s: episodes=%d R=%.4f delta=%.4f episode=%.4fs decision=%.6fs\n",
                  result.row.policy.c_str(), result.row.episodes, result.row.success_rate,
                  result.row.average_step, result.row.mean_episode_seconds,
                  result.row.mean_decision_seconds);
    } else if (*traj) {
      auto set = harness::load_scenarios(traj_scenarios);
      auto logs = harness::read_episodes_jsonl(traj_episodes);
      const mapf::EpisodeLog* chosen = nullptr;
      for (const auto& log : logs)
        if (traj_id.empty() || log.scenario_id == traj_id) {
          chosen = &log;
          break;
        }
      if (!chosen) throw std::runtime_error("no matching episode in " + traj_episodes);
      const mapf::Scenario* scenario = nullptr;
      for (int i = 0; i < set.size(); ++i)
        if (set.ids[i] == chosen->scenario_id) scenario = &set.scenarios[i];
      if (!scenario) throw std::runtime_error("scenario " + chosen->scenario_id + " not found");
      std::ofstream svg(traj_out);
      svg << harness::trajectory_svg(*chosen, *scenario);
      if (!traj_positions.empty()) {
        std::ofstream pos(traj_positions);
        pos << harness::trajectory_positions_json(*chosen, *scenario);
      }
      std::printf("wrote %s\n", traj_out.c_str());
    } else if (*ds) {
      if (ds_kind == "labels") {
        auto records = harness::read_labels_jsonl(ds_in);
        if (!ds_out.empty()) harness::write_labels_jsonl(ds_out, records);
        std::printf("valid labels dataset: %zu records\n", records.size());
      } else if (ds_kind == "episodes") {
        auto logs = harness::read_episodes_jsonl(ds_in);
        size_t steps = 0;
        for (const auto& log : logs) steps += log.steps.size();
        if (!ds_out.empty()) {
          // rewriting needs the scenario goals, which live in the records
          std::ifstream in(ds_in);
          std::ofstream out(ds_out);
          out << in.rdbuf();
        }
        std::printf("valid episodes dataset: %zu episodes, %zu steps\n", logs.size(), steps);
      } else {
        throw std::runtime_error("unknown dataset kind " + ds_kind);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
