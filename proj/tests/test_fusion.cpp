#include <cmath>
#include <stdexcept>

#include <doctest.h>

#include "narpath/fusion.hpp"
#include "narpath/percept.hpp"
#include "narpath/rng.hpp"

using namespace narpath;
using mapf::Action;
using mapf::Cell;
using nn::Tensor;

TEST_SUITE_BEGIN("fusion");

namespace {

mapf::Scenario empty_scenario(int h, int w, std::vector<Cell> starts, std::vector<Cell> goals) {
  mapf::Scenario s;
  s.map.height = h;
  s.map.width = w;
  s.map.blocked.assign(static_cast<size_t>(h) * w, 0);
  s.starts = std::move(starts);
  s.goals = std::move(goals);
  return s;
}

llm::ParsedReply reply_of(std::vector<int> proposals) {
  llm::ParsedReply r;
  r.proposals = std::move(proposals);
  return r;
}

Tensor random_xl(int n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor xl({n, fusion::kDim});
  for (double& v : xl.v) v = rng.range(-1, 1);
  return xl;
}

// raw-loop recomputation of one gated cross-attention layer
Tensor dense_gated_layer(const nn::ParamStore& p, int layer, const Tensor& theta,
                         const Tensor& xl) {
  const int n = theta.rows(), d = fusion::kDim;
  auto name = [layer](const char* s) { return "fuse.x" + std::to_string(layer) + "." + s; };
  auto mm = [](const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
      for (int k = 0; k < a.cols(); ++k)
        for (int j = 0; j < b.cols(); ++j) out.at(i, j) += a.at(i, k) * b.at(k, j);
    return out;
  };
  Tensor q = mm(theta, p.value(name("q")));
  Tensor k = mm(xl, p.value(name("k")));
  Tensor v = mm(xl, p.value(name("v")));
  Tensor scores({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
      scores.at(i, j) = dot / std::sqrt(static_cast<double>(d));
    }
  for (int i = 0; i < n; ++i) {
    double mx = scores.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, scores.at(i, j));
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      scores.at(i, j) = std::exp(scores.at(i, j) - mx);
      sum += scores.at(i, j);
    }
    for (int j = 0; j < n; ++j) scores.at(i, j) /= sum;
  }
  Tensor mixed = mm(scores, v);
  const double alpha = std::tanh(p.value(name("alpha")).v[0]);
  Tensor y = theta;
  for (int i = 0; i < y.size(); ++i) y.v[i] += alpha * mixed.v[i];

  Tensor h = mm(y, p.value(name("ffn1.w")));
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j) {
      h.at(i, j) += p.value(name("ffn1.b")).v[j];
      h.at(i, j) = h.at(i, j) > 0 ? h.at(i, j) : 0;
    }
  Tensor f = mm(h, p.value(name("ffn2.w")));
  for (int i = 0; i < f.rows(); ++i)
    for (int j = 0; j < f.cols(); ++j) f.at(i, j) += p.value(name("ffn2.b")).v[j];
  const double beta = std::tanh(p.value(name("beta")).v[0]);
  Tensor out = y;
  for (int i = 0; i < out.size(); ++i) out.v[i] += beta * f.v[i];
  return out;
}

}  // namespace

TEST_CASE("token rows are the sum of action, position and slot terms") {
  auto s = empty_scenario(8, 8, {{1, 2}, {6, 4}}, {{5, 2}, {0, 0}});
  auto params = fusion::init_params(3);
  auto inputs = fusion::token_inputs(reply_of({2, mapf::kInvalidSymbol}), s, s.starts);

  CHECK(inputs.features.at(0, 0) == doctest::Approx(1.0 / 8).epsilon(1e-12));
  CHECK(inputs.features.at(0, 2) == doctest::Approx(4.0 / 8).epsilon(1e-12));
  CHECK(inputs.features.at(1, 3) == doctest::Approx(-4.0 / 8).epsilon(1e-12));

  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  const Tensor theta = tape.value(fusion::embed_tokens(tape, ids, inputs));

  const Tensor& act = params.value("fuse.act_embed");
  const Tensor& slot = params.value("fuse.slot_embed");
  const Tensor& wpos = params.value("fuse.pos.w");
  for (int i = 0; i < 2; ++i) {
    const int symbol = inputs.symbols[i];
    for (int j = 0; j < fusion::kDim; ++j) {
      double expected = act.at(symbol, j) + slot.at(i, j);
      for (int f = 0; f < fusion::kFeatureDim; ++f)
        expected += inputs.features.at(i, f) * wpos.at(f, j);
      CHECK(theta.at(i, j) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("zeroed embedding tables give a zero token matrix") {
  auto s = empty_scenario(4, 4, {{0, 0}, {3, 3}}, {{3, 0}, {0, 3}});
  auto params = fusion::init_params(4);
  for (const char* n : {"fuse.act_embed", "fuse.slot_embed", "fuse.pos.w"})
    for (double& v : params.value(n).v) v = 0.0;
  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  auto inputs = fusion::token_inputs(reply_of({0, 1}), s, s.starts);
  const Tensor theta = tape.value(fusion::embed_tokens(tape, ids, inputs));
  for (double v : theta.v) CHECK(v == 0.0);
}

TEST_CASE("token capacity is limited to 32 slots") {
  std::vector<Cell> starts, goals;
  for (int i = 0; i < 33; ++i) {
    starts.push_back({i / 6, i % 6});
    goals.push_back({5 - i / 6, i % 6});
  }
  auto s = empty_scenario(6, 6, {{0, 0}}, {{5, 5}});
  s.starts = starts;
  s.goals = goals;
  CHECK_THROWS_AS(fusion::token_inputs(reply_of(std::vector<int>(33, 0)), s, starts),
                  std::invalid_argument);
}

TEST_CASE("closed gates make the layer the identity, bitwise") {
  auto params = fusion::init_params(5);  // gates are zero at init
  Rng rng(8);
  Tensor theta({3, fusion::kDim});
  for (double& v : theta.v) v = rng.range(-2, 2);
  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  auto out = fusion::gated_xattn_layer(tape, ids, 1, tape.leaf(theta), tape.leaf(random_xl(3, 9)));
  CHECK(tape.value(out).v == theta.v);
}

TEST_CASE("fusion logits at initialization are bitwise invariant to the graph input") {
  auto s = empty_scenario(8, 8, {{0, 0}, {4, 4}, {7, 1}}, {{3, 3}, {0, 4}, {7, 7}});
  auto params = fusion::init_params(6);
  auto inputs = fusion::token_inputs(reply_of({0, 2, mapf::kInvalidSymbol}), s, s.starts);
  const Tensor base = fusion::forward_eval(params, inputs, random_xl(3, 1));
  for (std::uint64_t seed = 2; seed < 6; ++seed) {
    Tensor other = random_xl(3, seed);
    for (double& v : other.v) v *= 1e6;  // arbitrary perturbation
    CHECK(fusion::forward_eval(params, inputs, other).v == base.v);
  }
}

TEST_CASE("single agent: softmax over one key is exactly 1") {
  auto s = empty_scenario(4, 4, {{1, 1}}, {{2, 2}});
  auto params = fusion::init_params(7);
  for (auto& [name, e] : params.entries)
    if (name.find("alpha") != std::string::npos) e.value.v[0] = 0.8;
  auto inputs = fusion::token_inputs(reply_of({3}), s, s.starts);
  Tensor xl = random_xl(1, 12);

  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  Tensor theta = tape.value(fusion::embed_tokens(tape, ids, inputs));
  Tensor out = tape.value(
      fusion::gated_xattn_layer(tape, ids, 2, tape.leaf(theta), tape.leaf(xl)));
  // with one key the attention mix is exactly xl * V2 scaled by tanh(alpha)
  Tensor expected = dense_gated_layer(params, 2, theta, xl);
  for (int i = 0; i < out.size(); ++i)
    CHECK(out.v[i] == doctest::Approx(expected.v[i]).epsilon(1e-12));
}

TEST_CASE("gated layer matches the dense recomputation on a random 3-agent case") {
  auto params = fusion::init_params(8);
  Rng rng(13);
  for (auto& [name, e] : params.entries)
    if (name.find("alpha") != std::string::npos || name.find("beta") != std::string::npos)
      e.value.v[0] = rng.range(-1, 1);
  Tensor theta({3, fusion::kDim});
  for (double& v : theta.v) v = rng.range(-1, 1);
  Tensor xl = random_xl(3, 21);
  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  Tensor out =
      tape.value(fusion::gated_xattn_layer(tape, ids, 3, tape.leaf(theta), tape.leaf(xl)));
  Tensor expected = dense_gated_layer(params, 3, theta, xl);
  for (int i = 0; i < out.size(); ++i)
    CHECK(out.v[i] == doctest::Approx(expected.v[i]).epsilon(1e-10));
}

TEST_CASE("permuting agents permutes fusion logits") {
  auto s = empty_scenario(8, 8, {{0, 0}, {4, 4}, {7, 1}}, {{3, 3}, {0, 4}, {7, 7}});
  auto params = fusion::init_params(9);
  Rng rng(31);
  for (auto& [name, e] : params.entries)
    if (name.find("alpha") != std::string::npos || name.find("beta") != std::string::npos)
      e.value.v[0] = rng.range(-0.5, 0.5);
  // slot embeddings must be identical for permutation symmetry to hold
  for (int slot = 1; slot < fusion::kMaxAgents; ++slot)
    for (int j = 0; j < fusion::kDim; ++j)
      params.value("fuse.slot_embed").at(slot, j) = params.value("fuse.slot_embed").at(0, j);

  std::vector<int> proposals{0, 2, 4};
  Tensor xl = random_xl(3, 77);
  auto inputs = fusion::token_inputs(reply_of(proposals), s, s.starts);
  Tensor base = fusion::forward_eval(params, inputs, xl);

  const int perm[3] = {2, 0, 1};
  mapf::Scenario ps = s;
  std::vector<int> pprop(3);
  Tensor pxl({3, fusion::kDim});
  for (int i = 0; i < 3; ++i) {
    ps.starts[i] = s.starts[perm[i]];
    ps.goals[i] = s.goals[perm[i]];
    pprop[i] = proposals[perm[i]];
    for (int j = 0; j < fusion::kDim; ++j) pxl.at(i, j) = xl.at(perm[i], j);
  }
  auto pinputs = fusion::token_inputs(reply_of(pprop), ps, ps.starts);
  Tensor permuted = fusion::forward_eval(params, pinputs, pxl);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(permuted.at(i, j) == doctest::Approx(base.at(perm[i], j)).epsilon(1e-10));
}

TEST_CASE("layer output distance from the input is bounded by the gate magnitudes") {
  auto params = fusion::init_params(10);
  Rng rng(41);
  for (int layer = 1; layer <= 3; ++layer) {
    for (auto& [name, e] : params.entries)
      if (name.find("alpha") != std::string::npos || name.find("beta") != std::string::npos)
        e.value.v[0] = rng.range(-2, 2);
    Tensor theta({4, fusion::kDim});
    for (double& v : theta.v) v = rng.range(-1, 1);
    Tensor xl = random_xl(4, 100 + layer);

    nn::Tape tape(false);
    auto ids = nn::register_params(tape, params, false);
    Tensor out =
        tape.value(fusion::gated_xattn_layer(tape, ids, layer, tape.leaf(theta), tape.leaf(xl)));

    // recompute the two branch norms
    const std::string base = "fuse.x" + std::to_string(layer) + ".";
    const double alpha = std::tanh(params.value(base + "alpha").v[0]);
    const double beta = std::tanh(params.value(base + "beta").v[0]);
    Tensor no_gate = params.value(base + "alpha");
    // branch norms via the dense recomputation with gates forced open
    auto saved_a = params.value(base + "alpha").v[0];
    auto saved_b = params.value(base + "beta").v[0];

    // mixed branch norm: run with alpha=atanh(1)... instead recompute directly
    Tensor expected = dense_gated_layer(params, layer, theta, xl);
    double dist = 0, mixed_norm = 0, ffn_norm = 0;
    {
      // recover branch tensors by differencing gate settings
      params.value(base + "alpha").v[0] = 0;
      params.value(base + "beta").v[0] = 0;
      Tensor identity = dense_gated_layer(params, layer, theta, xl);
      params.value(base + "alpha").v[0] = saved_a;
      params.value(base + "beta").v[0] = 0;
      Tensor only_attn = dense_gated_layer(params, layer, theta, xl);
      params.value(base + "alpha").v[0] = saved_a;
      params.value(base + "beta").v[0] = saved_b;
      for (int i = 0; i < out.size(); ++i) {
        const double d = out.v[i] - theta.v[i];
        dist += d * d;
        const double m = only_attn.v[i] - identity.v[i];  // tanh(alpha) * mixed
        mixed_norm += m * m;
        const double f = expected.v[i] - only_attn.v[i];  // tanh(beta) * ffn
        ffn_norm += f * f;
      }
    }
    dist = std::sqrt(dist);
    mixed_norm = std::sqrt(mixed_norm);
    ffn_norm = std::sqrt(ffn_norm);
    CHECK(dist <= mixed_norm + ffn_norm + 1e-9);
    (void)alpha;
    (void)beta;
    (void)no_gate;
  }
}

TEST_CASE("single agent, gates zero, zero embeddings: logits equal the head bias") {
  auto s = empty_scenario(4, 4, {{1, 1}}, {{2, 3}});
  auto params = fusion::init_params(20);
  for (const char* n : {"fuse.act_embed", "fuse.slot_embed", "fuse.pos.w"})
    for (double& v : params.value(n).v) v = 0.0;
  params.value("fuse.head.b") = Tensor::of({5}, {0.1, -0.2, 0.3, -0.4, 0.5});
  auto inputs = fusion::token_inputs(reply_of({0}), s, s.starts);
  Tensor logits = fusion::forward_eval(params, inputs, random_xl(1, 33));
  // theta = 0 -> self-attention output 0 -> gated layers identity -> head bias
  CHECK(logits.v == params.value("fuse.head.b").v);
}

TEST_CASE("zero-gate zero-embedding configuration yields exactly ln(5) loss") {
  auto s = empty_scenario(4, 4, {{0, 0}, {3, 3}}, {{3, 0}, {0, 3}});
  auto params = fusion::init_params(11);
  for (auto& [name, e] : params.entries)
    for (double& v : e.value.v) v = 0.0;
  fusion::TrainRecord rec;
  rec.tokens = fusion::token_inputs(reply_of({0, 1}), s, s.starts);
  rec.xl = random_xl(2, 5);
  rec.labels = {2, 3};
  nn::Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  auto loss = fusion::batch_loss(tape, ids, {&rec});
  CHECK(tape.value(loss).v[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("fusion loss passes the gradient check on sampled coordinates") {
  auto s = empty_scenario(6, 6, {{0, 0}, {2, 3}, {5, 5}}, {{5, 0}, {3, 3}, {0, 5}});
  auto params = fusion::init_params(12);
  Rng rng(51);
  for (auto& [name, e] : params.entries)
    if (name.find("alpha") != std::string::npos || name.find("beta") != std::string::npos)
      e.value.v[0] = rng.range(-0.5, 0.5);  // open the gates so both branches carry gradient
  fusion::TrainRecord rec;
  rec.tokens = fusion::token_inputs(reply_of({0, mapf::kInvalidSymbol, 2}), s, s.starts);
  rec.xl = random_xl(3, 61);
  rec.labels = {1, 4, 2};
  auto build = [&](nn::Tape& t, const std::map<std::string, nn::Tape::Id>& ids) {
    return fusion::batch_loss(t, ids, {&rec});
  };
  // 40 sampled coordinates per tensor covers every parameter (gates have one)
  CHECK(nn::grad_check(params, build, 1e-5, 40, 777) < 1e-4);
}

TEST_CASE("frozen reasoner receives exactly zero gradient from the fusion loss") {
  auto s = empty_scenario(6, 6, {{0, 0}, {4, 4}}, {{5, 5}, {0, 4}});
  auto nar_params = nar::init_params(13);
  auto fusion_params = fusion::init_params(13);
  auto obs = percept::observe_all(s, s.starts);
  auto adj = percept::build_adjacency(s.starts, 4);
  // embeddings computed outside the training tape
  Tensor xl = nar::embed(nar_params, obs, adj);

  fusion::TrainRecord rec;
  rec.tokens = fusion::token_inputs(reply_of({1, 2}), s, s.starts);
  rec.xl = xl;
  rec.labels = {0, 1};

  nn::Tape tape(true);
  auto fusion_ids = nn::register_params(tape, fusion_params);
  auto nar_ids = nn::register_params(tape, nar_params);  // tracked but unused
  auto loss = fusion::batch_loss(tape, fusion_ids, {&rec});
  tape.backward(loss);
  for (const auto& [name, id] : nar_ids)
    for (double g : tape.grad(id).v) CHECK(g == 0.0);
  // while the fusion parameters do learn
  double total = 0;
  for (const auto& [name, id] : fusion_ids)
    for (double g : tape.grad(id).v) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("single-record memorization drives the fusion loss under 0.05") {
  auto s = empty_scenario(6, 6, {{0, 0}, {5, 5}}, {{0, 3}, {5, 2}});
  fusion::TrainRecord rec;
  rec.tokens = fusion::token_inputs(reply_of({3, 2}), s, s.starts);
  rec.xl = random_xl(2, 91);
  rec.labels = {3, 2};
  auto params = fusion::init_params(14);
  auto result = fusion::train(params, {rec}, 500, 1, 1e-3, 7);
  CHECK(result.final_loss < 0.05);
}

TEST_CASE("a head trained to copy proposals agrees with them on 99% of agents") {
  // records cover every symbol; labels equal the proposal (invalid -> Stay)
  auto s = empty_scenario(8, 8, {{1, 1}, {3, 5}, {6, 2}, {4, 4}},
                          {{7, 7}, {0, 0}, {6, 6}, {0, 4}});
  Rng rng(2025);
  std::vector<fusion::TrainRecord> dataset;
  for (int i = 0; i < 40; ++i) {
    std::vector<int> proposals(4);
    for (int& p : proposals) p = rng.index(6);
    fusion::TrainRecord rec;
    rec.tokens = fusion::token_inputs(reply_of(proposals), s, s.starts);
    rec.xl = random_xl(4, 1000 + i);
    for (int p : proposals)
      rec.labels.push_back(p == mapf::kInvalidSymbol ? static_cast<int>(Action::Stay) : p);
    dataset.push_back(std::move(rec));
  }
  auto params = fusion::init_params(15);
  fusion::train(params, dataset, 800, 8, 3e-3, 11);
  long hits = 0, total = 0;
  for (const auto& rec : dataset) {
    auto acts = nar::argmax_actions(fusion::forward_eval(params, rec.tokens, rec.xl));
    for (size_t i = 0; i < rec.labels.size(); ++i) {
      total += 1;
      if (acts[i] == rec.labels[i]) hits += 1;
    }
  }
  CHECK(static_cast<double>(hits) / total >= 0.99);
}

TEST_CASE("fused episodes are deterministic and degenerate cases behave") {
  auto s = empty_scenario(6, 6, {{0, 0}, {5, 5}}, {{0, 3}, {5, 2}});
  auto nar_params = nar::init_params(16);
  auto fusion_params = fusion::init_params(16);
  auto run = [&] {
    llm::StubChatClient client({42, 0.1, 0});
    return fusion::run_llm_nar_episode(s, client, nar_params, fusion_params);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].parsed == b.steps[i].parsed);
    CHECK(a.steps[i].fused == b.steps[i].fused);
    CHECK(a.steps[i].executed == b.steps[i].executed);
  }

  // all agents already on goals: no client call, immediate success
  auto done = empty_scenario(4, 4, {{1, 1}}, {{1, 1}});
  llm::FailingChatClient failing;
  auto log = fusion::run_llm_nar_episode(done, failing, nar_params, fusion_params);
  CHECK(log.steps.empty());
  CHECK_FALSE(log.aborted);

  // every fused action is a legal action (never the invalid symbol)
  for (const auto& rec : a.steps) {
    REQUIRE(rec.fused.size() == 2);
    for (Action act : rec.fused) CHECK(static_cast<int>(act) < mapf::kActionCount);
  }
}

TEST_SUITE_END();
