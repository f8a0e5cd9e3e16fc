#include "narpath/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "narpath/percept.hpp"

namespace narpath::fusion {

using nn::ParamStore;
using nn::Tape;
using nn::Tensor;

namespace {

const double kAttnScale = 1.0 / std::sqrt(static_cast<double>(kDim));

std::string layer_name(int layer, const char* suffix) {
  return "fuse.x" + std::to_string(layer) + "." + suffix;
}

}  // namespace

ParamStore init_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamStore p;
  p.add("fuse.act_embed", nn::fan_in_init({kSymbols, kDim}, kDim, rng));
  p.add("fuse.slot_embed", nn::fan_in_init({kMaxAgents, kDim}, kDim, rng));
  p.add("fuse.pos.w", nn::fan_in_init({kFeatureDim, kDim}, kFeatureDim, rng));
  for (const char* s : {"q", "k", "v", "o"})
    p.add(std::string("fuse.self.") + s, nn::fan_in_init({kDim, kDim}, kDim, rng));
  for (int l = 1; l <= kXattnLayers; ++l) {
    p.add(layer_name(l, "q"), nn::fan_in_init({kDim, kDim}, kDim, rng));
    p.add(layer_name(l, "k"), nn::fan_in_init({kDim, kDim}, kDim, rng));
    p.add(layer_name(l, "v"), nn::fan_in_init({kDim, kDim}, kDim, rng));
    p.add(layer_name(l, "ffn1.w"), nn::fan_in_init({kDim, 2 * kDim}, kDim, rng));
    p.add(layer_name(l, "ffn1.b"), Tensor({2 * kDim}));
    p.add(layer_name(l, "ffn2.w"), nn::fan_in_init({2 * kDim, kDim}, 2 * kDim, rng));
    p.add(layer_name(l, "ffn2.b"), Tensor({kDim}));
    p.add(layer_name(l, "alpha"), Tensor({1}));  // gates closed at init
    p.add(layer_name(l, "beta"), Tensor({1}));
  }
  p.add("fuse.head.w", nn::fan_in_init({kDim, mapf::kActionCount}, kDim, rng));
  p.add("fuse.head.b", Tensor({mapf::kActionCount}));
  return p;
}

TokenInputs token_inputs(const llm::ParsedReply& parsed, const mapf::Scenario& scenario,
                         const std::vector<mapf::Cell>& positions) {
  const int n = static_cast<int>(positions.size());
  if (static_cast<int>(parsed.proposals.size()) != n)
    throw std::invalid_argument("fusion: proposal/position length mismatch");
  if (n > kMaxAgents) throw std::invalid_argument("fusion: agent count exceeds slot capacity");
  TokenInputs inputs;
  inputs.symbols = parsed.proposals;
  inputs.features = Tensor({n, kFeatureDim});
  const double h = scenario.map.height, w = scenario.map.width;
  for (int i = 0; i < n; ++i) {
    inputs.features.at(i, 0) = positions[i].row / h;
    inputs.features.at(i, 1) = positions[i].col / w;
    inputs.features.at(i, 2) = (scenario.goals[i].row - positions[i].row) / h;
    inputs.features.at(i, 3) = (scenario.goals[i].col - positions[i].col) / w;
  }
  return inputs;
}

Tape::Id embed_tokens(Tape& tape, const std::map<std::string, Tape::Id>& params,
                      const TokenInputs& inputs) {
  const int n = static_cast<int>(inputs.symbols.size());
  if (n > kMaxAgents) throw std::invalid_argument("fusion: agent count exceeds slot capacity");
  std::vector<int> slots(n);
  for (int i = 0; i < n; ++i) slots[i] = i;
  Tape::Id act = tape.embedding_rows(params.at("fuse.act_embed"), inputs.symbols);
  Tape::Id pos = tape.matmul(tape.leaf(inputs.features), params.at("fuse.pos.w"));
  Tape::Id slot = tape.embedding_rows(params.at("fuse.slot_embed"), slots);
  return tape.add(tape.add(act, pos), slot);
}

Tape::Id gated_xattn_layer(Tape& tape, const std::map<std::string, Tape::Id>& params, int layer,
                           Tape::Id theta, Tape::Id xl) {
  Tape::Id q = tape.matmul(theta, params.at(layer_name(layer, "q")));
  Tape::Id k = tape.matmul(xl, params.at(layer_name(layer, "k")));
  Tape::Id v = tape.matmul(xl, params.at(layer_name(layer, "v")));
  Tape::Id attn = tape.softmax_rows(tape.scale(tape.matmul(q, k, false, true), kAttnScale));
  Tape::Id mixed = tape.matmul(attn, v);
  Tape::Id alpha = tape.tanh_all(params.at(layer_name(layer, "alpha")));
  Tape::Id y = tape.add(theta, tape.scale_by(alpha, mixed));

  Tape::Id ffn = tape.add_rowvec(
      tape.matmul(tape.relu(tape.add_rowvec(tape.matmul(y, params.at(layer_name(layer, "ffn1.w"))),
                                            params.at(layer_name(layer, "ffn1.b")))),
                  params.at(layer_name(layer, "ffn2.w"))),
      params.at(layer_name(layer, "ffn2.b")));
  Tape::Id beta = tape.tanh_all(params.at(layer_name(layer, "beta")));
  return tape.add(y, tape.scale_by(beta, ffn));
}

Tape::Id forward_logits(Tape& tape, const std::map<std::string, Tape::Id>& params,
                        const TokenInputs& inputs, Tape::Id xl) {
  Tape::Id theta = embed_tokens(tape, params, inputs);

  // self-attention block with residual
  Tape::Id q = tape.matmul(theta, params.at("fuse.self.q"));
  Tape::Id k = tape.matmul(theta, params.at("fuse.self.k"));
  Tape::Id v = tape.matmul(theta, params.at("fuse.self.v"));
  Tape::Id attn = tape.softmax_rows(tape.scale(tape.matmul(q, k, false, true), kAttnScale));
  Tape::Id self_out = tape.matmul(tape.matmul(attn, v), params.at("fuse.self.o"));
  Tape::Id t = tape.add(theta, self_out);

  for (int l = 1; l <= kXattnLayers; ++l) t = gated_xattn_layer(tape, params, l, t, xl);

  return tape.add_rowvec(tape.matmul(t, params.at("fuse.head.w")), params.at("fuse.head.b"));
}

Tensor forward_eval(const ParamStore& params, const TokenInputs& inputs, const Tensor& xl) {
  Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  return tape.value(forward_logits(tape, ids, inputs, tape.leaf(xl)));
}

Tape::Id batch_loss(Tape& tape, const std::map<std::string, Tape::Id>& params,
                    const std::vector<const TrainRecord*>& batch) {
  if (batch.empty()) throw std::invalid_argument("fusion: empty batch");
  Tape::Id total = -1;
  for (const TrainRecord* rec : batch) {
    // the graph embeddings enter as plain constants: the reasoner stays frozen
    Tape::Id logits = forward_logits(tape, params, rec->tokens, tape.leaf(rec->xl));
    Tape::Id ce = tape.cross_entropy_mean(logits, rec->labels);
    total = total < 0 ? ce : tape.add(total, ce);
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

nar::TrainResult train(ParamStore& params, const std::vector<TrainRecord>& dataset, int steps,
                       int batch_size, double lr, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("fusion: empty dataset");
  Rng rng(seed);
  nn::AdamConfig adam;
  adam.lr = lr;
  nar::TrainResult result;

  for (int step = 0; step < steps; ++step) {
    std::vector<const TrainRecord*> batch;
    batch.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b)
      batch.push_back(&dataset[rng.index(static_cast<int>(dataset.size()))]);

    Tape tape(true);
    auto ids = nn::register_params(tape, params);
    Tape::Id loss = batch_loss(tape, ids, batch);
    const double loss_value = tape.value(loss).v[0];
    if (!std::isfinite(loss_value))
      throw std::runtime_error("fusion: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    if (step % 100 == 0) {
      int hits = 0, total = 0;
      for (const TrainRecord* rec : batch) {
        auto acts = nar::argmax_actions(forward_eval(params, rec->tokens, rec->xl));
        for (size_t i = 0; i < rec->labels.size(); ++i) {
          total += 1;
          if (acts[i] == rec->labels[i]) hits += 1;
        }
      }
      result.curve.push_back({step, loss_value, total ? static_cast<double>(hits) / total : 0.0});
    }

    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : ids) grads.emplace(name, tape.grad(id));
    nn::adam_step(params, grads, adam);
    result.final_loss = loss_value;
  }
  return result;
}

mapf::EpisodeLog run_llm_nar_episode(const mapf::Scenario& scenario, llm::ChatClient& client,
                                     const ParamStore& nar_params, const ParamStore& fusion_params,
                                     const llm::EpisodeConfig& cfg, int r_comm) {
  return llm::run_episode(
      scenario, client, cfg,
      [&](const llm::ParsedReply& parsed, const mapf::EpisodeState& state,
          mapf::StepRecord& rec) {
        auto observations = percept::observe_all(scenario, state.positions);
        auto adjacency = percept::build_adjacency(state.positions, r_comm);
        Tensor xl = nar::embed(nar_params, observations, adjacency);
        TokenInputs tokens = token_inputs(parsed, scenario, state.positions);
        auto actions = nar::argmax_actions(forward_eval(fusion_params, tokens, xl));
        mapf::JointAction joint;
        joint.reserve(actions.size());
        for (int a : actions) joint.push_back(static_cast<mapf::Action>(a));
        rec.fused = joint;
        return joint;
      });
}

}  // namespace narpath::fusion
