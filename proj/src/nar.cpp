#include "narpath/nar.hpp"

#include <cmath>
#include <stdexcept>

namespace narpath::nar {

using nn::ParamStore;
using nn::Tape;
using nn::Tensor;

ParamStore init_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamStore p;
  // biases share the fan-in uniform range; an exact-zero bias parks the conv
  // pre-activations on the relu kink for empty windows
  p.add("nar.conv1.w", nn::fan_in_init({16, 3, 3, 3}, 3 * 3 * 3, rng));
  p.add("nar.conv1.b", nn::fan_in_init({16}, 3 * 3 * 3, rng));
  p.add("nar.conv2.w", nn::fan_in_init({32, 16, 3, 3}, 16 * 3 * 3, rng));
  p.add("nar.conv2.b", nn::fan_in_init({32}, 16 * 3 * 3, rng));
  p.add("nar.proj.w", nn::fan_in_init({32, kEmbedDim}, 32, rng));
  p.add("nar.proj.b", nn::fan_in_init({kEmbedDim}, 32, rng));
  // each graph layer carries a self map next to the neighbor aggregation;
  // with aggregation alone, mutually-connected agents of equal degree get
  // identical adjacency rows and collapse to identical embeddings
  p.add("nar.gnn1.self.w", nn::fan_in_init({kEmbedDim, kEmbedDim}, kEmbedDim, rng));
  p.add("nar.gnn1.neigh.w", nn::fan_in_init({kEmbedDim, kEmbedDim}, kEmbedDim, rng));
  p.add("nar.gnn2.self.w", nn::fan_in_init({kEmbedDim, kEmbedDim}, kEmbedDim, rng));
  p.add("nar.gnn2.neigh.w", nn::fan_in_init({kEmbedDim, kEmbedDim}, kEmbedDim, rng));
  p.add("nar.mlp1.w", nn::fan_in_init({kEmbedDim, kEmbedDim}, kEmbedDim, rng));
  p.add("nar.mlp1.b", nn::fan_in_init({kEmbedDim}, kEmbedDim, rng));
  p.add("nar.mlp2.w", nn::fan_in_init({kEmbedDim, mapf::kActionCount}, kEmbedDim, rng));
  p.add("nar.mlp2.b", nn::fan_in_init({mapf::kActionCount}, kEmbedDim, rng));
  return p;
}

ForwardIds forward(Tape& tape, const std::map<std::string, Tape::Id>& params,
                   const std::vector<Tensor>& observations, const nn::Tensor& adjacency) {
  const int n = static_cast<int>(observations.size());
  if (adjacency.shape != std::vector<int>{n, n})
    throw std::invalid_argument("nar: adjacency must be N x N");

  std::vector<Tape::Id> rows;
  rows.reserve(n);
  for (const Tensor& obs : observations) {
    Tape::Id x = tape.leaf(obs);
    Tape::Id h1 = tape.relu(tape.conv2d(x, params.at("nar.conv1.w"), params.at("nar.conv1.b"), 2));
    Tape::Id h2 = tape.relu(tape.conv2d(h1, params.at("nar.conv2.w"), params.at("nar.conv2.b"), 2));
    Tape::Id flat = tape.reshape(h2, {1, 32});
    Tape::Id feat = tape.add_rowvec(tape.matmul(flat, params.at("nar.proj.w")), params.at("nar.proj.b"));
    rows.push_back(feat);
  }
  Tape::Id x0 = tape.stack_rows(rows);
  Tape::Id c = tape.leaf(adjacency);

  auto graph_layer = [&](Tape::Id x, const char* self_w, const char* neigh_w) {
    Tape::Id own = tape.matmul(x, params.at(self_w));
    Tape::Id mixed = tape.matmul(tape.matmul(c, x), params.at(neigh_w));
    return tape.relu(tape.add(own, mixed));
  };
  Tape::Id x1 = graph_layer(x0, "nar.gnn1.self.w", "nar.gnn1.neigh.w");
  Tape::Id x2 = graph_layer(x1, "nar.gnn2.self.w", "nar.gnn2.neigh.w");

  Tape::Id hid = tape.relu(
      tape.add_rowvec(tape.matmul(x2, params.at("nar.mlp1.w")), params.at("nar.mlp1.b")));
  Tape::Id logits =
      tape.add_rowvec(tape.matmul(hid, params.at("nar.mlp2.w")), params.at("nar.mlp2.b"));
  return {x2, logits};
}

Output forward_eval(const ParamStore& params, const std::vector<Tensor>& observations,
                    const nn::Tensor& adjacency) {
  Tape tape(false);
  auto ids = nn::register_params(tape, params, false);
  ForwardIds out = forward(tape, ids, observations, adjacency);
  return {tape.value(out.embeddings), tape.value(out.logits)};
}

Tensor embed(const ParamStore& params, const std::vector<Tensor>& observations,
             const nn::Tensor& adjacency) {
  return forward_eval(params, observations, adjacency).embeddings;
}

std::vector<int> argmax_actions(const Tensor& logits) {
  std::vector<int> actions(logits.rows());
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    actions[i] = best;
  }
  return actions;
}

Tape::Id batch_loss(Tape& tape, const std::map<std::string, Tape::Id>& params,
                    const std::vector<const TrainRecord*>& batch) {
  if (batch.empty()) throw std::invalid_argument("nar: empty batch");
  Tape::Id total = -1;
  for (const TrainRecord* rec : batch) {
    ForwardIds out = forward(tape, params, rec->observations, rec->adjacency);
    Tape::Id ce = tape.cross_entropy_mean(out.logits, rec->labels);
    total = total < 0 ? ce : tape.add(total, ce);
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

TrainResult pretrain(ParamStore& params, const std::vector<TrainRecord>& dataset, int steps,
                     int batch_size, double lr, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("nar: empty dataset");
  Rng rng(seed);
  nn::AdamConfig adam;
  adam.lr = lr;
  TrainResult result;

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
      throw std::runtime_error("nar: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    if (step % 100 == 0) {
      int hits = 0, total = 0;
      for (const TrainRecord* rec : batch) {
        auto acts = argmax_actions(forward_eval(params, rec->observations, rec->adjacency).logits);
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

double agreement(const ParamStore& params, const std::vector<TrainRecord>& dataset) {
  long hits = 0, total = 0;
  for (const TrainRecord& rec : dataset) {
    auto acts = argmax_actions(forward_eval(params, rec.observations, rec.adjacency).logits);
    for (size_t i = 0; i < rec.labels.size(); ++i) {
      total += 1;
      if (acts[i] == rec.labels[i]) hits += 1;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace narpath::nar
