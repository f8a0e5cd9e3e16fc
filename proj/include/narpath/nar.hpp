// Graph-network action predictor trained to imitate the CBS expert. A shared
// CNN encodes each agent's local window, two graph layers combine a per-agent
// self map with neighbor aggregation through the normalized adjacency
// (X_l = relu(X W_self + (C X) W_neigh)), and an MLP head emits one logit per
// action.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "narpath/mapf.hpp"
#include "narpath/nn.hpp"

namespace narpath::nar {

inline constexpr int kEmbedDim = 64;
inline constexpr int kLayers = 2;

// conv 3->16 k3 s2, conv 16->32 k3 s2, linear 32->64; two 64->64 graph
// layers (self + neighbor maps); head 64->64->5
nn::ParamStore init_params(std::uint64_t seed);

struct ForwardIds {
  nn::Tape::Id embeddings;  // N x 64
  nn::Tape::Id logits;      // N x 5
};

ForwardIds forward(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                   const std::vector<nn::Tensor>& observations, const nn::Tensor& adjacency);

struct Output {
  nn::Tensor embeddings;
  nn::Tensor logits;
};

Output forward_eval(const nn::ParamStore& params, const std::vector<nn::Tensor>& observations,
                    const nn::Tensor& adjacency);

// embeddings only; identical arithmetic to forward_eval
nn::Tensor embed(const nn::ParamStore& params, const std::vector<nn::Tensor>& observations,
                 const nn::Tensor& adjacency);

std::vector<int> argmax_actions(const nn::Tensor& logits);

struct TrainRecord {
  std::vector<nn::Tensor> observations;
  nn::Tensor adjacency;
  std::vector<int> labels;  // expert action per agent, 0..4
};

// mean cross-entropy of one record batch
nn::Tape::Id batch_loss(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                        const std::vector<const TrainRecord*>& batch);

struct CurvePoint {
  int step = 0;
  double loss = 0.0;
  double agreement = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  double final_loss = 0.0;
};

TrainResult pretrain(nn::ParamStore& params, const std::vector<TrainRecord>& dataset, int steps,
                     int batch_size, double lr, std::uint64_t seed);

// fraction of (record, agent) pairs whose argmax matches the expert label
double agreement(const nn::ParamStore& params, const std::vector<TrainRecord>& dataset);

}  // namespace narpath::nar
