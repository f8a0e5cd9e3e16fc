// Fusion head combining chat-model action proposals with graph embeddings:
// learned token embeddings, one self-attention block with residual, three
// gated cross-attention layers (queries from the proposal tokens, keys and
// values from the frozen graph embeddings) and a linear action head. The
// tanh gates start at zero, so the head begins as a pure proposal pathway.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "narpath/llm.hpp"
#include "narpath/mapf.hpp"
#include "narpath/nar.hpp"
#include "narpath/nn.hpp"

namespace narpath::fusion {

inline constexpr int kDim = 64;
inline constexpr int kXattnLayers = 3;
inline constexpr int kMaxAgents = 32;   // slot table size
inline constexpr int kSymbols = 6;      // five actions + the invalid marker
inline constexpr int kFeatureDim = 4;   // row/H, col/W, d_goal_row/H, d_goal_col/W

// gates and biases zero, everything else fan-in uniform
nn::ParamStore init_params(std::uint64_t seed);

struct TokenInputs {
  std::vector<int> symbols;  // per-agent parsed proposal, 0..5
  nn::Tensor features;       // N x 4
};

TokenInputs token_inputs(const llm::ParsedReply& parsed, const mapf::Scenario& scenario,
                         const std::vector<mapf::Cell>& positions);

// theta row i = E_action[symbol_i] + features_i * W_pos + E_slot[i]
nn::Tape::Id embed_tokens(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                          const TokenInputs& inputs);

// A = softmax_rows((theta Q)(X_L K)^T / sqrt(64));
// Y = theta + tanh(alpha) * (A X_L V); out = Y + tanh(beta) * FFN(Y)
nn::Tape::Id gated_xattn_layer(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                               int layer, nn::Tape::Id theta, nn::Tape::Id xl);

nn::Tape::Id forward_logits(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                            const TokenInputs& inputs, nn::Tape::Id xl);

nn::Tensor forward_eval(const nn::ParamStore& params, const TokenInputs& inputs,
                        const nn::Tensor& xl);

struct TrainRecord {
  TokenInputs tokens;
  nn::Tensor xl;           // frozen graph embeddings for the record's state
  std::vector<int> labels; // expert action per agent
};

nn::Tape::Id batch_loss(nn::Tape& tape, const std::map<std::string, nn::Tape::Id>& params,
                        const std::vector<const TrainRecord*>& batch);

nar::TrainResult train(nn::ParamStore& params, const std::vector<TrainRecord>& dataset, int steps,
                       int batch_size, double lr, std::uint64_t seed);

// chat episode where the executed joint action is the argmax of the fusion
// logits; proposal parsing, repair and the reset controller are unchanged
mapf::EpisodeLog run_llm_nar_episode(const mapf::Scenario& scenario, llm::ChatClient& client,
                                     const nn::ParamStore& nar_params,
                                     const nn::ParamStore& fusion_params,
                                     const llm::EpisodeConfig& cfg = {}, int r_comm = 4);

}  // namespace narpath::fusion
