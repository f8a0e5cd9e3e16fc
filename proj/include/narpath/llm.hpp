// Chat-driven control loop for the grid environment: scene prompt rendering,
// tolerant reply parsing with stay-correction, the periodic reset controller,
// and pluggable chat clients (live HTTP endpoint and a deterministic scripted
// stub for offline runs).
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "narpath/mapf.hpp"
#include "narpath/rng.hpp"

namespace narpath::llm {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ParsedReply {
  std::vector<int> proposals;  // 0..4 actions, mapf::kInvalidSymbol when unparseable
  std::string raw;
};

std::string default_system_prompt();

// renders the current state: per-agent position/goal lines, map legend and
// coordinate convention, the map block (top row first), obstacle and agent
// coordinate lists, and the required reply format
std::string build_scene_prompt(const mapf::Scenario& scenario,
                               const std::vector<mapf::Cell>& positions);

// case-insensitive scan for "Agent <i>: <word>"; last occurrence wins;
// anything unrecognized or missing yields the invalid symbol. Total function.
ParsedReply parse_reply(const std::string& text, int n_agents);

struct ResetState {
  int rounds_since_reset = 0;
  int invalid_streak = 0;  // consecutive rounds where every agent was invalid
  int total_timesteps = 0;
};

enum class ResetDecision { Continue, Reset, Terminate };

ResetDecision reset_decision(const ResetState& rs, int budget, int reset_rounds = 5,
                             int invalid_rounds = 3);

struct ClientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // throws ClientError after exhausting retries
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// Deterministic stand-in for a language model: reads positions and goals back
// out of the scene prompt and proposes the greedy distance-reducing move for
// each agent, with a seeded fraction of unparseable lines. rtt_ms simulates
// the round-trip of a remote endpoint when timing runs need one.
struct StubConfig {
  std::uint64_t seed = 0;
  double invalid_rate = 0.10;
  int rtt_ms = 0;
};

class StubChatClient : public ChatClient {
 public:
  explicit StubChatClient(const StubConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  StubConfig cfg_;
  Rng rng_;
};

// test hook: always throws ClientError
class FailingChatClient : public ChatClient {
 public:
  std::string complete(const std::vector<ChatMessage>&) override;
};

struct HttpConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string api_key;
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_attempts = 3;
  int timeout_s = 60;
  int backoff_ms = 250;          // doubled per retry
  int requests_per_minute = 0;   // 0 = unlimited
};

// reads NARPATH_API_BASE and NARPATH_API_KEY
HttpConfig http_config_from_env();

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(const HttpConfig& cfg);
  ~HttpChatClient() override;
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// request/response plumbing, separated for tests
std::string build_chat_payload(const HttpConfig& cfg, const std::vector<ChatMessage>& messages);
std::string parse_chat_response(const std::string& body);  // throws ClientError

struct EpisodeConfig {
  int reset_rounds = 5;
  int invalid_rounds = 3;
  int max_steps_override = 0;  // 0 = three times the longer map side
};

// decides the joint action for one round from the parsed reply; may annotate
// the step record (e.g. with fused actions)
using DecideFn = std::function<mapf::JointAction(const ParsedReply&, const mapf::EpisodeState&,
                                                 mapf::StepRecord&)>;

// shared chat episode loop: prompt, query, parse, decide, env-step with
// repair, reset bookkeeping; ends when all agents sit on their goals or the
// budget is spent. Client failures abort the episode but keep the log.
mapf::EpisodeLog run_episode(const mapf::Scenario& scenario, ChatClient& client,
                             const EpisodeConfig& cfg, const DecideFn& decide);

// invalid proposals execute as Stay
mapf::EpisodeLog run_llm_episode(const mapf::Scenario& scenario, ChatClient& client,
                                 const EpisodeConfig& cfg = {});

}  // namespace narpath::llm
