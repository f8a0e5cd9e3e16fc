#include "narpath/llm.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace narpath::llm {

using mapf::Action;
using mapf::Cell;

std::string default_system_prompt() {
  return "You are the solver for multi-agent path finding problems. "
         "Agents move on a grid, one step per round, and must reach their goals "
         "without collisions. At every round you receive the current scenario and "
         "must reply with exactly one action per agent.";
}

std::string build_scene_prompt(const mapf::Scenario& scenario,
                               const std::vector<Cell>& positions) {
  std::string out;
  char buf[160];
  for (size_t i = 0; i < positions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "Agent %zu is at (%d, %d), wants to go to (%d, %d).\n", i + 1,
                  positions[i].row, positions[i].col, scenario.goals[i].row, scenario.goals[i].col);
    out += buf;
  }
  out +=
      "The map is as follows, where '@' denotes a cell with an obstacle that an agent "
      "cannot pass, and '.' denotes an empty cell that an agent can pass.\n";
  std::snprintf(buf, sizeof buf, "The lower-left cell is (0,0) and the lower-right cell is (0,%d):\n",
                scenario.map.width - 1);
  out += buf;
  out += scenario.map.render();
  out += "The coordinates of the obstacles:";
  for (const Cell& c : scenario.map.obstacles()) {
    std::snprintf(buf, sizeof buf, " (%d,%d)", c.row, c.col);
    out += buf;
  }
  out += ".\n";
  out += "The coordinates of the agents:";
  for (const Cell& c : positions) {
    std::snprintf(buf, sizeof buf, " (%d,%d)", c.row, c.col);
    out += buf;
  }
  out += ".\n";
  out += "Reply with one line per agent: 'Agent <i>: <up|down|left|right|stay>'\n";
  return out;
}

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_word_char(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

}  // namespace

ParsedReply parse_reply(const std::string& text, int n_agents) {
  ParsedReply reply;
  reply.raw = text;
  reply.proposals.assign(n_agents, mapf::kInvalidSymbol);
  const std::string low = lower(text);

  size_t pos = 0;
  while ((pos = low.find("agent", pos)) != std::string::npos) {
    size_t p = pos + 5;
    while (p < low.size() && low[p] == ' ') ++p;
    size_t num_begin = p;
    while (p < low.size() && std::isdigit(static_cast<unsigned char>(low[p]))) ++p;
    if (p == num_begin || p - num_begin > 6) {
      pos += 5;
      continue;
    }
    const int agent = std::atoi(low.substr(num_begin, p - num_begin).c_str());
    while (p < low.size() && (low[p] == ' ' || low[p] == ':' || low[p] == '.' || low[p] == '-'))
      ++p;
    size_t word_begin = p;
    while (p < low.size() && is_word_char(low[p])) ++p;
    if (agent >= 1 && agent <= n_agents && p > word_begin) {
      const std::string word = low.substr(word_begin, p - word_begin);
      auto action = mapf::action_from_word(word);
      reply.proposals[agent - 1] =
          action ? static_cast<int>(*action) : mapf::kInvalidSymbol;  // last line wins
    }
    pos += 5;
  }
  return reply;
}

ResetDecision reset_decision(const ResetState& rs, int budget, int reset_rounds,
                             int invalid_rounds) {
  if (rs.total_timesteps >= budget) return ResetDecision::Terminate;
  if (rs.rounds_since_reset >= reset_rounds) return ResetDecision::Reset;
  if (rs.invalid_streak >= invalid_rounds) return ResetDecision::Reset;
  return ResetDecision::Continue;
}

std::string StubChatClient::complete(const std::vector<ChatMessage>& messages) {
  if (cfg_.rtt_ms > 0)
    std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.rtt_ms));

  // the stub only sees the conversation text, like a real endpoint
  const ChatMessage* scene = nullptr;
  for (const auto& m : messages)
    if (m.role == "user") scene = &m;
  if (!scene) throw ClientError("stub: no user message");

  std::string out;
  char buf[64];
  size_t pos = 0;
  int agent = 0;
  const std::string& text = scene->content;
  while ((pos = text.find("Agent ", pos)) != std::string::npos) {
    int idx = 0, r = 0, c = 0, gr = 0, gc = 0;
    if (std::sscanf(text.c_str() + pos, "Agent %d is at (%d, %d), wants to go to (%d, %d).", &idx,
                    &r, &c, &gr, &gc) == 5) {
      agent += 1;
      const char* word;
      if (rng_.real() < cfg_.invalid_rate) {
        word = "jump";  // exercises stay-correction downstream
      } else {
        const int dr = gr - r, dc = gc - c;
        if (dr == 0 && dc == 0) word = "stay";
        else if (std::abs(dr) >= std::abs(dc)) word = dr > 0 ? "up" : "down";
        else word = dc > 0 ? "right" : "left";
      }
      std::snprintf(buf, sizeof buf, "Agent %d: %s\n", agent, word);
      out += buf;
    }
    pos += 6;
  }
  if (agent == 0) throw ClientError("stub: scene prompt had no agent lines");
  return out;
}

std::string FailingChatClient::complete(const std::vector<ChatMessage>&) {
  throw ClientError("transport failure");
}

HttpConfig http_config_from_env() {
  HttpConfig cfg;
  if (const char* base = std::getenv("NARPATH_API_BASE")) cfg.base_url = base;
  if (const char* key = std::getenv("NARPATH_API_KEY")) cfg.api_key = key;
  return cfg;
}

std::string build_chat_payload(const HttpConfig& cfg, const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body = {
      {"model", cfg.model}, {"messages", msgs}, {"temperature", cfg.temperature}};
  return body.dump();
}

std::string parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("bad response json: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw ClientError("response has no choices");
  const auto& choice = j["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content"))
    throw ClientError("response has no message content");
  return choice["message"]["content"].get<std::string>();
}

namespace {

// token bucket over a sliding minute, shared by all clients in the process
class RateLimiter {
 public:
  void acquire(int per_minute) {
    if (per_minute <= 0) return;
    std::unique_lock<std::mutex> lock(mutex_);
    for (;;) {
      const auto now = std::chrono::steady_clock::now();
      while (!stamps_.empty() && now - stamps_.front() > std::chrono::minutes(1))
        stamps_.pop_front();
      if (static_cast<int>(stamps_.size()) < per_minute) {
        stamps_.push_back(now);
        return;
      }
      const auto wait = stamps_.front() + std::chrono::minutes(1) - now;
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

 private:
  std::mutex mutex_;
  std::deque<std::chrono::steady_clock::time_point> stamps_;
};

RateLimiter& shared_rate_limiter() {
  static RateLimiter limiter;
  return limiter;
}

// splits scheme://host[:port][/prefix]
void split_base_url(const std::string& base, std::string& origin, std::string& prefix) {
  const size_t scheme = base.find("://");
  const size_t path = scheme == std::string::npos ? base.find('/') : base.find('/', scheme + 3);
  if (path == std::string::npos) {
    origin = base;
    prefix.clear();
  } else {
    origin = base.substr(0, path);
    prefix = base.substr(path);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  }
}

}  // namespace

struct HttpChatClient::Impl {
  HttpConfig cfg;
  std::string origin;
  std::string prefix;
  httplib::Client client;

  explicit Impl(const HttpConfig& c)
      : cfg(c), client((split_base_url(c.base_url, origin, prefix), origin)) {
    client.set_connection_timeout(c.timeout_s, 0);
    client.set_read_timeout(c.timeout_s, 0);
    client.set_write_timeout(c.timeout_s, 0);
  }
};

HttpChatClient::HttpChatClient(const HttpConfig& cfg) {
  if (cfg.base_url.empty()) throw std::invalid_argument("llm: base URL not configured");
  impl_ = std::make_unique<Impl>(cfg);
}

HttpChatClient::~HttpChatClient() = default;

std::string HttpChatClient::complete(const std::vector<ChatMessage>& messages) {
  const std::string payload = build_chat_payload(impl_->cfg, messages);
  const std::string path = impl_->prefix + "/chat/completions";
  httplib::Headers headers;
  if (!impl_->cfg.api_key.empty())
    headers.emplace("Authorization", "Bearer " + impl_->cfg.api_key);

  std::string last_error;
  for (int attempt = 0; attempt < impl_->cfg.max_attempts; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(
          std::chrono::milliseconds(impl_->cfg.backoff_ms * (1 << (attempt - 1))));
    shared_rate_limiter().acquire(impl_->cfg.requests_per_minute);
    auto res = impl_->client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "server status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw ClientError("chat endpoint returned status " + std::to_string(res->status));
    return parse_chat_response(res->body);
  }
  throw ClientError("chat request failed after retries: " + last_error);
}

mapf::EpisodeLog run_episode(const mapf::Scenario& scenario, ChatClient& client,
                             const EpisodeConfig& cfg, const DecideFn& decide) {
  scenario.validate();
  const int budget = cfg.max_steps_override > 0 ? cfg.max_steps_override : scenario.map.max_steps();
  const int n = scenario.agent_count();

  mapf::EpisodeLog log;
  mapf::EpisodeState state = mapf::initial_state(scenario);
  log.final_positions = state.positions;
  if (mapf::all_at_goals(scenario, state.positions)) return log;  // zero queries needed

  std::vector<ChatMessage> history{{"system", default_system_prompt()}};
  ResetState rs;

  while (true) {
    const ResetDecision d = reset_decision(rs, budget, cfg.reset_rounds, cfg.invalid_rounds);
    if (d == ResetDecision::Terminate) break;
    if (d == ResetDecision::Reset) {
      // wipe the conversation and continue from the current positions
      history.assign(1, {"system", default_system_prompt()});
      rs.rounds_since_reset = 0;
      rs.invalid_streak = 0;
    }

    const std::string scene = build_scene_prompt(scenario, state.positions);
    history.push_back({"user", scene});

    const auto decision_begin = std::chrono::steady_clock::now();
    std::string raw;
    try {
      raw = client.complete(history);
    } catch (const ClientError&) {
      log.aborted = true;
      break;
    }
    history.push_back({"assistant", raw});

    const ParsedReply parsed = parse_reply(raw, n);

    mapf::StepRecord rec;
    rec.t = state.t;
    rec.positions = state.positions;
    rec.prompt = scene;
    rec.raw_reply = raw;
    rec.parsed = parsed.proposals;
    const mapf::JointAction proposal = decide(parsed, state, rec);
    log.decision_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - decision_begin).count();
    log.decisions += 1;

    auto [next_state, executed] = mapf::step(scenario, state, proposal);
    rec.executed = executed;
    log.steps.push_back(std::move(rec));
    state = std::move(next_state);

    rs.rounds_since_reset += 1;
    rs.total_timesteps += 1;
    bool all_invalid = true;
    for (int p : parsed.proposals)
      if (p != mapf::kInvalidSymbol) all_invalid = false;
    rs.invalid_streak = all_invalid ? rs.invalid_streak + 1 : 0;

    if (mapf::all_at_goals(scenario, state.positions)) break;
  }
  log.final_positions = state.positions;
  return log;
}

mapf::EpisodeLog run_llm_episode(const mapf::Scenario& scenario, ChatClient& client,
                                 const EpisodeConfig& cfg) {
  return run_episode(scenario, client, cfg,
                     [](const ParsedReply& parsed, const mapf::EpisodeState&, mapf::StepRecord&) {
                       mapf::JointAction actions;
                       actions.reserve(parsed.proposals.size());
                       for (int p : parsed.proposals)
                         actions.push_back(p == mapf::kInvalidSymbol ? mapf::Action::Stay
                                                                     : static_cast<Action>(p));
                       return actions;
                     });
}

}  // namespace narpath::llm
