#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "symreg/detail/text.hpp"
#include "symreg/toolkit.hpp"

namespace symreg {

class LlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Role { System, User, Assistant, Tool };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

inline Role role_from_name(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::Tool;
  throw LlmError("unknown chat role '" + s + "'");
}

struct ToolCallRequest {
  std::string id;
  std::string name;
  std::string arguments;  // JSON object text
};

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  std::vector<ToolCallRequest> tool_calls;  // assistant only
  std::string tool_call_id;                 // tool role only

  static ChatMessage system(std::string text) { return {Role::System, std::move(text), {}, {}}; }
  static ChatMessage user(std::string text) { return {Role::User, std::move(text), {}, {}}; }
  static ChatMessage assistant(std::string text) {
    return {Role::Assistant, std::move(text), {}, {}};
  }
  static ChatMessage tool(std::string text, std::string call_id) {
    return {Role::Tool, std::move(text), {}, std::move(call_id)};
  }
};

inline nlohmann::json message_to_json(const ChatMessage& m) {
  nlohmann::json j;
  j["role"] = role_name(m.role);
  j["content"] = m.content;
  if (!m.tool_calls.empty()) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& tc : m.tool_calls)
      calls.push_back({{"id", tc.id},
                       {"type", "function"},
                       {"function", {{"name", tc.name}, {"arguments", tc.arguments}}}});
    j["tool_calls"] = std::move(calls);
  }
  if (!m.tool_call_id.empty()) j["tool_call_id"] = m.tool_call_id;
  return j;
}

inline ChatMessage message_from_json(const nlohmann::json& j) {
  ChatMessage m;
  m.role = role_from_name(j.at("role").get<std::string>());
  if (j.contains("content") && !j["content"].is_null())
    m.content = j["content"].get<std::string>();
  if (j.contains("tool_calls")) {
    for (const auto& tc : j["tool_calls"]) {
      ToolCallRequest req;
      req.id = tc.value("id", std::string{});
      req.name = tc.at("function").at("name").get<std::string>();
      const auto& args = tc.at("function").at("arguments");
      req.arguments = args.is_string() ? args.get<std::string>() : args.dump();
      m.tool_calls.push_back(std::move(req));
    }
  }
  if (j.contains("tool_call_id") && !j["tool_call_id"].is_null())
    m.tool_call_id = j["tool_call_id"].get<std::string>();
  return m;
}

enum class LlmBackend { Scripted, Remote };

struct LlmConfig {
  LlmBackend backend = LlmBackend::Scripted;
  std::string policy;  // scripted policy id

  std::string endpoint;  // base URL, e.g. http://127.0.0.1:8080/v1
  std::string model;
  std::string credential_env = "SYMREG_API_KEY";
  double temperature = 0.7;
  int max_completion_tokens = 8192;
  int timeout_seconds = 120;
  int retry_attempts = 3;
  int retry_backoff_ms = 250;

  std::string record_path;  // append request/response JSONL when set
  std::string replay_path;  // serve a recorded transcript instead of the network
};

namespace detail {

inline int assistant_turns(const std::vector<ChatMessage>& history) {
  int n = 0;
  for (const auto& m : history)
    if (m.role == Role::Assistant) ++n;
  return n;
}

inline ChatMessage tool_call_message(int turn, const std::string& tool,
                                     const nlohmann::json& arguments) {
  ChatMessage m;
  m.role = Role::Assistant;
  m.tool_calls.push_back({"call_" + std::to_string(turn) + "_0", tool, arguments.dump()});
  return m;
}

inline std::string polynomial_skeleton(const std::string& var, int degree) {
  std::string out;
  for (int i = 0; i <= degree; ++i) {
    if (i) out += " + ";
    const int power = degree - i;
    out += "params[" + std::to_string(i) + "]";
    if (power == 1)
      out += "*" + var;
    else if (power > 1)
      out += "*" + var + "**" + std::to_string(power);
  }
  return out;
}

// Deterministic test policies, pure functions of the history.
//   oracle_after_k:<k>:<skeleton>  k-1 data peeks, evaluate, then submit
//   poly_ladder[:<var>]            rising-degree polynomials, then submit
//   head_only                      never answers (turn-limit behavior)
//   always_invalid                 proposes unparseable text forever
//   canned:<text>                  immediate final answer with fixed text
inline ChatMessage run_policy(const std::string& policy_id,
                              const std::vector<ChatMessage>& history) {
  const int turn = assistant_turns(history);
  const nlohmann::json head_args = {{"command", "head"}, {"n", 5}};

  if (policy_id.rfind("oracle_after_k:", 0) == 0) {
    const std::string rest = policy_id.substr(15);
    const std::size_t sep = rest.find(':');
    if (sep == std::string::npos) throw LlmError("oracle_after_k policy needs :k:<skeleton>");
    const int k = std::stoi(rest.substr(0, sep));
    const std::string skeleton = rest.substr(sep + 1);
    if (k < 1 || skeleton.empty()) throw LlmError("oracle_after_k policy needs k >= 1 and a skeleton");
    if (turn < k - 1) return tool_call_message(turn, kDataAnalyzerName, head_args);
    if (turn == k - 1)
      return tool_call_message(turn, kEquationEvaluatorName, {{"equation", skeleton}});
    return ChatMessage::assistant(skeleton);
  }
  if (policy_id == "poly_ladder" || policy_id.rfind("poly_ladder:", 0) == 0) {
    const std::string var = policy_id.size() > 12 ? policy_id.substr(12) : "x";
    const int max_degree = kMaxParams - 1;
    if (turn <= max_degree)
      return tool_call_message(
          turn, kEquationEvaluatorName,
          {{"equation", polynomial_skeleton(var.empty() ? "x" : var, turn)}});
    return ChatMessage::assistant(polynomial_skeleton(var.empty() ? "x" : var, max_degree));
  }
  if (policy_id == "head_only") return tool_call_message(turn, kDataAnalyzerName, head_args);
  if (policy_id == "always_invalid")
    return tool_call_message(turn, kEquationEvaluatorName, {{"equation", "params[0]*"}});
  if (policy_id.rfind("canned:", 0) == 0)
    return ChatMessage::assistant(policy_id.substr(7));
  throw LlmError("unknown scripted policy '" + policy_id + "'");
}

struct ParsedEndpoint {
  std::string host_port;  // scheme://host[:port]
  std::string path_prefix;
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const std::size_t scheme = endpoint.find("://");
  if (scheme == std::string::npos)
    throw LlmError("endpoint must start with http:// or https://");
  const std::size_t path = endpoint.find('/', scheme + 3);
  if (path == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, path), prefix};
}

}  // namespace detail

/// Chat-with-tools client. The remote backend speaks the OpenAI-compatible
/// /chat/completions wire format; scripted backends are pure functions of
/// the history, which keeps runs replayable in CI. Safe to share across
/// threads.
class LlmClient {
 public:
  explicit LlmClient(LlmConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.replay_path.empty()) load_replay();
  }

  const LlmConfig& config() const { return cfg_; }
  long calls() const { return calls_.load(); }

  ChatMessage complete(const std::vector<ChatMessage>& history, const nlohmann::json& tools) {
    if (history.empty() || history.front().role != Role::System)
      throw LlmError("history must start with a system message");
    calls_.fetch_add(1);
    if (cfg_.backend == LlmBackend::Scripted)
      return detail::run_policy(cfg_.policy, history);
    return complete_remote(history, tools);
  }

 private:
  nlohmann::json build_request(const std::vector<ChatMessage>& history,
                               const nlohmann::json& tools) const {
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["max_tokens"] = cfg_.max_completion_tokens;
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : history) messages.push_back(message_to_json(m));
    body["messages"] = std::move(messages);
    if (tools.is_array() && !tools.empty()) {
      body["tools"] = tools;
      body["tool_choice"] = "auto";
    }
    return body;
  }

  static ChatMessage parse_response(const nlohmann::json& body) {
    try {
      const auto& choices = body.at("choices");
      if (!choices.is_array() || choices.empty()) throw LlmError("reply has no choices");
      return message_from_json(choices.at(0).at("message"));
    } catch (const nlohmann::json::exception& e) {
      throw LlmError(std::string("malformed chat-completions reply: ") + e.what());
    }
  }

  ChatMessage complete_remote(const std::vector<ChatMessage>& history,
                              const nlohmann::json& tools) {
    const nlohmann::json request = build_request(history, tools);

    if (!cfg_.replay_path.empty()) {
      std::lock_guard<std::mutex> lock(mutex_);
      if (replay_pos_ >= replay_.size()) throw LlmError("replay transcript exhausted");
      const auto& record = replay_[replay_pos_];
      if (record.at("request") != request)
        throw LlmError("replay mismatch at record " + std::to_string(replay_pos_));
      ++replay_pos_;
      return parse_response(record.at("response"));
    }

    const auto ep = detail::parse_endpoint(cfg_.endpoint);
    const std::string body_text = request.dump();
    std::string last_error;
    for (int attempt = 0; attempt < std::max(cfg_.retry_attempts, 1); ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(cfg_.retry_backoff_ms * (1L << (attempt - 1))));
      httplib::Client client(ep.host_port);
      client.set_connection_timeout(cfg_.timeout_seconds);
      client.set_read_timeout(cfg_.timeout_seconds);
      httplib::Headers headers;
      // the credential is resolved at request time and never recorded
      if (const char* key = std::getenv(cfg_.credential_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
      const auto res = client.Post(ep.path_prefix + "/chat/completions", headers, body_text,
                                   "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "server status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw LlmError("chat-completions request failed with status " +
                       std::to_string(res->status) + ": " + res->body);
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw LlmError(std::string("malformed chat-completions reply: ") + e.what());
      }
      const ChatMessage message = parse_response(reply);
      if (!cfg_.record_path.empty()) {
        std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream out(cfg_.record_path, std::ios::app);
        out << nlohmann::json{{"request", request}, {"response", reply}}.dump() << '\n';
      }
      return message;
    }
    throw LlmError("chat-completions request failed after " +
                   std::to_string(std::max(cfg_.retry_attempts, 1)) + " attempts (" +
                   last_error + ")");
  }

  void load_replay() {
    std::ifstream in(cfg_.replay_path);
    if (!in) throw LlmError("cannot open replay transcript " + cfg_.replay_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        replay_.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw LlmError("replay transcript line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  LlmConfig cfg_;
  std::vector<nlohmann::json> replay_;
  std::size_t replay_pos_ = 0;
  std::atomic<long> calls_{0};
  std::mutex mutex_;
};

enum class JudgeVerdict { Yes, No, Error };

inline constexpr const char* kJudgePromptTemplate =
    "Given the ground truth mathematical expression A and the hypothesis B, determine if "
    "there exist any constant parameter values that would make the hypothesis equivalent to "
    "the given ground truth expression.\n"
    "Let's think step by step. Explain your reasoning and then provide the final answer as:\n"
    "{ \"reasoning\": \"Step-by-step analysis\", \"answer\": \"Yes/No\" }\n"
    "\n"
    "Ground Truth A: %s\n"
    "Hypothesis B: %s";

namespace detail {
inline std::optional<nlohmann::json> extract_json_object(const std::string& text) {
  for (std::size_t start = text.find('{'); start != std::string::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (c == '\\')
          ++i;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      if (c == '{') ++depth;
      if (c == '}' && --depth == 0) {
        try {
          return nlohmann::json::parse(text.substr(start, i - start + 1));
        } catch (const nlohmann::json::exception&) {
          break;  // try the next opening brace
        }
      }
    }
  }
  return std::nullopt;
}
}  // namespace detail

/// Single-call equivalence judgement with the fixed assessment prompt.
/// Any failure (transport, unparseable reply) maps to Error.
inline JudgeVerdict judge_equivalence(const std::string& pred_text,
                                      const std::string& truth_text, LlmClient& client) {
  const std::string prompt =
      detail::strprintf(kJudgePromptTemplate, truth_text.c_str(), pred_text.c_str());
  std::vector<ChatMessage> history{
      ChatMessage::system("You are a careful mathematical assistant."),
      ChatMessage::user(prompt)};
  ChatMessage reply;
  try {
    reply = client.complete(history, nlohmann::json::array());
  } catch (const std::exception&) {
    return JudgeVerdict::Error;
  }
  const auto obj = detail::extract_json_object(reply.content);
  if (!obj || !obj->contains("answer") || !(*obj)["answer"].is_string())
    return JudgeVerdict::Error;
  std::string answer = (*obj)["answer"].get<std::string>();
  for (char& c : answer) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (answer == "yes") return JudgeVerdict::Yes;
  if (answer == "no") return JudgeVerdict::No;
  return JudgeVerdict::Error;
}

}  // namespace symreg
