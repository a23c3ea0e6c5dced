#pragma once

// Language-model inference surface shared by the labeling and collection
// stages: chat requests, completions with optional tool calls and
// decision-point probabilities, tool handlers, and trigger-token readout.

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace toolgap {

using json = nlohmann::ordered_json;

struct ToolCall {
  std::string name;
  json arguments = json::object();

  bool operator==(const ToolCall&) const = default;
};

struct Message {
  std::string role;  // system | user | assistant | tool
  std::string content;
  std::optional<ToolCall> tool_call;  // assistant turns that invoked a tool
  std::string tool_name;              // tool turns

  bool operator==(const Message&) const = default;
};

json to_json(const Message& m);
Message message_from_json(const json& j);

/// Which pipeline stage issued a request. Real backends ignore it; the
/// scripted mock uses it to pick the scripted behaviour.
enum class Stage { Labeling, Collection, VerbalAssessment, VerbalFollowup };

struct RequestContext {
  std::string sample_id;
  std::size_t run_index = 0;
  Stage stage = Stage::Labeling;
};

struct ToolSpec {
  std::string name;
  std::string description;
  json parameters;  // JSON schema of the arguments object

  bool operator==(const ToolSpec&) const = default;
};

struct CompletionRequest {
  std::vector<Message> messages;
  /// 0 selects greedy decoding.
  double temperature = 0.0;
  std::vector<ToolSpec> tools;
  /// Ask for next-token probabilities at the first generated position.
  bool capture_decision = false;
  RequestContext context;
};

struct Decision {
  double p_tool = 0.0;
  double p_best_nontool = 0.0;

  bool operator==(const Decision&) const = default;
};

struct Completion {
  std::string text;
  std::optional<ToolCall> tool_call;
  std::optional<Decision> decision;

  bool operator==(const Completion&) const = default;
};

/// Network or server-side failure; worth retrying.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misconfiguration (missing trigger tokens, bad script, ...); never retried.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Must be safe to call concurrently for distinct requests.
  virtual Completion complete(const CompletionRequest& request) = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

/// Calls backend.complete, retrying TransportError with exponential backoff.
/// Rethrows the last TransportError once attempts are exhausted.
Completion complete_with_retry(Backend& backend, const CompletionRequest& request, const RetryPolicy& policy);

// ---------------------------------------------------------------------------
// Tools

struct ToolResult {
  bool ok = true;
  std::string text;
};

struct ToolHandler {
  ToolSpec spec;
  std::function<ToolResult(const json& arguments)> executor;
};

/// Invokes the handler. Invalid arguments and executor exceptions come back
/// as a failed ToolResult whose text is fed to the model, never as a throw.
ToolResult run_tool(const ToolHandler& handler, const json& arguments);

/// Calculator over the arithmetic grammar; arguments {"expression": string}.
ToolHandler make_calculator();

/// Offline search over a fixture store keyed by normalized query (lowercase,
/// collapsed whitespace, trimmed); arguments {"query": string}. A miss
/// returns kNoResults.
class SearchFixtures {
 public:
  SearchFixtures() = default;
  explicit SearchFixtures(std::map<std::string, std::string> entries);
  /// JSON object {query: snippet, ...}.
  static SearchFixtures load(const std::string& path);

  void add(std::string_view query, std::string snippet);
  std::optional<std::string> lookup(std::string_view query) const;

  static std::string normalize(std::string_view query);

 private:
  std::map<std::string, std::string> entries_;
};

inline constexpr std::string_view kNoResults = "[no results]";

ToolHandler make_search(SearchFixtures fixtures);

// ---------------------------------------------------------------------------
// Trigger-token readout

/// Tool-trigger token ids per model family ("qwen", "llama", ...).
struct TriggerConfig {
  std::map<std::string, std::vector<std::size_t>> token_ids;
  std::map<std::string, std::vector<std::string>> token_texts;
};

struct TriggerReadout {
  bool is_tool_argmax = false;
  double p_tool = 0.0;
  double p_best_nontool = 0.0;
};

/// Reads the decision point from a full normalized next-token distribution.
/// p_tool is the maximum over the family's trigger ids; is_tool_argmax
/// requires p_tool to strictly exceed every other token.
TriggerReadout detect_tool_trigger(const TriggerConfig& config, std::string_view model_family,
                                   std::span<const double> distribution);

/// Same readout over a truncated distribution (e.g. top-k log-probabilities
/// returned by an API). Entries are matched by text against the family's
/// trigger texts.
struct TokenProb {
  std::string token;
  double prob = 0.0;
};
TriggerReadout detect_tool_trigger(const TriggerConfig& config, std::string_view model_family,
                                   std::span<const TokenProb> top_tokens);

}  // namespace toolgap
