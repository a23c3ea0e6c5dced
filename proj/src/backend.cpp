#include "toolgap/backend.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "toolgap/arith.hpp"

namespace toolgap {

json to_json(const Message& m) {
  json j;
  j["role"] = m.role;
  j["content"] = m.content;
  if (m.tool_call) j["tool_call"] = {{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}};
  if (!m.tool_name.empty()) j["tool_name"] = m.tool_name;
  return j;
}

Message message_from_json(const json& j) {
  Message m;
  m.role = j.at("role").get<std::string>();
  m.content = j.value("content", "");
  if (j.contains("tool_call"))
    m.tool_call = ToolCall{j["tool_call"].at("name").get<std::string>(), j["tool_call"].value("arguments", json::object())};
  m.tool_name = j.value("tool_name", "");
  return m;
}

Completion complete_with_retry(Backend& backend, const CompletionRequest& request, const RetryPolicy& policy) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return backend.complete(request);
    } catch (const TransportError&) {
      if (attempt >= policy.max_attempts) throw;
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
  }
}

ToolResult run_tool(const ToolHandler& handler, const json& arguments) {
  if (!arguments.is_object()) return {false, "error: arguments for '" + handler.spec.name + "' must be a JSON object"};
  const auto& required = handler.spec.parameters.value("required", json::array());
  for (const auto& key : required) {
    const auto name = key.get<std::string>();
    if (!arguments.contains(name)) return {false, "error: missing argument '" + name + "'"};
    if (!arguments[name].is_string()) return {false, "error: argument '" + name + "' must be a string"};
  }
  try {
    return handler.executor(arguments);
  } catch (const std::exception& e) {
    return {false, std::string("error: ") + e.what()};
  }
}

ToolHandler make_calculator() {
  ToolHandler h;
  h.spec.name = "calculator";
  h.spec.description = "Evaluate an integer arithmetic expression using + - * % and parentheses.";
  h.spec.parameters = {
      {"type", "object"},
      {"properties", {{"expression", {{"type", "string"}, {"description", "Expression to evaluate"}}}}},
      {"required", {"expression"}}};
  h.executor = [](const json& args) -> ToolResult {
    const auto expr = args.at("expression").get<std::string>();
    try {
      return {true, std::to_string(arith::evaluate(expr))};
    } catch (const arith::ParseError& e) {
      return {false, std::string("error: ") + e.what()};
    }
  };
  return h;
}

SearchFixtures::SearchFixtures(std::map<std::string, std::string> entries) {
  for (auto& [k, v] : entries) add(k, std::move(v));
}

SearchFixtures SearchFixtures::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open search fixtures " + path);
  const auto j = json::parse(in);
  SearchFixtures f;
  for (const auto& [k, v] : j.items()) f.add(k, v.get<std::string>());
  return f;
}

void SearchFixtures::add(std::string_view query, std::string snippet) { entries_[normalize(query)] = std::move(snippet); }

std::optional<std::string> SearchFixtures::lookup(std::string_view query) const {
  const auto it = entries_.find(normalize(query));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string SearchFixtures::normalize(std::string_view query) {
  std::string out;
  bool pending_space = false;
  for (const unsigned char c : query) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

ToolHandler make_search(SearchFixtures fixtures) {
  ToolHandler h;
  h.spec.name = "search";
  h.spec.description = "Search the web and return a short snippet answering the query.";
  h.spec.parameters = {{"type", "object"},
                       {"properties", {{"query", {{"type", "string"}, {"description", "Search query"}}}}},
                       {"required", {"query"}}};
  h.executor = [store = std::move(fixtures)](const json& args) -> ToolResult {
    if (auto hit = store.lookup(args.at("query").get<std::string>())) return {true, *hit};
    return {true, std::string(kNoResults)};
  };
  return h;
}

TriggerReadout detect_tool_trigger(const TriggerConfig& config, std::string_view model_family,
                                   std::span<const double> distribution) {
  const auto it = config.token_ids.find(std::string(model_family));
  if (it == config.token_ids.end() || it->second.empty())
    throw ConfigError("no tool-trigger token configured for model family '" + std::string(model_family) + "'");
  double sum = 0.0;
  for (const double p : distribution) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("next-token distribution has an entry outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("next-token distribution is not normalized");

  std::vector<bool> is_trigger(distribution.size(), false);
  for (const auto id : it->second) {
    if (id >= distribution.size()) throw ConfigError("trigger token id " + std::to_string(id) + " outside vocabulary");
    is_trigger[id] = true;
  }
  TriggerReadout r;
  for (std::size_t i = 0; i < distribution.size(); ++i) {
    if (is_trigger[i])
      r.p_tool = std::max(r.p_tool, distribution[i]);
    else
      r.p_best_nontool = std::max(r.p_best_nontool, distribution[i]);
  }
  r.is_tool_argmax = r.p_tool > r.p_best_nontool;
  return r;
}

TriggerReadout detect_tool_trigger(const TriggerConfig& config, std::string_view model_family,
                                   std::span<const TokenProb> top_tokens) {
  const auto it = config.token_texts.find(std::string(model_family));
  if (it == config.token_texts.end() || it->second.empty())
    throw ConfigError("no tool-trigger token configured for model family '" + std::string(model_family) + "'");
  TriggerReadout r;
  for (const auto& t : top_tokens) {
    const bool trigger = std::find(it->second.begin(), it->second.end(), t.token) != it->second.end();
    if (trigger)
      r.p_tool = std::max(r.p_tool, t.prob);
    else
      r.p_best_nontool = std::max(r.p_best_nontool, t.prob);
  }
  r.is_tool_argmax = r.p_tool > r.p_best_nontool;
  return r;
}

}  // namespace toolgap
