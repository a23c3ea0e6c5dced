#include "toolgap/http_backend.hpp"

#include <cmath>

#include <httplib.h>

namespace toolgap {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError("http backend needs an endpoint");
  if (!config_.endpoint.starts_with("http://"))
    throw ConfigError("http backend endpoint must be an http:// URL, got '" + config_.endpoint + "'");
  scheme_host_port_ = config_.endpoint;
  while (scheme_host_port_.ends_with('/')) scheme_host_port_.pop_back();
  if (config_.model.empty()) throw ConfigError("http backend needs a model name");
}

json HttpBackend::build_body(const CompletionRequest& request) const {
  json body;
  body["model"] = config_.model;
  json messages = json::array();
  std::string last_call_id;
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    const auto& m = request.messages[i];
    json jm;
    jm["role"] = m.role;
    if (m.role == "assistant" && m.tool_call) {
      last_call_id = "call_" + std::to_string(i);
      jm["content"] = m.content;
      jm["tool_calls"] = json::array({{{"id", last_call_id},
                                       {"type", "function"},
                                       {"function", {{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments.dump()}}}}});
    } else if (m.role == "tool") {
      jm["tool_call_id"] = last_call_id;
      if (!m.tool_name.empty()) jm["name"] = m.tool_name;
      jm["content"] = m.content;
    } else {
      jm["content"] = m.content;
    }
    messages.push_back(std::move(jm));
  }
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = config_.max_tokens;
  if (!request.tools.empty()) {
    json tools = json::array();
    for (const auto& t : request.tools)
      tools.push_back({{"type", "function"},
                       {"function", {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    body["tools"] = std::move(tools);
  }
  if (request.capture_decision) {
    body["logprobs"] = true;
    body["top_logprobs"] = config_.top_logprobs;
  }
  return body;
}

Completion HttpBackend::parse_response(const json& body, bool capture_decision) const {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty())
    throw std::runtime_error("chat-completions response has no choices");
  const auto& choice = body["choices"][0];
  const auto& message = choice.at("message");
  Completion out;
  if (message.contains("content") && message["content"].is_string()) out.text = message["content"].get<std::string>();
  if (message.contains("tool_calls") && message["tool_calls"].is_array() && !message["tool_calls"].empty()) {
    const auto& fn = message["tool_calls"][0].at("function");
    ToolCall call;
    call.name = fn.at("name").get<std::string>();
    const auto& args = fn.value("arguments", json("{}"));
    if (args.is_string()) {
      try {
        call.arguments = json::parse(args.get<std::string>());
      } catch (const json::parse_error&) {
        call.arguments = json{{"raw", args.get<std::string>()}};
      }
    } else {
      call.arguments = args;
    }
    out.tool_call = std::move(call);
  }
  if (capture_decision && choice.contains("logprobs") && choice["logprobs"].is_object()) {
    const auto& content = choice["logprobs"].value("content", json::array());
    if (content.is_array() && !content.empty() && content[0].contains("top_logprobs")) {
      std::vector<TokenProb> top;
      for (const auto& t : content[0]["top_logprobs"])
        top.push_back({t.at("token").get<std::string>(), std::exp(t.at("logprob").get<double>())});
      const auto r = detect_tool_trigger(config_.triggers, config_.model_family, std::span<const TokenProb>(top));
      out.decision = Decision{r.p_tool, r.p_best_nontool};
    }
  }
  return out;
}

Completion HttpBackend::complete(const CompletionRequest& request) {
  if (request.capture_decision) {
    const auto it = config_.triggers.token_texts.find(config_.model_family);
    if (it == config_.triggers.token_texts.end() || it->second.empty())
      throw ConfigError("no tool-trigger token configured for model family '" + config_.model_family + "'");
  }
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(10);
  client.set_read_timeout(config_.timeout_seconds);
  client.set_write_timeout(config_.timeout_seconds);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const auto res = client.Post(config_.path, headers, build_body(request).dump(), "application/json");
  if (!res) throw TransportError("request to " + scheme_host_port_ + " failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError("server returned HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw std::runtime_error("server returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed response body: ") + e.what());
  }
  return parse_response(body, request.capture_decision);
}

}  // namespace toolgap
