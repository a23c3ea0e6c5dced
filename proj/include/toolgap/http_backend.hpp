#pragma once

#include <string>
#include <vector>

#include "toolgap/backend.hpp"

namespace toolgap {

struct HttpBackendConfig {
  /// Base URL, e.g. "http://127.0.0.1:8000".
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  /// Sent as "Authorization: Bearer <token>" when non-empty.
  std::string api_key;
  /// Family key into `triggers`.
  std::string model_family;
  TriggerConfig triggers;
  int top_logprobs = 20;
  int max_tokens = 1024;
  int timeout_seconds = 300;
};

/// Client for an OpenAI-style chat-completions endpoint. Tool schemas are
/// sent as "function" tools; decision probabilities come from the
/// top_logprobs of the first generated token.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  Completion complete(const CompletionRequest& request) override;

  /// Request body for `request` (exposed for tests).
  json build_body(const CompletionRequest& request) const;
  /// Parses a response body; throws std::runtime_error on a malformed body.
  Completion parse_response(const json& body, bool capture_decision) const;

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
};

}  // namespace toolgap
