#pragma once

// Pipeline configuration and the stage runners behind the CLI. Each stage
// reads its inputs from persisted files and writes its outputs atomically,
// so any stage can be rerun on its own.
//
// Precedence: built-in defaults < config file < command-line flags.
// Relative paths are resolved against the working directory.

#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "toolgap/backend.hpp"
#include "toolgap/corpus.hpp"
#include "toolgap/http_backend.hpp"
#include "toolgap/labeler.hpp"
#include "toolgap/probes.hpp"

namespace toolgap {

/// Name of the environment variable holding the HTTP bearer token.
inline constexpr const char* kApiKeyEnv = "TOOLGAP_API_KEY";

struct BackendSpec {
  std::string kind = "mock";  // "mock" or "http"
  /// Mock script (JSONL) for kind "mock".
  std::filesystem::path script;
  /// kind "http"; api_key is never read from the config, only from kApiKeyEnv.
  HttpBackendConfig http;
};

struct PipelineConfig {
  std::string model_id = "mock-model";
  BackendSpec backend;
  /// Separate judge backend for external-judge grading; defaults to `backend`.
  std::optional<BackendSpec> judge;
  std::filesystem::path corpus;
  std::filesystem::path dump;
  std::filesystem::path out_dir = "out";
  LabelParams labeling;
  FactualGrading grading = FactualGrading::ChoiceMatch;
  std::size_t max_tool_rounds = 3;
  std::string collect_system_prompt;
  std::filesystem::path search_fixtures;
  ProbeHyper probe;
  bool allow_partial_dump = false;
  RetryPolicy retry;
  unsigned jobs = 1;
  /// Extra models for the boundary ordering: name -> necessity file.
  std::map<std::string, std::filesystem::path> boundary_models;
};

class ConfigInvalid : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A stage input is missing; the message names the stage to run first.
class MissingStage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PipelineConfig config_from_json(const json& j);
json to_json(const PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);
/// Throws ConfigInvalid (runs >= 1, temperature >= 0, known backend kind, ...).
void validate(const PipelineConfig& c);

/// File locations under out_dir.
struct Layout {
  std::filesystem::path necessity, behavior, verbal;
  std::filesystem::path probes_cognition, probes_action;
  std::filesystem::path grid_cognition, grid_action, grid_cosine;
  std::filesystem::path diagnosis;
  std::filesystem::path report_dir;
};

Layout layout(const PipelineConfig& c);

std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const Corpus& corpus);
std::vector<ToolHandler> tools_for(const PipelineConfig& c, Domain domain);

/// Each runner returns a short JSON summary of what it wrote.
json run_label(const PipelineConfig& c);
json run_collect(const PipelineConfig& c);
json run_verbal(const PipelineConfig& c);
/// target: "cognition", "action" or "both".
json run_probe(const PipelineConfig& c, const std::string& target = "both");
json run_cosine(const PipelineConfig& c);
json run_diagnose(const PipelineConfig& c);
json run_report(const PipelineConfig& c);

}  // namespace toolgap
