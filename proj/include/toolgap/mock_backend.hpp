#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "toolgap/backend.hpp"
#include "toolgap/corpus.hpp"

namespace toolgap {

/// One line of a mock script.
///
///   {"sample_id": "...", "per_run_correct": [true, ...], "calls_tool": bool,
///    "decision": [p_tool, p_best_nontool]}
///
/// Optional keys: "verbal" (raw stage-one reply, default "yes"/"no" from
/// calls_tool), "verbal_calls_tool" (stage-two call, default verbal == yes),
/// "transport_fail" (every request for the sample raises TransportError).
struct ScriptEntry {
  std::string sample_id;
  std::vector<bool> per_run_correct;
  bool calls_tool = false;
  std::optional<Decision> decision;
  std::optional<std::string> verbal;
  std::optional<bool> verbal_calls_tool;
  bool transport_fail = false;

  bool operator==(const ScriptEntry&) const = default;
};

json to_json(const ScriptEntry& e);
ScriptEntry script_entry_from_json(const json& j);

std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
void save_script(const std::vector<ScriptEntry>& entries, const std::filesystem::path& path);

/// Deterministic stand-in for a model. Labeling runs answer correctly or not
/// per per_run_correct[run_index]; with tools exposed the greedy decode calls
/// the domain tool iff calls_tool, and reports the scripted decision
/// probabilities at the first position. The script must be greedy-coherent:
/// when a decision is given, p_tool > p_best_nontool must equal calls_tool.
class MockBackend final : public Backend {
 public:
  MockBackend(std::vector<ScriptEntry> script, const Corpus& corpus);

  Completion complete(const CompletionRequest& request) override;

  const ScriptEntry& entry(const std::string& sample_id) const;

 private:
  std::string answer_text(const Sample& sample, bool correct) const;

  std::unordered_map<std::string, ScriptEntry> script_;
  std::unordered_map<std::string, Sample> samples_;
};

}  // namespace toolgap
