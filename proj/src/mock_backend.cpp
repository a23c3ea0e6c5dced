#include "toolgap/mock_backend.hpp"

#include <algorithm>
#include <cctype>

#include "toolgap/io.hpp"

namespace toolgap {

json to_json(const ScriptEntry& e) {
  json j;
  j["sample_id"] = e.sample_id;
  j["per_run_correct"] = e.per_run_correct;
  j["calls_tool"] = e.calls_tool;
  if (e.decision) j["decision"] = {e.decision->p_tool, e.decision->p_best_nontool};
  if (e.verbal) j["verbal"] = *e.verbal;
  if (e.verbal_calls_tool) j["verbal_calls_tool"] = *e.verbal_calls_tool;
  if (e.transport_fail) j["transport_fail"] = true;
  return j;
}

ScriptEntry script_entry_from_json(const json& j) {
  ScriptEntry e;
  e.sample_id = j.at("sample_id").get<std::string>();
  e.per_run_correct = j.at("per_run_correct").get<std::vector<bool>>();
  e.calls_tool = j.at("calls_tool").get<bool>();
  if (j.contains("decision") && !j["decision"].is_null()) {
    const auto& d = j["decision"];
    if (!d.is_array() || d.size() != 2) throw std::invalid_argument("decision must be [p_tool, p_best_nontool]");
    e.decision = Decision{d[0].get<double>(), d[1].get<double>()};
  }
  if (j.contains("verbal")) e.verbal = j["verbal"].get<std::string>();
  if (j.contains("verbal_calls_tool")) e.verbal_calls_tool = j["verbal_calls_tool"].get<bool>();
  e.transport_fail = j.value("transport_fail", false);
  return e;
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
  std::vector<ScriptEntry> out;
  io::for_each_jsonl(path, [&](const json& row, std::size_t line) {
    try {
      out.push_back(script_entry_from_json(row));
    } catch (const std::invalid_argument& e) {
      throw io::FormatError(std::string("mock script: ") + e.what(), line);
    }
  });
  return out;
}

void save_script(const std::vector<ScriptEntry>& entries, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(entries.size());
  for (const auto& e : entries) rows.push_back(to_json(e));
  io::write_atomic(path, io::to_jsonl(rows));
}

MockBackend::MockBackend(std::vector<ScriptEntry> script, const Corpus& corpus) {
  for (const auto& s : corpus.samples) samples_.emplace(s.id, s);
  for (auto& e : script) {
    if (!samples_.contains(e.sample_id)) throw ConfigError("mock script names unknown sample '" + e.sample_id + "'");
    if (e.decision) {
      const auto& d = *e.decision;
      if (d.p_tool < 0 || d.p_best_nontool < 0 || d.p_tool + d.p_best_nontool > 1.0 + 1e-12)
        throw ConfigError("mock decision for '" + e.sample_id + "' is not a valid probability pair");
      if ((d.p_tool > d.p_best_nontool) != e.calls_tool)
        throw ConfigError("mock script for '" + e.sample_id + "' is not greedy-coherent: calls_tool disagrees with decision");
    }
    const auto id = e.sample_id;
    if (!script_.emplace(id, std::move(e)).second) throw ConfigError("mock script repeats sample '" + id + "'");
  }
}

const ScriptEntry& MockBackend::entry(const std::string& sample_id) const {
  const auto it = script_.find(sample_id);
  if (it == script_.end()) throw ConfigError("mock script has no entry for sample '" + sample_id + "'");
  return it->second;
}

std::string MockBackend::answer_text(const Sample& sample, bool correct) const {
  if (sample.domain == Domain::Arithmetic) {
    const auto truth = std::stoll(sample.answers.at(0));
    return "The answer is " + std::to_string(correct ? truth : truth + 1) + ".";
  }
  if (!sample.choices.empty() && sample.correct_choice) {
    const auto idx = correct ? *sample.correct_choice : (*sample.correct_choice + 1) % sample.choices.size();
    return choice_letter(idx);
  }
  return correct ? sample.answers.at(0) : "I have no idea.";
}

namespace {

bool parsed_yes(const std::string& reply) {
  std::string word;
  for (const unsigned char c : reply) {
    if (std::isalpha(c))
      word += static_cast<char>(std::tolower(c));
    else if (!word.empty())
      break;
  }
  return word == "yes";
}

}  // namespace

Completion MockBackend::complete(const CompletionRequest& request) {
  const auto& ctx = request.context;
  const auto& e = entry(ctx.sample_id);
  if (e.transport_fail) throw TransportError("mock transport failure for '" + ctx.sample_id + "'");
  const auto& sample = samples_.at(ctx.sample_id);

  Completion out;
  switch (ctx.stage) {
    case Stage::Labeling: {
      if (ctx.run_index >= e.per_run_correct.size())
        throw ConfigError("mock script for '" + e.sample_id + "' has only " + std::to_string(e.per_run_correct.size()) +
                          " runs");
      out.text = answer_text(sample, e.per_run_correct[ctx.run_index]);
      return out;
    }
    case Stage::VerbalAssessment:
      out.text = e.verbal.value_or(e.calls_tool ? "yes" : "no");
      return out;
    case Stage::Collection:
    case Stage::VerbalFollowup: {
      const bool calls = ctx.stage == Stage::Collection
                             ? e.calls_tool
                             : e.verbal_calls_tool.value_or(parsed_yes(e.verbal.value_or(e.calls_tool ? "yes" : "no")));
      const auto tool_turn = std::find_if(request.messages.rbegin(), request.messages.rend(),
                                          [](const Message& m) { return m.role == "tool"; });
      const bool first_position = tool_turn == request.messages.rend();
      if (request.capture_decision && first_position && e.decision && ctx.stage == Stage::Collection)
        out.decision = e.decision;
      if (!first_position) {
        out.text = "The answer is " + tool_turn->content + ".";
        return out;
      }
      if (calls && !request.tools.empty()) {
        const auto& tool = request.tools.front();
        const auto key = tool.name == "search" ? "query" : "expression";
        out.tool_call = ToolCall{tool.name, json{{key, sample.question}}};
        return out;
      }
      out.text = answer_text(sample, e.per_run_correct.empty() || e.per_run_correct.front());
      return out;
    }
  }
  return out;
}

}  // namespace toolgap
