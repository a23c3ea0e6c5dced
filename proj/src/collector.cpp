#include "toolgap/collector.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include "toolgap/io.hpp"
#include "toolgap/parallel.hpp"

namespace toolgap {

std::optional<double> p_call(double p_tool, double p_best_nontool) {
  if (!(p_tool >= 0.0 && p_tool <= 1.0) || !(p_best_nontool >= 0.0 && p_best_nontool <= 1.0))
    throw std::invalid_argument("p_call inputs must be probabilities in [0, 1]");
  const double denom = p_tool + p_best_nontool;
  if (denom == 0.0) return std::nullopt;
  return p_tool / denom;
}

namespace {

struct LoopResult {
  bool called = false;
  bool first_called = false;
  std::optional<Decision> decision;
  std::string final_answer;
  std::size_t rounds = 0;
  std::string note;
};

// Greedy tool loop over `messages`, which is extended in place.
LoopResult run_tool_loop(Backend& backend, std::vector<Message>& messages, const std::string& sample_id,
                         std::span<const ToolHandler> tools, Stage stage, const CollectParams& params) {
  LoopResult out;
  CompletionRequest req;
  req.temperature = 0.0;
  req.context = {sample_id, 0, stage};
  for (const auto& t : tools) req.tools.push_back(t.spec);

  for (bool first = true;; first = false) {
    req.messages = messages;
    req.capture_decision = first && params.capture_decision;
    const auto c = complete_with_retry(backend, req, params.retry);
    if (first) out.decision = c.decision;
    if (!c.tool_call) {
      messages.push_back({"assistant", c.text, std::nullopt, {}});
      out.final_answer = c.text;
      return out;
    }
    out.called = true;
    if (first) out.first_called = true;
    messages.push_back({"assistant", c.text, c.tool_call, {}});
    if (out.rounds >= params.max_tool_rounds) {
      out.note = "tool round cap (" + std::to_string(params.max_tool_rounds) + ") reached";
      return out;
    }
    const auto handler = std::find_if(tools.begin(), tools.end(),
                                      [&](const ToolHandler& h) { return h.spec.name == c.tool_call->name; });
    const ToolResult result = handler == tools.end()
                                  ? ToolResult{false, "error: unknown tool '" + c.tool_call->name + "'"}
                                  : run_tool(*handler, c.tool_call->arguments);
    messages.push_back({"tool", result.text, std::nullopt, c.tool_call->name});
    ++out.rounds;
  }
}

std::vector<Message> opening(const std::string& system_prompt, const std::string& user) {
  std::vector<Message> m;
  if (!system_prompt.empty()) m.push_back({"system", system_prompt, std::nullopt, {}});
  m.push_back({"user", user, std::nullopt, {}});
  return m;
}

}  // namespace

BehaviorRecord collect_behavior(Backend& backend, const Sample& sample, std::span<const ToolHandler> tools,
                                std::string_view model_id, const CollectParams& params) {
  BehaviorRecord rec;
  rec.sample_id = sample.id;
  rec.model_id = std::string(model_id);
  rec.transcript = opening(params.system_prompt, sample.prompt);
  try {
    auto loop = run_tool_loop(backend, rec.transcript, sample.id, tools, Stage::Collection, params);
    rec.called = loop.called;
    rec.first_called = loop.first_called;
    rec.decision = loop.decision;
    rec.final_answer = std::move(loop.final_answer);
    rec.tool_rounds = loop.rounds;
    rec.note = std::move(loop.note);
  } catch (const TransportError& e) {
    rec.complete = false;
    rec.note = e.what();
    return rec;
  }
  if (rec.decision) rec.p_call = p_call(rec.decision->p_tool, rec.decision->p_best_nontool);
  return rec;
}

std::vector<BehaviorRecord> collect_corpus(Backend& backend, const Corpus& corpus, std::span<const ToolHandler> tools,
                                           std::string_view model_id, const CollectParams& params, unsigned jobs) {
  std::vector<BehaviorRecord> out(corpus.samples.size());
  parallel_for(corpus.samples.size(), jobs,
               [&](std::size_t i) { out[i] = collect_behavior(backend, corpus.samples[i], tools, model_id, params); });
  return out;
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::NecessaryCalled: return "N-C";
    case Category::NecessaryNotCalled: return "N-NC";
    case Category::UnnecessaryCalled: return "UN-C";
    case Category::UnnecessaryNotCalled: return "UN-NC";
  }
  return "?";
}

Category classify(int n, bool called) {
  if (n != 0 && n != 1) throw std::invalid_argument("necessity label must be 0 or 1");
  if (n == 1) return called ? Category::NecessaryCalled : Category::NecessaryNotCalled;
  return called ? Category::UnnecessaryCalled : Category::UnnecessaryNotCalled;
}

double CategoryCounts::mismatch_rate() const {
  return static_cast<double>(n_nc + un_c) / static_cast<double>(total());
}

std::uint64_t CategoryCounts::mismatch_pct_tenths() const {
  return percent_tenths(n_nc, total()) + percent_tenths(un_c, total());
}

CategoryCounts aggregate(std::span<const Category> categories) {
  if (categories.empty()) throw std::invalid_argument("cannot aggregate an empty record set");
  CategoryCounts c;
  for (const auto cat : categories) {
    switch (cat) {
      case Category::NecessaryCalled: ++c.n_c; break;
      case Category::NecessaryNotCalled: ++c.n_nc; break;
      case Category::UnnecessaryCalled: ++c.un_c; break;
      case Category::UnnecessaryNotCalled: ++c.un_nc; break;
    }
  }
  return c;
}

Classified classify_records(std::span<const NecessityRecord> necessity, std::span<const BehaviorRecord> behavior) {
  std::unordered_map<std::string_view, const BehaviorRecord*> by_id;
  for (const auto& b : behavior) by_id.emplace(b.sample_id, &b);
  Classified out;
  for (const auto& n : necessity) {
    const auto it = by_id.find(n.sample_id);
    if (!n.complete || it == by_id.end() || !it->second->complete) {
      out.unclassifiable.push_back(n.sample_id);
      continue;
    }
    out.categories.emplace_back(n.sample_id, classify(n.n, it->second->called));
  }
  return out;
}

std::string format_cell(std::uint64_t count, std::uint64_t total) {
  return std::to_string(count) + " (" + format_tenths(percent_tenths(count, total)) + "%)";
}

std::string category_csv_row(std::string_view model, std::string_view domain, const CategoryCounts& c) {
  const auto t = c.total();
  std::string row = std::string(model) + "," + std::string(domain) + "," + std::to_string(c.n_c) + "," +
                    std::to_string(c.n_nc) + "," + std::to_string(c.un_c) + "," + std::to_string(c.un_nc) + "," +
                    format_tenths(c.mismatch_pct_tenths());
  for (const auto v : {c.n_c, c.n_nc, c.un_c, c.un_nc}) row += "," + format_tenths(percent_tenths(v, t));
  return row;
}

namespace {

json transcript_json(const std::vector<Message>& transcript) {
  json arr = json::array();
  for (const auto& m : transcript) arr.push_back(to_json(m));
  return arr;
}

std::vector<Message> transcript_from(const json& arr) {
  std::vector<Message> out;
  for (const auto& m : arr) out.push_back(message_from_json(m));
  return out;
}

}  // namespace

json to_json(const BehaviorRecord& r) {
  json j;
  j["model_id"] = r.model_id;
  j["sample_id"] = r.sample_id;
  j["called"] = r.called;
  j["first_called"] = r.first_called;
  if (r.decision) j["decision"] = {r.decision->p_tool, r.decision->p_best_nontool};
  j["p_call"] = r.p_call ? json(*r.p_call) : json(nullptr);
  j["tool_rounds"] = r.tool_rounds;
  j["final_answer"] = r.final_answer;
  j["complete"] = r.complete;
  if (!r.note.empty()) j["note"] = r.note;
  j["transcript"] = transcript_json(r.transcript);
  return j;
}

BehaviorRecord behavior_from_json(const json& j) {
  BehaviorRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<std::string>();
  r.called = j.at("called").get<bool>();
  r.first_called = j.value("first_called", r.called);
  if (j.contains("decision")) r.decision = Decision{j["decision"][0].get<double>(), j["decision"][1].get<double>()};
  if (j.contains("p_call") && !j["p_call"].is_null()) r.p_call = j["p_call"].get<double>();
  r.tool_rounds = j.value("tool_rounds", std::size_t{0});
  r.final_answer = j.value("final_answer", "");
  r.complete = j.value("complete", true);
  r.note = j.value("note", "");
  if (j.contains("transcript")) r.transcript = transcript_from(j["transcript"]);
  return r;
}

void save_behavior(const std::vector<BehaviorRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  io::write_atomic(path, io::to_jsonl(rows));
}

std::vector<BehaviorRecord> load_behavior(const std::filesystem::path& path) {
  std::vector<BehaviorRecord> out;
  io::for_each_jsonl(path, [&](const json& row, std::size_t) { out.push_back(behavior_from_json(row)); });
  return out;
}

std::optional<bool> parse_yes_no(std::string_view reply) {
  std::string word;
  for (const unsigned char c : reply) {
    if (std::isalpha(c)) {
      word += static_cast<char>(std::tolower(c));
    } else if (!word.empty()) {
      break;
    } else if (!std::isspace(c) && !std::ispunct(c)) {
      return std::nullopt;  // leading digits or non-ASCII
    }
  }
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

VerbalRecord verbalized_protocol(Backend& backend, const Sample& sample, std::span<const ToolHandler> tools,
                                 std::string_view model_id, const BehaviorRecord* direct, const VerbalParams& params) {
  VerbalRecord rec;
  rec.sample_id = sample.id;
  rec.model_id = std::string(model_id);
  rec.transcript = opening(params.collect.system_prompt, sample.prompt + "\n\n" + params.assessment_prompt);
  try {
    CompletionRequest req;
    req.messages = rec.transcript;
    req.temperature = 0.0;
    req.context = {sample.id, 0, Stage::VerbalAssessment};
    for (const auto& t : tools) req.tools.push_back(t.spec);
    const auto c = complete_with_retry(backend, req, params.collect.retry);
    rec.reply = c.text;
    rec.verbal_necessary = c.tool_call ? std::nullopt : parse_yes_no(c.text);
    rec.transcript.push_back({"assistant", c.text, c.tool_call, {}});
    if (!rec.verbal_necessary) rec.note = "stage-one reply is not yes/no";

    rec.transcript.push_back({"user", params.followup_prompt, std::nullopt, {}});
    const auto loop = run_tool_loop(backend, rec.transcript, sample.id, tools, Stage::VerbalFollowup, params.collect);
    rec.called = loop.called;
  } catch (const TransportError& e) {
    rec.complete = false;
    rec.note = e.what();
    return rec;
  }
  if (direct) rec.changed_vs_direct = rec.called != direct->called;
  return rec;
}

VerbalMetrics verbal_metrics(std::span<const VerbalRecord> records, std::span<const NecessityRecord> necessity,
                             std::span<const BehaviorRecord> direct) {
  std::unordered_map<std::string_view, const NecessityRecord*> nec;
  for (const auto& n : necessity)
    if (n.complete) nec.emplace(n.sample_id, &n);
  std::unordered_map<std::string_view, const BehaviorRecord*> dir;
  for (const auto& b : direct)
    if (b.complete) dir.emplace(b.sample_id, &b);

  VerbalMetrics m;
  std::vector<int> verbal;
  std::vector<int> truth;
  std::size_t mismatched = 0;
  std::size_t changed = 0;
  for (const auto& r : records) {
    if (!r.complete || !r.verbal_necessary) {
      ++m.invalid;
      continue;
    }
    const auto it = nec.find(r.sample_id);
    if (it == nec.end()) continue;
    bool was_changed = r.changed_vs_direct;
    if (!direct.empty()) {
      const auto d = dir.find(r.sample_id);
      if (d == dir.end()) continue;
      was_changed = r.called != d->second->called;
    }
    verbal.push_back(*r.verbal_necessary ? 1 : 0);
    truth.push_back(it->second->n);
    if (*r.verbal_necessary != r.called) ++mismatched;
    if (was_changed) ++changed;
  }
  if (verbal.empty()) throw std::invalid_argument("verbal metrics: no records join with necessity labels");
  m.joined = verbal.size();
  m.mcc = mcc(confusion(verbal, truth));
  m.cog_exe_mismatch_rate = static_cast<double>(mismatched) / static_cast<double>(m.joined);
  m.changed_rate = static_cast<double>(changed) / static_cast<double>(m.joined);
  return m;
}

json to_json(const VerbalRecord& r) {
  json j;
  j["model_id"] = r.model_id;
  j["sample_id"] = r.sample_id;
  j["reply"] = r.reply;
  j["verbal_necessary"] = r.verbal_necessary ? json(*r.verbal_necessary) : json(nullptr);
  j["called"] = r.called;
  j["changed_vs_direct"] = r.changed_vs_direct;
  j["complete"] = r.complete;
  if (!r.note.empty()) j["note"] = r.note;
  j["transcript"] = transcript_json(r.transcript);
  return j;
}

VerbalRecord verbal_from_json(const json& j) {
  VerbalRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<std::string>();
  r.reply = j.value("reply", "");
  if (j.contains("verbal_necessary") && !j["verbal_necessary"].is_null())
    r.verbal_necessary = j["verbal_necessary"].get<bool>();
  r.called = j.at("called").get<bool>();
  r.changed_vs_direct = j.value("changed_vs_direct", false);
  r.complete = j.value("complete", true);
  r.note = j.value("note", "");
  if (j.contains("transcript")) r.transcript = transcript_from(j["transcript"]);
  return r;
}

void save_verbal(const std::vector<VerbalRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  io::write_atomic(path, io::to_jsonl(rows));
}

std::vector<VerbalRecord> load_verbal(const std::filesystem::path& path) {
  std::vector<VerbalRecord> out;
  io::for_each_jsonl(path, [&](const json& row, std::size_t) { out.push_back(verbal_from_json(row)); });
  return out;
}

}  // namespace toolgap
