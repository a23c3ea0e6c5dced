#include "toolgap/labeler.hpp"

#include <algorithm>
#include <cctype>

#include "toolgap/io.hpp"
#include "toolgap/parallel.hpp"

namespace toolgap {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::optional<std::int64_t> last_integer(std::string_view s) {
  std::optional<std::int64_t> last;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_digit(s[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    // Sign directly in front of the literal, not glued to a previous digit.
    bool negative = false;
    auto sign_ok = [&](std::size_t sign_pos) {
      return sign_pos == 0 || !std::isalnum(static_cast<unsigned char>(s[sign_pos - 1]));
    };
    if (start >= 1 && (s[start - 1] == '-' || s[start - 1] == '+') && sign_ok(start - 1))
      negative = s[start - 1] == '-';
    else if (start >= 3 && s.substr(start - 3, 3) == "\xE2\x88\x92" && sign_ok(start - 3))
      negative = true;

    std::string digits;
    std::size_t lead = 0;
    while (i < s.size() && is_digit(s[i])) {
      digits += s[i++];
      ++lead;
    }
    if (lead <= 3) {
      while (i + 3 < s.size() && s[i] == ',' && is_digit(s[i + 1]) && is_digit(s[i + 2]) && is_digit(s[i + 3]) &&
             (i + 4 >= s.size() || !is_digit(s[i + 4]))) {
        digits.append(s.substr(i + 1, 3));
        i += 4;
      }
    }
    bool integral = true;
    if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
      ++i;
      while (i < s.size() && is_digit(s[i])) {
        if (s[i] != '0') integral = false;
        ++i;
      }
    }
    if (!integral) continue;
    std::int64_t v = 0;
    bool overflow = false;
    for (const char c : digits)
      overflow |= __builtin_mul_overflow(v, 10, &v) || __builtin_add_overflow(v, c - '0', &v);
    if (overflow) continue;
    last = negative ? -v : v;
  }
  return last;
}

bool grade_arithmetic(std::string_view response, std::int64_t truth) {
  const auto v = last_integer(response);
  return v && *v == truth;
}

FactualGrading factual_grading_from_string(std::string_view s) {
  if (s == "choice-match") return FactualGrading::ChoiceMatch;
  if (s == "reference-match") return FactualGrading::ReferenceMatch;
  if (s == "external-judge") return FactualGrading::ExternalJudge;
  throw std::invalid_argument("unknown factual grading mode '" + std::string(s) + "'");
}

std::string_view to_string(FactualGrading g) {
  switch (g) {
    case FactualGrading::ChoiceMatch: return "choice-match";
    case FactualGrading::ReferenceMatch: return "reference-match";
    case FactualGrading::ExternalJudge: return "external-judge";
  }
  return "?";
}

std::optional<std::size_t> parse_choice(std::string_view response, std::size_t n_choices) {
  for (std::size_t i = 0; i < response.size(); ++i) {
    const char c = response[i];
    if (c < 'A' || c > 'Z') continue;
    const bool left = i == 0 || !std::isalnum(static_cast<unsigned char>(response[i - 1]));
    const bool right = i + 1 == response.size() || !std::isalnum(static_cast<unsigned char>(response[i + 1]));
    if (!left || !right) continue;
    const auto idx = static_cast<std::size_t>(c - 'A');
    if (idx < n_choices) return idx;
  }
  return std::nullopt;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  bool space = false;
  for (const unsigned char c : text) {
    if (std::isalnum(c)) {
      if (space && !out.empty()) out += ' ';
      space = false;
      out += static_cast<char>(std::tolower(c));
    } else if (std::isspace(c) || std::ispunct(c)) {
      space = true;
    } else {
      out += static_cast<char>(c);  // keep non-ASCII bytes
    }
  }
  return out;
}

GradeResult grade_factual(std::string_view response, const Sample& sample, FactualGrading mode, Backend* judge,
                          const RetryPolicy& retry) {
  switch (mode) {
    case FactualGrading::ChoiceMatch: {
      if (sample.choices.empty() || !sample.correct_choice)
        throw std::invalid_argument("choice-match grading needs a multiple-choice sample ('" + sample.id + "')");
      const auto picked = parse_choice(response, sample.choices.size());
      return {picked && *picked == *sample.correct_choice, {}};
    }
    case FactualGrading::ReferenceMatch: {
      const auto norm = normalize_text(response);
      for (const auto& ref : sample.answers) {
        const auto r = normalize_text(ref);
        if (!r.empty() && norm.find(r) != std::string::npos) return {true, {}};
      }
      return {false, {}};
    }
    case FactualGrading::ExternalJudge: {
      if (!judge) throw ConfigError("external-judge grading needs a judge backend");
      std::string refs;
      for (const auto& a : sample.answers) refs += "- " + a + "\n";
      CompletionRequest req;
      req.temperature = 0.0;
      req.context = {sample.id, 0, Stage::Labeling};
      req.messages = {{"system", "You grade answers to factual questions. Reply with exactly one word: correct or incorrect."},
                      {"user", "Question: " + sample.question + "\nReference answers:\n" + refs +
                                   "Response to grade: " + std::string(response) + "\nIs the response correct?"}};
      Completion c;
      try {
        c = complete_with_retry(*judge, req, retry);
      } catch (const TransportError&) {
        return {std::nullopt, {}};
      }
      const auto v = normalize_text(c.text);
      if (v.starts_with("incorrect")) return {false, c.text};
      if (v.starts_with("correct")) return {true, c.text};
      return {std::nullopt, c.text};
    }
  }
  return {};
}

GradeResult grade(std::string_view response, const Sample& sample, const GradingConfig& config) {
  if (sample.domain == Domain::Arithmetic) return {grade_arithmetic(response, std::stoll(sample.answers.at(0))), {}};
  return grade_factual(response, sample, config.factual, config.judge, config.retry);
}

int necessity_from_runs(std::span<const RunOutcome> runs) {
  if (runs.empty()) return 1;
  return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.correct; }) ? 0 : 1;
}

void NecessityRecord::add_run(RunOutcome run) {
  runs.push_back(std::move(run));
  n = necessity_from_runs(runs);
}

NecessityRecord label_necessity(Backend& backend, const Sample& sample, std::string_view model_id,
                                const LabelParams& params, const GradingConfig& grading) {
  if (params.runs < 1) throw std::invalid_argument("labeling needs at least one run");
  if (params.temperature < 0) throw std::invalid_argument("temperature must be non-negative");
  NecessityRecord rec;
  rec.sample_id = sample.id;
  rec.model_id = std::string(model_id);
  rec.param_runs = params.runs;
  rec.param_temperature = params.temperature;

  CompletionRequest req;
  if (!params.system_prompt.empty()) req.messages.push_back({"system", params.system_prompt});
  req.messages.push_back({"user", sample.prompt});
  req.temperature = params.temperature;

  for (std::size_t r = 0; r < params.runs; ++r) {
    req.context = {sample.id, r, Stage::Labeling};
    Completion c;
    try {
      c = complete_with_retry(backend, req, params.retry);
    } catch (const TransportError& e) {
      rec.complete = false;
      rec.note = "run " + std::to_string(r) + " failed: " + e.what();
      break;
    }
    const auto g = grade(c.text, sample, grading);
    if (!g.correct) {
      rec.complete = false;
      rec.note = "run " + std::to_string(r) + " could not be graded";
      rec.runs.push_back({c.text, false, g.verdict});
      break;
    }
    rec.add_run({c.text, *g.correct, g.verdict});
  }
  rec.n = necessity_from_runs(rec.runs);
  return rec;
}

std::vector<NecessityRecord> label_corpus(Backend& backend, const Corpus& corpus, std::string_view model_id,
                                          const LabelParams& params, const GradingConfig& grading, unsigned jobs) {
  std::vector<NecessityRecord> out(corpus.samples.size());
  parallel_for(corpus.samples.size(), jobs,
               [&](std::size_t i) { out[i] = label_necessity(backend, corpus.samples[i], model_id, params, grading); });
  return out;
}

json to_json(const NecessityRecord& r) {
  json j;
  j["model_id"] = r.model_id;
  j["sample_id"] = r.sample_id;
  j["n"] = r.n;
  j["complete"] = r.complete;
  j["params"] = {{"N", r.param_runs}, {"T", r.param_temperature}};
  json runs = json::array();
  for (const auto& run : r.runs) {
    json jr{{"response", run.response}, {"correct", run.correct}};
    if (!run.verdict.empty()) jr["verdict"] = run.verdict;
    runs.push_back(std::move(jr));
  }
  j["runs"] = std::move(runs);
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

NecessityRecord necessity_from_json(const json& j) {
  NecessityRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<std::string>();
  r.n = j.at("n").get<int>();
  r.complete = j.value("complete", true);
  r.param_runs = j.at("params").at("N").get<std::size_t>();
  r.param_temperature = j.at("params").at("T").get<double>();
  for (const auto& jr : j.at("runs")) r.runs.push_back({jr.at("response").get<std::string>(), jr.at("correct").get<bool>(),
                                                        jr.value("verdict", "")});
  r.note = j.value("note", "");
  if (r.complete) {
    if (r.runs.size() != r.param_runs) throw std::invalid_argument("record '" + r.sample_id + "' run count differs from N");
    if (r.n != necessity_from_runs(r.runs)) throw std::invalid_argument("record '" + r.sample_id + "' label disagrees with runs");
  }
  return r;
}

void save_necessity(const std::vector<NecessityRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  io::write_atomic(path, io::to_jsonl(rows));
}

std::vector<NecessityRecord> load_necessity(const std::filesystem::path& path) {
  std::vector<NecessityRecord> out;
  io::for_each_jsonl(path, [&](const json& row, std::size_t line) {
    try {
      out.push_back(necessity_from_json(row));
    } catch (const std::invalid_argument& e) {
      throw io::FormatError(e.what(), line);
    }
  });
  return out;
}

}  // namespace toolgap
