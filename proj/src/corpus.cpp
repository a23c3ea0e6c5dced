#include "toolgap/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "toolgap/csv.hpp"
#include "toolgap/io.hpp"
#include "toolgap/rng.hpp"

namespace toolgap {

using io::json;

std::string_view to_string(Domain d) { return d == Domain::Arithmetic ? "arithmetic" : "factual"; }

Domain domain_from_string(std::string_view s) {
  if (s == "arithmetic") return Domain::Arithmetic;
  if (s == "factual") return Domain::Factual;
  throw std::invalid_argument("unknown domain '" + std::string(s) + "'");
}

const Sample* Corpus::find(std::string_view id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

std::string render_arithmetic_prompt(std::string_view tmpl, std::string_view expression) {
  std::string out(tmpl);
  constexpr std::string_view key = "{expression}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + expression.size()))
    out.replace(pos, key.size(), expression);
  return out;
}

Corpus make_arithmetic_corpus(std::uint64_t seed, std::size_t total, std::string_view prompt_template) {
  const auto exprs = arith::generate_corpus(seed, total);
  Corpus c;
  c.domain = Domain::Arithmetic;
  c.provenance = {"seed:" + std::to_string(seed), std::string(kGeneratorVersion)};
  c.samples.reserve(exprs.size());
  const int width = exprs.size() > 9999 ? static_cast<int>(std::to_string(exprs.size() - 1).size()) : 4;
  for (std::size_t i = 0; i < exprs.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "arith-%0*zu", width, i);
    Sample s;
    s.id = id;
    s.domain = Domain::Arithmetic;
    s.question = exprs[i].text;
    s.prompt = render_arithmetic_prompt(prompt_template, exprs[i].text);
    s.answers = {std::to_string(exprs[i].value)};
    s.family = std::string(arith::name(exprs[i].family));
    c.samples.push_back(std::move(s));
  }
  return c;
}

void validate(const Corpus& corpus) {
  std::unordered_set<std::string_view> ids;
  for (const auto& s : corpus.samples) {
    if (s.id.empty()) throw std::invalid_argument("sample with empty id");
    if (!ids.insert(s.id).second) throw std::invalid_argument("duplicate sample id '" + s.id + "'");
    if (s.domain != corpus.domain) throw std::invalid_argument("sample '" + s.id + "' has the wrong domain");
    if (s.domain == Domain::Arithmetic) {
      if (s.answers.size() != 1) throw std::invalid_argument("arithmetic sample '" + s.id + "' needs exactly one answer");
      std::size_t used = 0;
      try {
        (void)std::stoll(s.answers[0], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.answers[0].size())
        throw std::invalid_argument("arithmetic sample '" + s.id + "' answer is not an integer");
    } else {
      if (s.answers.empty()) throw std::invalid_argument("factual sample '" + s.id + "' has no reference answers");
      if (s.correct_choice && *s.correct_choice >= s.choices.size())
        throw std::invalid_argument("factual sample '" + s.id + "' correct_choice out of range");
    }
  }
}

namespace {

json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["domain"] = to_string(s.domain);
  if (s.family) j["family"] = *s.family;
  j["prompt"] = s.prompt;
  j["question"] = s.question;
  if (s.domain == Domain::Arithmetic)
    j["answer"] = s.answers.at(0);
  else
    j["answer"] = s.answers;
  if (!s.choices.empty()) j["choices"] = s.choices;
  if (s.correct_choice) j["correct_choice"] = *s.correct_choice;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.domain = domain_from_string(j.at("domain").get<std::string>());
  if (j.contains("family")) s.family = j["family"].get<std::string>();
  s.prompt = j.at("prompt").get<std::string>();
  s.question = j.value("question", s.prompt);
  const auto& a = j.at("answer");
  if (a.is_array())
    s.answers = a.get<std::vector<std::string>>();
  else
    s.answers = {a.get<std::string>()};
  if (j.contains("choices")) s.choices = j["choices"].get<std::vector<std::string>>();
  if (j.contains("correct_choice")) s.correct_choice = j["correct_choice"].get<std::size_t>();
  return s;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".meta.json";
  return p;
}

}  // namespace

void save(const Corpus& corpus, const std::filesystem::path& path) {
  validate(corpus);
  std::vector<json> rows;
  rows.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) rows.push_back(sample_to_json(s));
  io::write_atomic(path, io::to_jsonl(rows));
  json meta;
  meta["domain"] = to_string(corpus.domain);
  meta["source"] = corpus.provenance.source;
  meta["generator_version"] = corpus.provenance.generator_version;
  meta["count"] = corpus.samples.size();
  io::write_atomic(meta_path(path), meta.dump(2) + "\n");
}

Corpus load(const std::filesystem::path& path, LoadReport* report) {
  Corpus c;
  std::optional<Domain> declared;
  if (std::filesystem::exists(meta_path(path))) {
    const auto meta = json::parse(io::read_file(meta_path(path)));
    declared = domain_from_string(meta.at("domain").get<std::string>());
    c.provenance.source = meta.value("source", "");
    c.provenance.generator_version = meta.value("generator_version", "");
  }
  std::unordered_set<std::string> ids;
  io::for_each_jsonl(path, [&](const json& row, std::size_t line) {
    auto s = sample_from_json(row);
    if (!ids.insert(s.id).second) throw io::FormatError("duplicate sample id '" + s.id + "'", line);
    if (!declared) declared = s.domain;
    if (s.domain != *declared) throw io::FormatError("sample '" + s.id + "' does not match corpus domain", line);
    c.samples.push_back(std::move(s));
  });
  c.domain = declared.value_or(Domain::Arithmetic);
  if (c.samples.empty() && report) report->warnings.push_back(path.string() + ": corpus file has no samples");
  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(path.filename().string() + ": " + e.what());
  }
  return c;
}

FactualForm factual_form_from_string(std::string_view s) {
  if (s == "multiple-choice" || s == "mc") return FactualForm::MultipleChoice;
  if (s == "generative" || s == "gen") return FactualForm::Generative;
  throw std::invalid_argument("unknown factual form '" + std::string(s) + "'");
}

std::string choice_letter(std::size_t index) {
  std::string out;
  do {
    out.insert(out.begin(), static_cast<char>('A' + index % 26));
    index = index / 26;
  } while (index-- > 0);
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_answers(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(';', start), s.size());
    auto part = trim(s.substr(start, end - start));
    if (!part.empty()) out.push_back(std::move(part));
    start = end + 1;
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Corpus ingest_factual(const std::filesystem::path& source, FactualForm form, IngestReport* report) {
  const auto rows = csv::parse(io::read_file(source));
  if (rows.empty()) throw std::runtime_error("no samples ingested: " + source.string() + " is empty");

  const auto& header = rows.front();
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto q_col = column("Question");
  const auto best_col = column("Best Answer");
  const auto correct_col = column("Correct Answers");
  const auto incorrect_col = column("Incorrect Answers");
  if (!q_col || !correct_col || !incorrect_col)
    throw std::runtime_error(source.string() + ": missing Question / Correct Answers / Incorrect Answers columns");

  IngestReport local;
  Corpus c;
  c.domain = Domain::Factual;
  c.provenance = {source.filename().string(),
                  form == FactualForm::MultipleChoice ? "toolgap-truthfulqa-mc/1" : "toolgap-truthfulqa-gen/1"};
  auto cell = [](const std::vector<std::string>& row, std::optional<std::size_t> col) -> std::string {
    return col && *col < row.size() ? trim(row[*col]) : std::string{};
  };

  for (std::size_t r = 1; r < rows.size(); ++r) {
    ++local.rows;
    const auto& row = rows[r];
    const auto question = cell(row, q_col);
    auto correct = split_answers(cell(row, correct_col));
    const auto incorrect = split_answers(cell(row, incorrect_col));
    auto best = cell(row, best_col);
    if (best.empty() && !correct.empty()) best = correct.front();
    if (question.empty() || correct.empty() || incorrect.empty()) {
      ++local.skipped;
      local.skipped_rows.push_back(r);
      continue;
    }
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "tqa-%04zu", r);
    s.id = id;
    s.domain = Domain::Factual;
    s.question = question;
    s.answers = correct;
    if (std::find(s.answers.begin(), s.answers.end(), best) == s.answers.end()) s.answers.insert(s.answers.begin(), best);
    if (form == FactualForm::MultipleChoice) {
      // One best answer among the incorrect ones, order fixed by the question text.
      std::vector<std::string> options{best};
      options.insert(options.end(), incorrect.begin(), incorrect.end());
      std::vector<std::size_t> order(options.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(fnv1a(question));
      rng.shuffle(std::span<std::size_t>(order));
      s.prompt = question + "\n";
      for (std::size_t i = 0; i < order.size(); ++i) {
        s.choices.push_back(options[order[i]]);
        if (order[i] == 0) s.correct_choice = i;
        s.prompt += choice_letter(i) + ". " + options[order[i]] + "\n";
      }
      s.prompt += "Answer with the letter of the correct option.";
    } else {
      s.prompt = question;
    }
    c.samples.push_back(std::move(s));
  }
  if (report) *report = local;
  if (c.samples.empty()) throw std::runtime_error("no samples ingested from " + source.string());
  return c;
}

}  // namespace toolgap
