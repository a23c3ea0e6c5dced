#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/arith.hpp"

namespace toolgap {

enum class Domain { Arithmetic, Factual };

std::string_view to_string(Domain d);
Domain domain_from_string(std::string_view s);

struct Sample {
  std::string id;
  Domain domain = Domain::Arithmetic;
  /// Text shown to the model.
  std::string prompt;
  /// Bare query: the expression for arithmetic, the question for factual.
  std::string question;
  /// One integer string for arithmetic; the reference answer set for factual.
  std::vector<std::string> answers;
  std::optional<std::string> family;
  /// Multiple-choice form only.
  std::vector<std::string> choices;
  std::optional<std::size_t> correct_choice;

  bool operator==(const Sample&) const = default;
};

struct Provenance {
  std::string source;  // "seed:<n>" or a source file name
  std::string generator_version;

  bool operator==(const Provenance&) const = default;
};

struct Corpus {
  Domain domain = Domain::Arithmetic;
  std::vector<Sample> samples;
  Provenance provenance;

  const Sample* find(std::string_view id) const;
  bool operator==(const Corpus&) const = default;
};

inline constexpr std::string_view kGeneratorVersion = "toolgap-arith/1";
inline constexpr std::string_view kDefaultArithmeticTemplate =
    "{expression}\nCompute the value of the expression above. Give the final answer as a single integer.";

/// Replaces "{expression}" in the template.
std::string render_arithmetic_prompt(std::string_view tmpl, std::string_view expression);

/// Arithmetic corpus with ids "arith-0000" ... in generation order.
Corpus make_arithmetic_corpus(std::uint64_t seed, std::size_t total = 4000,
                              std::string_view prompt_template = kDefaultArithmeticTemplate);

/// Checks the per-sample and corpus invariants; throws std::invalid_argument.
void validate(const Corpus& corpus);

/// Writes `path` (JSONL, one sample per line) and `path.meta.json`
/// (domain and provenance), both atomically.
void save(const Corpus& corpus, const std::filesystem::path& path);

struct LoadReport {
  std::vector<std::string> warnings;
};

/// Inverse of save. Malformed lines throw io::FormatError with the line
/// number; a duplicate id throws naming the id. An empty file loads as an
/// empty corpus and adds a warning.
Corpus load(const std::filesystem::path& path, LoadReport* report = nullptr);

enum class FactualForm { MultipleChoice, Generative };

FactualForm factual_form_from_string(std::string_view s);

struct IngestReport {
  std::size_t rows = 0;
  std::size_t skipped = 0;
  std::vector<std::size_t> skipped_rows;  // 1-based data row numbers
};

/// Reads the published TruthfulQA CSV (columns located by header name:
/// "Question", "Best Answer", "Correct Answers", "Incorrect Answers";
/// answer lists separated by ';'). Ids are "tqa-<row>" with the 1-based
/// data row number, so they are stable for identical source bytes. Rows
/// missing the question or answers are skipped and counted. Throws
/// std::runtime_error("no samples ingested") when nothing survives.
Corpus ingest_factual(const std::filesystem::path& source, FactualForm form, IngestReport* report = nullptr);

/// Letter label for a choice index: 0 -> "A".
std::string choice_letter(std::size_t index);

}  // namespace toolgap
