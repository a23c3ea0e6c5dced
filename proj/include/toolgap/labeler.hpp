#pragma once

// Model-adaptive tool necessity: a sample is tool-unnecessary for a model
// (n = 0) only when all N no-tool runs at temperature T are graded correct.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/backend.hpp"
#include "toolgap/corpus.hpp"

namespace toolgap {

/// Final integer literal in `response`. Accepts a leading sign (+, -, U+2212)
/// when it is not glued to a preceding digit, and thousands separators in
/// groups of three ("-4,860"). Decimal literals with a non-zero fraction are
/// not integers and are passed over.
std::optional<std::int64_t> last_integer(std::string_view response);

/// True iff the last integer literal of the response equals truth.
bool grade_arithmetic(std::string_view response, std::int64_t truth);

enum class FactualGrading { ChoiceMatch, ReferenceMatch, ExternalJudge };

FactualGrading factual_grading_from_string(std::string_view s);
std::string_view to_string(FactualGrading g);

struct GradeResult {
  /// Empty when the run could not be graded (judge unreachable or unclear).
  std::optional<bool> correct;
  /// Judge reply, verbatim, for external-judge grading.
  std::string verdict;
};

/// Option letter chosen in a multiple-choice response: the first standalone
/// letter token ("B", "(B)", "B." or "Answer: B"), or nullopt.
std::optional<std::size_t> parse_choice(std::string_view response, std::size_t n_choices);

/// Lowercased, punctuation stripped, whitespace collapsed.
std::string normalize_text(std::string_view text);

GradeResult grade_factual(std::string_view response, const Sample& sample, FactualGrading mode,
                          Backend* judge = nullptr, const RetryPolicy& retry = {});

struct GradingConfig {
  FactualGrading factual = FactualGrading::ChoiceMatch;
  Backend* judge = nullptr;
  RetryPolicy retry;
};

GradeResult grade(std::string_view response, const Sample& sample, const GradingConfig& config);

struct RunOutcome {
  std::string response;
  bool correct = false;
  std::string verdict;

  bool operator==(const RunOutcome&) const = default;
};

struct LabelParams {
  std::size_t runs = 10;
  double temperature = 0.7;
  /// Optional system message for the no-tool runs.
  std::string system_prompt;
  RetryPolicy retry;
};

struct NecessityRecord {
  std::string sample_id;
  std::string model_id;
  std::vector<RunOutcome> runs;
  int n = 1;
  std::size_t param_runs = 10;
  double param_temperature = 0.7;
  /// False when some run failed transport or grading; such records are
  /// excluded downstream.
  bool complete = true;
  std::string note;

  /// Appends a run and recomputes n.
  void add_run(RunOutcome run);
  bool operator==(const NecessityRecord&) const = default;
};

/// 0 iff every run is correct (and there is at least one run).
int necessity_from_runs(std::span<const RunOutcome> runs);

NecessityRecord label_necessity(Backend& backend, const Sample& sample, std::string_view model_id,
                                const LabelParams& params, const GradingConfig& grading);

/// Labels every sample, `jobs` at a time; records come back in corpus order.
std::vector<NecessityRecord> label_corpus(Backend& backend, const Corpus& corpus, std::string_view model_id,
                                          const LabelParams& params, const GradingConfig& grading, unsigned jobs = 1);

json to_json(const NecessityRecord& r);
NecessityRecord necessity_from_json(const json& j);
void save_necessity(const std::vector<NecessityRecord>& records, const std::filesystem::path& path);
std::vector<NecessityRecord> load_necessity(const std::filesystem::path& path);

}  // namespace toolgap
