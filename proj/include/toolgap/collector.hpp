#pragma once

// Greedy tool-call behaviour with tools exposed, the four necessity x action
// categories, P(call), and the two-stage verbal self-assessment protocol.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/backend.hpp"
#include "toolgap/corpus.hpp"
#include "toolgap/labeler.hpp"
#include "toolgap/metrics.hpp"

namespace toolgap {

/// p_tool / (p_tool + p_best_nontool). Empty when both are zero; throws
/// std::invalid_argument for inputs outside [0, 1].
std::optional<double> p_call(double p_tool, double p_best_nontool);

struct BehaviorRecord {
  std::string sample_id;
  std::string model_id;
  /// A tool call happened at any decision point of the capped loop.
  bool called = false;
  /// The first decision position emitted a tool call.
  bool first_called = false;
  std::optional<Decision> decision;
  std::optional<double> p_call;
  std::vector<Message> transcript;
  std::string final_answer;
  std::size_t tool_rounds = 0;
  bool complete = true;
  std::string note;

  bool operator==(const BehaviorRecord&) const = default;
};

struct CollectParams {
  std::size_t max_tool_rounds = 3;
  std::string system_prompt;
  bool capture_decision = true;
  RetryPolicy retry;
};

/// Runs the greedy tool loop: request with tools, execute any tool call and
/// feed the result back, until a plain answer or the round cap.
BehaviorRecord collect_behavior(Backend& backend, const Sample& sample, std::span<const ToolHandler> tools,
                                std::string_view model_id, const CollectParams& params = {});

std::vector<BehaviorRecord> collect_corpus(Backend& backend, const Corpus& corpus, std::span<const ToolHandler> tools,
                                           std::string_view model_id, const CollectParams& params, unsigned jobs = 1);

enum class Category { NecessaryCalled, NecessaryNotCalled, UnnecessaryCalled, UnnecessaryNotCalled };

std::string_view to_string(Category c);  // "N-C", "N-NC", "UN-C", "UN-NC"

Category classify(int n, bool called);

struct CategoryCounts {
  std::uint64_t n_c = 0;
  std::uint64_t n_nc = 0;
  std::uint64_t un_c = 0;
  std::uint64_t un_nc = 0;

  std::uint64_t total() const { return n_c + n_nc + un_c + un_nc; }
  /// (N-NC + UN-C) / total.
  double mismatch_rate() const;
  /// Table-style mismatch percentage in tenths: the sum of the rounded
  /// N-NC and UN-C percentages, so a printed row adds up.
  std::uint64_t mismatch_pct_tenths() const;
  bool operator==(const CategoryCounts&) const = default;
};

/// Throws std::invalid_argument on empty input.
CategoryCounts aggregate(std::span<const Category> categories);

struct Classified {
  std::vector<std::pair<std::string, Category>> categories;  // necessity order
  std::vector<std::string> unclassifiable;                   // missing or incomplete counterpart
};

Classified classify_records(std::span<const NecessityRecord> necessity, std::span<const BehaviorRecord> behavior);

/// "438 (11.0%)".
std::string format_cell(std::uint64_t count, std::uint64_t total);

inline constexpr std::string_view kCategoryCsvHeader =
    "model,domain,N-C,N-NC,UN-C,UN-NC,mismatch_pct,N-C_pct,N-NC_pct,UN-C_pct,UN-NC_pct";
std::string category_csv_row(std::string_view model, std::string_view domain, const CategoryCounts& counts);

json to_json(const BehaviorRecord& r);
BehaviorRecord behavior_from_json(const json& j);
void save_behavior(const std::vector<BehaviorRecord>& records, const std::filesystem::path& path);
std::vector<BehaviorRecord> load_behavior(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Verbal self-assessment

inline constexpr std::string_view kVerbalAssessmentPrompt =
    "Before solving it, decide whether it is necessary to invoke an external tool to answer the request above. "
    "Answer only with 'yes' or 'no'.";
inline constexpr std::string_view kVerbalFollowupPrompt = "Now answer the original user request.";

/// Case-insensitive leading word after stripping punctuation: yes -> true,
/// no -> false, anything else -> empty.
std::optional<bool> parse_yes_no(std::string_view reply);

struct VerbalRecord {
  std::string sample_id;
  std::string model_id;
  std::string reply;
  /// Empty when the stage-one reply was not a yes/no answer.
  std::optional<bool> verbal_necessary;
  bool called = false;
  bool changed_vs_direct = false;
  std::vector<Message> transcript;
  bool complete = true;
  std::string note;

  bool operator==(const VerbalRecord&) const = default;
};

struct VerbalParams {
  std::string assessment_prompt = std::string(kVerbalAssessmentPrompt);
  std::string followup_prompt = std::string(kVerbalFollowupPrompt);
  CollectParams collect;
};

/// Stage one asks for yes/no; stage two asks for the answer with the
/// stage-one exchange in context and runs the normal tool loop. `direct`
/// is the direct-prompt record for the same sample.
VerbalRecord verbalized_protocol(Backend& backend, const Sample& sample, std::span<const ToolHandler> tools,
                                 std::string_view model_id, const BehaviorRecord* direct, const VerbalParams& params = {});

struct VerbalMetrics {
  MccResult mcc;
  double cog_exe_mismatch_rate = 0.0;
  double changed_rate = 0.0;
  std::size_t joined = 0;
  std::size_t invalid = 0;
};

/// Joins by sample id over valid verbal records with a complete necessity
/// record. When `direct` is non-empty the changed rate is recomputed against
/// it (samples without a direct record are dropped from the join); otherwise
/// the stored changed_vs_direct flags are used. Throws
/// std::invalid_argument when the join is empty.
VerbalMetrics verbal_metrics(std::span<const VerbalRecord> records, std::span<const NecessityRecord> necessity,
                             std::span<const BehaviorRecord> direct = {});

json to_json(const VerbalRecord& r);
VerbalRecord verbal_from_json(const json& j);
void save_verbal(const std::vector<VerbalRecord>& records, const std::filesystem::path& path);
std::vector<VerbalRecord> load_verbal(const std::filesystem::path& path);

}  // namespace toolgap
