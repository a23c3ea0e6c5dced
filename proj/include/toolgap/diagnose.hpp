#pragma once

// Per-sample tracing through necessity (n), cognition readout (z) and action
// (a), the flow and scatter exports built on it, and the capability-boundary
// ordering of samples across models.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/collector.hpp"
#include "toolgap/dump.hpp"
#include "toolgap/labeler.hpp"
#include "toolgap/probes.hpp"

namespace toolgap {

enum class TraceCategory { Aligned, Stage1Only, Stage2Only, Compensating };

std::string_view to_string(TraceCategory c);  // "ALIGNED", "STAGE1_ONLY", ...
TraceCategory trace_category_from_string(std::string_view s);
/// Flow colour used in charts: green, red, orange, purple.
std::string_view color_of(TraceCategory c);

/// Bits are 0/1; anything else throws std::invalid_argument.
TraceCategory trace(int n, int z, int a);

struct Readout {
  int z = 0;
  double confidence = 0.0;
};

/// z = 1 iff sigmoid(w.h + b) >= 0.5. Throws on a dimension mismatch.
Readout cognition_readout(std::span<const float> hidden, const ProbeResult& probe);
/// Reads the probe's own cell from the dump. Throws std::out_of_range when the
/// dump lacks that cell.
Readout cognition_readout(const HiddenStateDump& dump, std::size_t sample, const ProbeResult& probe);

/// The probe at (-1, layers - 1); throws std::invalid_argument when absent.
const ProbeResult& readout_probe(std::span<const ProbeResult> probes, std::size_t layers);

struct DiagnosisRecord {
  std::string sample_id;
  int n = 0;
  int z = 0;
  int a = 0;
  double confidence = 0.0;
  std::optional<double> p_call;
  TraceCategory category = TraceCategory::Aligned;

  bool operator==(const DiagnosisRecord&) const = default;
};

DiagnosisRecord make_record(std::string sample_id, int n, Readout readout, bool called, std::optional<double> p_call);

struct DiagnosisSet {
  std::vector<DiagnosisRecord> records;  // necessity order
  /// Samples without all three bits, with the reason.
  std::vector<std::pair<std::string, std::string>> unclassifiable;
};

/// Joins complete necessity records with complete behaviour records and the
/// dump, reading z with `probe`.
DiagnosisSet diagnose(std::span<const NecessityRecord> necessity, std::span<const BehaviorRecord> behavior,
                      const HiddenStateDump& dump, const ProbeResult& probe);

struct TraceCounts {
  std::uint64_t aligned = 0;
  std::uint64_t stage1_only = 0;
  std::uint64_t stage2_only = 0;
  std::uint64_t compensating = 0;

  std::uint64_t total() const { return aligned + stage1_only + stage2_only + compensating; }
  std::uint64_t get(TraceCategory c) const;
  /// Samples whose action differs from necessity.
  std::uint64_t end_to_end_mismatch() const { return stage1_only + stage2_only; }
  bool operator==(const TraceCounts&) const = default;
};

TraceCounts count_traces(std::span<const DiagnosisRecord> records);

// Sankey node indices.
enum SankeyNode : std::size_t {
  kFactualNecessary,
  kFactualUnnecessary,
  kCognitionNecessary,
  kCognitionUnnecessary,
  kActionCall,
  kActionNoCall,
  kSankeyNodeCount
};

struct SankeyLink {
  std::size_t source = 0;
  std::size_t target = 0;
  std::uint64_t value = 0;
  TraceCategory category = TraceCategory::Aligned;

  bool operator==(const SankeyLink&) const = default;
};

struct SankeyFlows {
  std::vector<std::string> nodes;
  std::vector<SankeyLink> links;  // sorted by (source, target, category)
  TraceCounts totals;

  std::uint64_t inflow(std::size_t node) const;
  std::uint64_t outflow(std::size_t node) const;
};

/// Each record contributes one unit on its Factual->Cognition edge and one on
/// its Cognition->Action edge, both tagged with its category. Throws on empty
/// input or (as an internal check) broken conservation.
SankeyFlows sankey_export(std::span<const DiagnosisRecord> records);

nlohmann::ordered_json to_json(const SankeyFlows& flows);

struct ScatterPoint {
  std::string sample_id;
  double confidence = 0.0;
  double p_call = 0.0;
  TraceCategory category = TraceCategory::Aligned;
};

struct Scatter {
  std::vector<ScatterPoint> points;  // sorted by sample_id
  std::size_t skipped = 0;           // records without p_call
};

Scatter confidence_scatter(std::span<const DiagnosisRecord> records);

/// "sample_id,confidence,p_call,category,color".
std::string scatter_csv(const Scatter& scatter);

/// Stable recursive partition: samples correct (1) under model 0 come first,
/// then each block is split by model 1, and so on. Throws on a ragged matrix.
std::vector<std::size_t> boundary_order(const std::vector<std::vector<int>>& labels);

/// Stripe CSV: header "model,<ids in order>", one 0/1 row per model.
std::string boundary_stripe_csv(const std::vector<std::string>& models, const std::vector<std::string>& sample_ids,
                                const std::vector<std::vector<int>>& labels, std::span<const std::size_t> order);

nlohmann::ordered_json to_json(const DiagnosisRecord& r);
DiagnosisRecord diagnosis_from_json(const nlohmann::ordered_json& j);
void save_diagnosis(const DiagnosisSet& set, const std::filesystem::path& path);
DiagnosisSet load_diagnosis(const std::filesystem::path& path);

}  // namespace toolgap
