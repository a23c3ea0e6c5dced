#pragma once

// Linear probes for necessity ("cognition") and tool-call action over the
// (token position x layer) grid of hidden states, scored by held-out MCC,
// plus the cosine geometry between the two probe directions.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/dump.hpp"
#include "toolgap/metrics.hpp"

namespace toolgap {

enum class ProbeTarget { Cognition, Action };

std::string_view to_string(ProbeTarget t);
ProbeTarget probe_target_from_string(std::string_view s);

enum class Execution { Serial, Parallel };

/// Grid coordinate: token offset -20..-1 and layer index.
struct GridCell {
  int offset = -1;
  std::size_t layer = 0;

  bool operator==(const GridCell&) const = default;
};

/// Row-major K x d features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// Features of the given dump samples at one grid cell.
FeatureMatrix gather(const HiddenStateDump& dump, std::span<const std::size_t> samples, GridCell cell);

struct ProbeHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 200;
  /// Stop once the loss has improved by less than min_delta for `patience`
  /// consecutive epochs.
  std::size_t patience = 10;
  double min_delta = 1e-6;
  double test_fraction = 0.3;
  std::uint64_t split_seed = 0;
  bool standardize = true;
  /// Gradient kernel used inside one probe fit.
  Execution kernel = Execution::Serial;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified split: within each class round(test_fraction x class size)
/// indices go to test, chosen by a seeded shuffle. Both lists are sorted.
Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

class DegenerateLabels : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ProbeResult {
  ProbeTarget target = ProbeTarget::Cognition;
  GridCell cell;
  /// Weight in standardized feature space; `mean` and `scale` are the
  /// training-split transform (identity when standardization is off).
  std::vector<double> weight;
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> scale;
  MccResult train_mcc;
  MccResult test_mcc;
  std::uint64_t split_seed = 0;
  std::size_t epochs_run = 0;
  /// Full-batch training loss per epoch.
  std::vector<double> loss_history;

  /// Hyperplane normal in the raw hidden-state space (weight / scale).
  std::vector<double> raw_direction() const;
  double logit(std::span<const float> hidden) const;
  /// sigmoid(logit).
  double confidence(std::span<const float> hidden) const;
};

/// Fits sigmoid(w.h + b) to 0/1 labels by full-batch Adam on mean binary
/// cross-entropy. Requires K >= 20, finite features, and both classes in the
/// training split; throws DegenerateLabels / std::invalid_argument otherwise.
ProbeResult train_probe(const FeatureMatrix& features, std::span<const int> labels, const Split& split,
                        const ProbeHyper& hyper, ProbeTarget target = ProbeTarget::Cognition, GridCell cell = {});
/// Convenience overload computing the stratified split from hyper.split_seed.
ProbeResult train_probe(const FeatureMatrix& features, std::span<const int> labels, const ProbeHyper& hyper,
                        ProbeTarget target = ProbeTarget::Cognition, GridCell cell = {});

/// layers x 20 values; row = layer, column = position index (offset -20..-1).
struct PositionGrid {
  std::string kind;  // "cognition", "action" or "cosine"
  std::size_t layers = 0;
  std::vector<double> values;
  /// Cells whose value is undefined (MCC marginal zero, zero-norm weight).
  std::vector<bool> flagged;

  PositionGrid() = default;
  PositionGrid(std::string kind, std::size_t layers);
  double& at(std::size_t layer, std::size_t position) { return values[layer * kPositions + position]; }
  double at(std::size_t layer, std::size_t position) const { return values[layer * kPositions + position]; }
  double at(GridCell c) const { return at(c.layer, position_index_of(c.offset)); }
};

inline std::size_t cell_index(GridCell c) { return c.layer * kPositions + position_index_of(c.offset); }
inline GridCell cell_at(std::size_t index) {
  return {offset_of(index % kPositions), index / kPositions};
}

class MissingGrids : public std::runtime_error {
 public:
  explicit MissingGrids(std::vector<std::string> ids);
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

struct SweepOptions {
  bool allow_partial = false;
  /// How grid cells are scheduled; Parallel fits cells concurrently with OpenMP.
  Execution cells = Execution::Parallel;
};

struct SweepResult {
  PositionGrid grid;
  std::vector<ProbeResult> probes;  // indexed by cell_index
  std::vector<std::string> sample_ids;
  Split split;
  std::vector<std::string> missing;
};

/// One probe per (offset, layer) cell, all sharing one train/test split.
/// Labeled samples absent from the dump throw MissingGrids unless
/// allow_partial, in which case they are skipped and listed.
SweepResult sweep_grid(const HiddenStateDump& dump, const std::map<std::string, int>& labels, ProbeTarget target,
                       const ProbeHyper& hyper, const SweepOptions& options = {});

/// cos(w_c, w_a) per cell over raw-space directions. Both vectors must cover
/// the same cells; zero-norm cells are flagged with value 0.
PositionGrid cosine_grid(std::span<const ProbeResult> cognition, std::span<const ProbeResult> action);

std::optional<double> cosine(std::span<const double> a, std::span<const double> b);

nlohmann::ordered_json to_json(const ProbeResult& p);
ProbeResult probe_from_json(const nlohmann::ordered_json& j);
void save_probes(std::span<const ProbeResult> probes, std::size_t layers, const std::filesystem::path& path);
std::vector<ProbeResult> load_probes(const std::filesystem::path& path, std::size_t* layers = nullptr);

nlohmann::ordered_json to_json(const PositionGrid& g);
PositionGrid grid_from_json(const nlohmann::ordered_json& j);
/// Header "layer,-20,...,-1", one row per layer; flagged cells are empty.
std::string grid_csv(const PositionGrid& g);
/// Static heatmap: rows = layers (top to bottom), columns = offsets.
std::string grid_svg(const PositionGrid& g, double lo, double hi, std::string_view title);

}  // namespace toolgap
