#pragma once

// Synthetic model world for end-to-end checks: a declared capability
// boundary (n), a planted cognition bit (z) and a call policy (a) per
// sample, rendered as a mock script plus a hidden-state dump whose
// readout cell encodes z.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "toolgap/collector.hpp"
#include "toolgap/corpus.hpp"
#include "toolgap/diagnose.hpp"
#include "toolgap/dump.hpp"
#include "toolgap/mock_backend.hpp"

namespace toolgap {

struct WorldSpec {
  std::uint64_t seed = 1;
  std::string model = "mock-model";
  std::size_t dim = 16;
  std::size_t layers = 4;
  std::size_t runs = 10;
  double necessary_rate = 0.4;
  /// P(z != n).
  double stage1_error = 0.1;
  /// P(a != z).
  double stage2_error = 0.15;
  /// Share of non-calling samples whose decision probabilities tie exactly.
  double tie_rate = 0.05;
  /// Share of samples whose verbal stage-one reply is not yes/no.
  double verbal_invalid_rate = 0.02;
  /// Samples (taken from the end of the corpus) whose requests always fail.
  std::size_t transport_failures = 0;
  /// Planted signal length along the cell direction, and isotropic noise sd.
  double margin = 2.0;
  double noise = 0.05;
};

/// Cell carrying z (the readout cell) and the cell carrying a.
GridCell cognition_cell(const WorldSpec& spec);
GridCell action_cell(const WorldSpec& spec);

struct WorldSample {
  std::string sample_id;
  int n = 0;
  int z = 0;
  int a = 0;
  bool transport_fail = false;

  bool operator==(const WorldSample&) const = default;
};

struct WorldTruth {
  std::vector<WorldSample> samples;
  /// Over samples without transport failure.
  CategoryCounts categories;
  TraceCounts traces;
  std::size_t ties = 0;
};

struct World {
  WorldSpec spec;
  std::vector<ScriptEntry> script;
  DumpHeader header;
  std::vector<float> body;
  std::vector<Decision> decisions;
  WorldTruth truth;
};

World make_world(const Corpus& corpus, const WorldSpec& spec);

nlohmann::ordered_json to_json(const WorldTruth& truth);

/// Writes script.jsonl, dump.hsd and truth.json into `dir`.
void write_world(const World& world, const std::filesystem::path& dir);

}  // namespace toolgap
