#pragma once

// Binary hidden-state dump ("HSD1").
//
//   bytes 0..3   "HSD1"
//   bytes 4..7   header length H, uint32 little-endian
//   next H       UTF-8 JSON header:
//                {model, dim, n_layers, positions: [-20..-1], dtype: "f32",
//                 sample_ids: [...], decision_included: bool, ...}
//   body         per sample, n_layers x 20 x dim float32 LE
//                (layer-major, then position, then dimension)
//   trailer      when decision_included: per sample (p_tool, p_best_nontool)
//                as two float32 LE, in sample order, after the whole body
//
// Body length is exactly samples x n_layers x 20 x dim x 4 bytes. Extra
// header keys are preserved. Writers pad the header with spaces so the body
// starts 4-byte aligned; the reader also accepts unaligned files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "toolgap/backend.hpp"

namespace toolgap {

inline constexpr std::size_t kPositions = 20;

/// Position index 0..19 <-> token offset -20..-1.
constexpr int offset_of(std::size_t position_index) { return static_cast<int>(position_index) - 20; }
constexpr std::size_t position_index_of(int offset) { return static_cast<std::size_t>(offset + 20); }

struct DumpHeader {
  std::string model;
  std::size_t dim = 0;
  std::size_t n_layers = 0;
  std::vector<std::string> sample_ids;
  bool decision_included = false;
  /// Any further header keys, kept verbatim.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  std::size_t floats_per_sample() const { return n_layers * kPositions * dim; }
};

class DumpFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Read-only view of a dump file. The body is memory-mapped when aligned,
/// otherwise copied into memory.
class HiddenStateDump {
 public:
  static HiddenStateDump open(const std::filesystem::path& path);

  HiddenStateDump(HiddenStateDump&&) noexcept;
  HiddenStateDump& operator=(HiddenStateDump&&) noexcept;
  ~HiddenStateDump();

  const DumpHeader& header() const { return header_; }
  std::size_t samples() const { return header_.sample_ids.size(); }
  std::size_t layers() const { return header_.n_layers; }
  std::size_t dim() const { return header_.dim; }

  std::optional<std::size_t> index_of(const std::string& sample_id) const;

  /// Whole tensor of one sample, n_layers x 20 x dim.
  std::span<const float> tensor(std::size_t sample) const;
  /// Hidden vector at (layer, position index 0..19).
  std::span<const float> vector(std::size_t sample, std::size_t layer, std::size_t position) const;
  std::optional<Decision> decision(std::size_t sample) const;

 private:
  HiddenStateDump() = default;

  DumpHeader header_;
  std::unordered_map<std::string, std::size_t> index_;
  struct Mapping;
  std::unique_ptr<Mapping> mapping_;
  const float* body_ = nullptr;
  std::vector<float> owned_body_;
  std::vector<Decision> decisions_;
};

/// Writes a dump atomically. `body` holds all samples back to back in
/// header.sample_ids order; `decisions` must have one entry per sample when
/// header.decision_included, and be empty otherwise.
void write_dump(const std::filesystem::path& path, const DumpHeader& header, std::span<const float> body,
                std::span<const Decision> decisions = {});

}  // namespace toolgap
