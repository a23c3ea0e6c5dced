#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace toolgap {

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Confusion counts of predictions against truth (both 0/1, same length).
Confusion confusion(std::span<const int> predicted, std::span<const int> truth);

struct MccResult {
  double value = 0.0;
  /// Set when a marginal is zero; value is then 0.
  bool undefined = false;
};

/// Matthews correlation coefficient.
MccResult mcc(std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn);
inline MccResult mcc(const Confusion& c) { return mcc(c.tp, c.tn, c.fp, c.fn); }

/// count / total in tenths of a percent, rounded half up with integer
/// arithmetic (438 / 4000 -> 110, i.e. "11.0").
std::uint64_t percent_tenths(std::uint64_t count, std::uint64_t total);

/// "11.0" from 110.
std::string format_tenths(std::uint64_t tenths);

}  // namespace toolgap
