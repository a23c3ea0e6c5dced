#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace toolgap {

/// Source of the two primitive draws every sampler in this project needs.
/// Tests substitute a scripted implementation to pin exact outputs.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  /// Uniform integer on the closed range [lo, hi].
  virtual std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) = 0;
  /// Uniform real on [0, 1).
  virtual double uniform01() = 0;
};

/// Portable seeded generator.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions are implemented here rather than taken from
/// <random>, whose distribution algorithms vary between standard libraries.
///  - uniform_int: rejection sampling on the raw 64-bit output, modulo range.
///  - uniform01:   top 53 bits of one raw output scaled by 2^-53.
class Rng final : public RandomSource {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) override {
    const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(engine_());  // full 64-bit span
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return lo + static_cast<std::int64_t>(x % range);
  }

  double uniform01() override {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Fisher-Yates shuffle driven by uniform_int, so it reproduces across platforms.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace toolgap
