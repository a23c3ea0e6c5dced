#pragma once

// Synthetic arithmetic corpus: the 13 problem families, their fixed sampling
// shares, the per-family samplers, and the exact integer evaluator that
// defines ground truth.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "toolgap/rng.hpp"

namespace toolgap::arith {

enum class ProblemFamily : std::uint8_t {
  SingleStepArithmetic,
  TwoStepArithmetic,
  SmallModulo,
  NegativeSubtraction,
  FourDigitAdditionSubtraction,
  TwoDigitMultiplication,
  ThreeByTwoMultiplication,
  ThreeByThreeMultiplication,
  PrecedenceChain,
  OneDigitAdditionSubtractionChain,
  SmallAdditionSubtractionChain,
  ParenthesizedExpression,
  MultiplicationChain,
};

inline constexpr std::size_t kFamilyCount = 13;

enum class FamilyGroup : std::uint8_t { Easy, LargerShort, MultiStep };

struct FamilyInfo {
  ProblemFamily family;
  std::string_view name;
  /// Share of the corpus in whole percent; the 13 shares sum to 100.
  int share_percent;
  FamilyGroup group;
};

std::span<const FamilyInfo> families();
const FamilyInfo& info(ProblemFamily family);
std::string_view name(ProblemFamily family);
/// Throws std::invalid_argument for an unknown name.
ProblemFamily family_from_name(std::string_view name);

struct Expression {
  std::string text;
  ProblemFamily family;
  std::int64_t value;
};

Expression sample_family(ProblemFamily family, RandomSource& rng);
Expression sample_family(std::string_view family_name, RandomSource& rng);

/// Per-family sample counts for a corpus of `total` expressions, in family
/// order. Throws std::invalid_argument when some share × total is fractional.
std::vector<std::size_t> family_counts(std::size_t total);

/// Deterministic corpus of `total` distinct expressions with exact per-family
/// counts. Families are filled in declaration order; a repeated text is
/// discarded and redrawn.
std::vector<Expression> generate_corpus(std::uint64_t seed, std::size_t total = 4000);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Exact integer value of an expression over integer literals, + - * % and
/// parentheses with the usual precedence (* and % above + and -), all
/// left-associative. "×" is accepted as an alias for "*" and "−" (U+2212)
/// for "-". Throws ParseError on malformed input, modulo by zero, or 64-bit
/// overflow.
std::int64_t evaluate(std::string_view text);

}  // namespace toolgap::arith
