#include "toolgap/arith.hpp"

#include <array>
#include <string>
#include <unordered_set>

namespace toolgap::arith {

namespace {

constexpr std::array<FamilyInfo, kFamilyCount> kFamilies{{
    {ProblemFamily::SingleStepArithmetic, "SingleStepArithmetic", 8, FamilyGroup::Easy},
    {ProblemFamily::TwoStepArithmetic, "TwoStepArithmetic", 5, FamilyGroup::Easy},
    {ProblemFamily::SmallModulo, "SmallModulo", 5, FamilyGroup::Easy},
    {ProblemFamily::NegativeSubtraction, "NegativeSubtraction", 7, FamilyGroup::LargerShort},
    {ProblemFamily::FourDigitAdditionSubtraction, "FourDigitAdditionSubtraction", 6, FamilyGroup::LargerShort},
    {ProblemFamily::TwoDigitMultiplication, "TwoDigitMultiplication", 9, FamilyGroup::LargerShort},
    {ProblemFamily::ThreeByTwoMultiplication, "ThreeByTwoMultiplication", 9, FamilyGroup::LargerShort},
    {ProblemFamily::ThreeByThreeMultiplication, "ThreeByThreeMultiplication", 7, FamilyGroup::LargerShort},
    {ProblemFamily::PrecedenceChain, "PrecedenceChain", 12, FamilyGroup::MultiStep},
    {ProblemFamily::OneDigitAdditionSubtractionChain, "OneDigitAdditionSubtractionChain", 11, FamilyGroup::MultiStep},
    {ProblemFamily::SmallAdditionSubtractionChain, "SmallAdditionSubtractionChain", 10, FamilyGroup::MultiStep},
    {ProblemFamily::ParenthesizedExpression, "ParenthesizedExpression", 6, FamilyGroup::MultiStep},
    {ProblemFamily::MultiplicationChain, "MultiplicationChain", 5, FamilyGroup::MultiStep},
}};

consteval int share_sum() {
  int s = 0;
  for (const auto& f : kFamilies) s += f.share_percent;
  return s;
}
static_assert(share_sum() == 100);

std::string num(std::int64_t v) { return std::to_string(v); }

char plus_minus(RandomSource& rng) { return rng.uniform_int(0, 1) == 0 ? '+' : '-'; }

char plus_minus_times(RandomSource& rng) {
  switch (rng.uniform_int(0, 2)) {
    case 0: return '+';
    case 1: return '-';
    default: return '*';
  }
}

// "a op b op c ..." from parallel operand/operator lists.
std::string chain(const std::vector<std::int64_t>& operands, const std::vector<char>& ops) {
  std::string out = num(operands[0]);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    out += ' ';
    out += ops[i];
    out += ' ';
    out += num(operands[i + 1]);
  }
  return out;
}

std::string sample_text(ProblemFamily family, RandomSource& rng) {
  switch (family) {
    case ProblemFamily::SingleStepArithmetic: {
      const auto a = rng.uniform_int(1, 99);
      const auto b = rng.uniform_int(1, 99);
      const char op = plus_minus(rng);
      return chain({a, b}, {op});
    }
    case ProblemFamily::TwoStepArithmetic: {
      const auto a = rng.uniform_int(1, 99);
      const auto b = rng.uniform_int(1, 99);
      const auto c = rng.uniform_int(1, 99);
      if (rng.uniform01() < 0.5) return chain({a, b, c}, {'+', '-'});
      return chain({a, b, c}, {'-', '+'});
    }
    case ProblemFamily::SmallModulo: {
      const auto a = rng.uniform_int(100, 999);
      const auto b = rng.uniform_int(3, 19);
      return chain({a, b}, {'%'});
    }
    case ProblemFamily::NegativeSubtraction: {
      std::int64_t a = 0;
      std::int64_t b = 0;
      if (rng.uniform01() < 0.55) {
        a = rng.uniform_int(100, 500);
        b = rng.uniform_int(a + 10, a + 250);
      } else {
        a = rng.uniform_int(1000, 5000);
        b = rng.uniform_int(a + 100, a + 3000);
      }
      return chain({a, b}, {'-'});
    }
    case ProblemFamily::FourDigitAdditionSubtraction: {
      const auto a = rng.uniform_int(1000, 9999);
      const auto b = rng.uniform_int(1000, 9999);
      return chain({a, b}, {rng.uniform01() < 0.6 ? '+' : '-'});
    }
    case ProblemFamily::TwoDigitMultiplication: {
      const bool small = rng.uniform01() < 0.45;
      const std::int64_t lo = small ? 15 : 30;
      const std::int64_t hi = small ? 50 : 99;
      const auto a = rng.uniform_int(lo, hi);
      const auto b = rng.uniform_int(lo, hi);
      return chain({a, b}, {'*'});
    }
    case ProblemFamily::ThreeByTwoMultiplication: {
      const auto a = rng.uniform_int(100, 999);
      const auto b = rng.uniform_int(10, 99);
      return chain({a, b}, {'*'});
    }
    case ProblemFamily::ThreeByThreeMultiplication: {
      const auto a = rng.uniform_int(100, 999);
      const auto b = rng.uniform_int(100, 999);
      return chain({a, b}, {'*'});
    }
    case ProblemFamily::PrecedenceChain: {
      std::vector<std::int64_t> operands(5);
      for (auto& v : operands) v = rng.uniform_int(10, 999);
      std::vector<char> ops(4);
      for (auto& op : ops) op = plus_minus_times(rng);
      return chain(operands, ops);
    }
    case ProblemFamily::OneDigitAdditionSubtractionChain: {
      const auto n = rng.uniform01() < 0.4 ? rng.uniform_int(16, 22) : rng.uniform_int(29, 39);
      std::vector<std::int64_t> operands(static_cast<std::size_t>(n));
      for (auto& v : operands) v = rng.uniform_int(1, 9);
      std::vector<char> ops(operands.size() - 1);
      for (auto& op : ops) op = rng.uniform01() < 0.53 ? '+' : '-';
      return chain(operands, ops);
    }
    case ProblemFamily::SmallAdditionSubtractionChain: {
      const auto n = rng.uniform_int(21, 27);
      std::vector<std::int64_t> operands(static_cast<std::size_t>(n));
      for (auto& v : operands) v = rng.uniform_int(1, 30);
      std::vector<char> ops(operands.size() - 1);
      for (auto& op : ops) op = plus_minus(rng);
      return chain(operands, ops);
    }
    case ProblemFamily::ParenthesizedExpression: {
      const auto a = rng.uniform_int(10, 99);
      const auto b = rng.uniform_int(10, 99);
      const auto c = rng.uniform_int(10, 99);
      const auto d = rng.uniform_int(10, 99);
      return "(" + num(a) + " + " + num(b) + ") * (" + num(c) + " - " + num(d) + ")";
    }
    case ProblemFamily::MultiplicationChain: {
      std::vector<std::int64_t> operands(5);
      for (auto& v : operands) v = rng.uniform_int(10, 99);
      return chain(operands, {'+', '*', '-', '*'});
    }
  }
  throw std::invalid_argument("unknown problem family");
}

// Recursive-descent evaluator.
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '%') factor)*
//   factor := '-' factor | integer | '(' expr ')'
class Evaluator {
 public:
  explicit Evaluator(std::string_view text) : text_(text) {}

  std::int64_t run() {
    const auto v = expr();
    skip_space();
    if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
    return v;
  }

 private:
  enum class Op { None, Add, Sub, Mul, Mod, Open, Close };

  void skip_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
                                   text_[pos_] == '\r'))
      ++pos_;
  }

  // Peeks the next operator token and returns its byte length.
  std::pair<Op, std::size_t> peek_op() {
    skip_space();
    if (pos_ >= text_.size()) return {Op::None, 0};
    const std::string_view rest = text_.substr(pos_);
    switch (rest[0]) {
      case '+': return {Op::Add, 1};
      case '-': return {Op::Sub, 1};
      case '*': return {Op::Mul, 1};
      case '%': return {Op::Mod, 1};
      case '(': return {Op::Open, 1};
      case ')': return {Op::Close, 1};
      default: break;
    }
    if (rest.starts_with("\xC3\x97")) return {Op::Mul, 2};      // ×
    if (rest.starts_with("\xE2\x88\x92")) return {Op::Sub, 3};  // −
    return {Op::None, 0};
  }

  std::int64_t expr() {
    auto acc = term();
    for (;;) {
      const auto [op, len] = peek_op();
      if (op != Op::Add && op != Op::Sub) return acc;
      const auto at = pos_;
      pos_ += len;
      const auto rhs = term();
      std::int64_t out = 0;
      const bool overflow = op == Op::Add ? __builtin_add_overflow(acc, rhs, &out)
                                          : __builtin_sub_overflow(acc, rhs, &out);
      if (overflow) throw ParseError("integer overflow", at);
      acc = out;
    }
  }

  std::int64_t term() {
    auto acc = factor();
    for (;;) {
      const auto [op, len] = peek_op();
      if (op != Op::Mul && op != Op::Mod) return acc;
      const auto at = pos_;
      pos_ += len;
      const auto rhs = factor();
      if (op == Op::Mul) {
        std::int64_t out = 0;
        if (__builtin_mul_overflow(acc, rhs, &out)) throw ParseError("integer overflow", at);
        acc = out;
      } else {
        if (rhs <= 0 || acc < 0) throw ParseError("modulo requires a non-negative dividend and positive divisor", at);
        acc %= rhs;
      }
    }
  }

  std::int64_t factor() {
    const auto [op, len] = peek_op();
    if (op == Op::Sub) {
      const auto at = pos_;
      pos_ += len;
      const auto v = factor();
      if (v == INT64_MIN) throw ParseError("integer overflow", at);
      return -v;
    }
    if (op == Op::Open) {
      pos_ += len;
      const auto v = expr();
      const auto [close, close_len] = peek_op();
      if (close != Op::Close) throw ParseError("expected ')'", pos_);
      pos_ += close_len;
      return v;
    }
    if (pos_ >= text_.size()) throw ParseError("unexpected end of expression", pos_);
    if (text_[pos_] < '0' || text_[pos_] > '9') throw ParseError("expected a number", pos_);
    const auto start = pos_;
    std::int64_t v = 0;
    while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') {
      if (__builtin_mul_overflow(v, 10, &v) || __builtin_add_overflow(v, text_[pos_] - '0', &v))
        throw ParseError("integer literal too large", start);
      ++pos_;
    }
    return v;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::span<const FamilyInfo> families() { return kFamilies; }

const FamilyInfo& info(ProblemFamily family) {
  const auto idx = static_cast<std::size_t>(family);
  if (idx >= kFamilies.size()) throw std::invalid_argument("unknown problem family");
  return kFamilies[idx];
}

std::string_view name(ProblemFamily family) { return info(family).name; }

ProblemFamily family_from_name(std::string_view name) {
  for (const auto& f : kFamilies)
    if (f.name == name) return f.family;
  throw std::invalid_argument("unknown problem family '" + std::string(name) + "'");
}

Expression sample_family(ProblemFamily family, RandomSource& rng) {
  auto text = sample_text(family, rng);
  const auto value = evaluate(text);
  return {std::move(text), family, value};
}

Expression sample_family(std::string_view family_name, RandomSource& rng) {
  return sample_family(family_from_name(family_name), rng);
}

std::vector<std::size_t> family_counts(std::size_t total) {
  std::vector<std::size_t> counts;
  counts.reserve(kFamilies.size());
  for (const auto& f : kFamilies) {
    const auto scaled = total * static_cast<std::size_t>(f.share_percent);
    if (scaled % 100 != 0)
      throw std::invalid_argument("total " + std::to_string(total) + " does not split into whole counts: " +
                                  std::string(f.name) + " share " + std::to_string(f.share_percent) +
                                  "% gives " + std::to_string(static_cast<double>(scaled) / 100.0) +
                                  " samples (total must be a multiple of 100)");
    counts.push_back(scaled / 100);
  }
  return counts;
}

std::vector<Expression> generate_corpus(std::uint64_t seed, std::size_t total) {
  const auto counts = family_counts(total);
  Rng rng(seed);
  std::vector<Expression> out;
  out.reserve(total);
  std::unordered_set<std::string> seen;
  seen.reserve(total * 2);
  for (std::size_t f = 0; f < kFamilies.size(); ++f) {
    std::size_t produced = 0;
    std::size_t rejected = 0;
    while (produced < counts[f]) {
      auto e = sample_family(kFamilies[f].family, rng);
      if (!seen.insert(e.text).second) {
        // Every family's support is far larger than its count; a long run of
        // duplicates means the sampler is broken.
        if (++rejected > 1'000'000)
          throw std::runtime_error("cannot draw enough distinct " + std::string(kFamilies[f].name) + " expressions");
        continue;
      }
      out.push_back(std::move(e));
      ++produced;
    }
  }
  return out;
}

std::int64_t evaluate(std::string_view text) { return Evaluator(text).run(); }

}  // namespace toolgap::arith
