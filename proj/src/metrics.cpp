#include "toolgap/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace toolgap {

Confusion confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("prediction and truth lengths differ");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t)
      ++c.tp;
    else if (!p && !t)
      ++c.tn;
    else if (p)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

MccResult mcc(std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
  const auto a = static_cast<double>(tp + fp);
  const auto b = static_cast<double>(tp + fn);
  const auto c = static_cast<double>(tn + fp);
  const auto d = static_cast<double>(tn + fn);
  if (a == 0 || b == 0 || c == 0 || d == 0) return {0.0, true};
  const double num = static_cast<double>(tp) * static_cast<double>(tn) - static_cast<double>(fp) * static_cast<double>(fn);
  // sqrt of each pair keeps the product in range for large counts.
  return {num / (std::sqrt(a * b) * std::sqrt(c * d)), false};
}

std::uint64_t percent_tenths(std::uint64_t count, std::uint64_t total) {
  if (total == 0) throw std::invalid_argument("percentage of an empty total");
  return (count * 2000 + total) / (2 * total);
}

std::string format_tenths(std::uint64_t tenths) {
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

}  // namespace toolgap
