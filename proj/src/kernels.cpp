#include "toolgap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace toolgap::kernels {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
  return s;
}

// Accumulates loss sum and gradient sums over rows [begin, end).
double accumulate_rows(const Batch& batch, std::span<const double> w, double b, std::size_t begin, std::size_t end,
                       double* grad_w, double& grad_b) {
  const std::size_t d = batch.cols;
  double loss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double* xi = batch.x.data() + i * d;
    const double z = dot(xi, w.data(), d) + b;
    const double y = batch.y[i] ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
    const double r = sigmoid(z) - y;
    for (std::size_t j = 0; j < d; ++j) grad_w[j] += r * xi[j];
    grad_b += r;
  }
  return loss;
}

}  // namespace

double loss_grad_serial(const Batch& batch, std::span<const double> w, double b, std::span<double> grad_w,
                        double& grad_b) {
  std::fill(grad_w.begin(), grad_w.end(), 0.0);
  grad_b = 0.0;
  const double loss = accumulate_rows(batch, w, b, 0, batch.rows, grad_w.data(), grad_b);
  const double inv = 1.0 / static_cast<double>(batch.rows);
  for (auto& g : grad_w) g *= inv;
  grad_b *= inv;
  return loss * inv;
}

double loss_grad_parallel(const Batch& batch, std::span<const double> w, double b, std::span<double> grad_w,
                          double& grad_b) {
  const std::size_t d = batch.cols;
  const std::size_t blocks = (batch.rows + kBlockRows - 1) / kBlockRows;
  // Per block: d gradient entries, then grad_b, then loss.
  std::vector<double> partial(blocks * (d + 2), 0.0);

#pragma omp parallel for schedule(static)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    double* slot = partial.data() + blk * (d + 2);
    const std::size_t begin = blk * kBlockRows;
    const std::size_t end = std::min(batch.rows, begin + kBlockRows);
    slot[d + 1] = accumulate_rows(batch, w, b, begin, end, slot, slot[d]);
  }

  std::fill(grad_w.begin(), grad_w.end(), 0.0);
  grad_b = 0.0;
  double loss = 0.0;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const double* slot = partial.data() + blk * (d + 2);
    for (std::size_t j = 0; j < d; ++j) grad_w[j] += slot[j];
    grad_b += slot[d];
    loss += slot[d + 1];
  }
  const double inv = 1.0 / static_cast<double>(batch.rows);
  for (auto& g : grad_w) g *= inv;
  grad_b *= inv;
  return loss * inv;
}

void logits_serial(const Batch& batch, std::span<const double> w, double b, std::span<double> out) {
  for (std::size_t i = 0; i < batch.rows; ++i) out[i] = dot(batch.x.data() + i * batch.cols, w.data(), batch.cols) + b;
}

void logits_parallel(const Batch& batch, std::span<const double> w, double b, std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < batch.rows; ++i) out[i] = dot(batch.x.data() + i * batch.cols, w.data(), batch.cols) + b;
}

}  // namespace toolgap::kernels
