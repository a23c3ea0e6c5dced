#pragma once

// Logistic-regression inner loops. Every kernel has a plain serial reference
// and an OpenMP version; the tests hold them to each other and the
// benchmark compares their speed.

#include <cstddef>
#include <span>

namespace toolgap::kernels {

/// Row-major K x d design matrix with 0/1 labels.
struct Batch {
  std::span<const double> x;
  std::span<const int> y;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Mean binary cross-entropy of sigmoid(x w + b) against y, and its
/// gradient with respect to (w, b). `grad_w` has length cols.
double loss_grad_serial(const Batch& batch, std::span<const double> w, double b, std::span<double> grad_w,
                        double& grad_b);

/// Same quantity computed over fixed-size row blocks in parallel, with the
/// block partials summed in block order, so the result does not depend on
/// the thread count.
double loss_grad_parallel(const Batch& batch, std::span<const double> w, double b, std::span<double> grad_w,
                          double& grad_b);

/// Logits x w + b for every row.
void logits_serial(const Batch& batch, std::span<const double> w, double b, std::span<double> out);
void logits_parallel(const Batch& batch, std::span<const double> w, double b, std::span<double> out);

/// Rows per block in loss_grad_parallel.
inline constexpr std::size_t kBlockRows = 256;

/// Numerically stable log(1 + exp(z)).
double softplus(double z);
double sigmoid(double z);

}  // namespace toolgap::kernels
