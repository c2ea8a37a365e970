#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "matrix.hpp"

namespace cvgl {

struct InfoNceResult {
  double loss = 0.0;
  Matrix grad_street;  // d loss / d U
  Matrix grad_ref;     // d loss / d V
  double grad_logit_scale = 0.0;
};

namespace detail {

// Cross-entropy of one logit row against target `label`, optionally smoothed.
// Writes d CE / d logits into `grad`.
inline double cross_entropy(const std::vector<double>& logits, std::size_t label, double smoothing,
                            std::vector<double>& grad) {
  const std::size_t n = logits.size();
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : logits) peak = std::max(peak, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - peak);
  const double lse = peak + std::log(sum);
  const double off = smoothing / static_cast<double>(n);
  double ce = 0.0;
  grad.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double target = (j == label ? 1.0 - smoothing : 0.0) + off;
    if (target != 0.0) ce += target * (lse - logits[j]);
    grad[j] = std::exp(logits[j] - lse) - target;
  }
  return ce;
}

}  // namespace detail

/// Symmetric InfoNCE over a batch of matched rows.
///
/// logits = exp(logit_scale) * U * V^T; row i of U matches row i of V. The loss
/// averages the row-wise (street -> reference) and column-wise
/// (reference -> street) cross-entropies. Gradients are closed-form.
/// Rows must be unit-norm within `unit_tolerance`; pass a negative tolerance to
/// skip that check (finite-difference probes perturb the norms).
inline InfoNceResult info_nce_loss(const Matrix& street, const Matrix& ref, double logit_scale,
                                   double label_smoothing = 0.0, double unit_tolerance = 1e-4) {
  if (street.rows != ref.rows || street.cols != ref.cols) {
    fail(ErrorCode::BatchMismatch, "street batch is " + std::to_string(street.rows) + "x" + std::to_string(street.cols) +
                                       ", reference batch is " + std::to_string(ref.rows) + "x" +
                                       std::to_string(ref.cols));
  }
  const std::size_t n = street.rows;
  if (n == 0) fail(ErrorCode::BatchMismatch, "empty batch");
  if (unit_tolerance >= 0.0) {
    for (const Matrix* m : {&street, &ref}) {
      for (std::size_t i = 0; i < n; ++i) {
        const double norm = std::sqrt(dot(m->row(i), m->row(i)));
        if (std::abs(norm - 1.0) > unit_tolerance) fail(ErrorCode::ZeroVector, "batch row is not unit-norm");
      }
    }
  }

  const double scale = std::exp(logit_scale);
  Matrix logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits(i, j) = scale * dot(street.row(i), ref.row(j));
  }

  // dlogits accumulates 1/(2n) * (softmax - target) from both directions.
  Matrix dlogits(n, n);
  std::vector<double> line(n), grad;
  double row_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) line[j] = logits(i, j);
    row_total += detail::cross_entropy(line, i, label_smoothing, grad);
    for (std::size_t j = 0; j < n; ++j) dlogits(i, j) += grad[j];
  }
  double col_total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) line[i] = logits(i, j);
    col_total += detail::cross_entropy(line, j, label_smoothing, grad);
    for (std::size_t i = 0; i < n; ++i) dlogits(i, j) += grad[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  InfoNceResult out;
  out.loss = 0.5 * (row_total * inv_n + col_total * inv_n);
  if (!std::isfinite(out.loss)) fail(ErrorCode::NonFiniteLoss, "InfoNCE loss is not finite");

  const double half_mean = 0.5 * inv_n;
  for (auto& g : dlogits.data) g *= half_mean;

  const std::size_t d = street.cols;
  out.grad_street = Matrix(n, d);
  out.grad_ref = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = scale * dlogits(i, j);
      if (g == 0.0) continue;
      auto gu = out.grad_street.row(i);
      auto gv = out.grad_ref.row(j);
      const auto u = street.row(i);
      const auto v = ref.row(j);
      for (std::size_t k = 0; k < d; ++k) {
        gu[k] += g * v[k];
        gv[k] += g * u[k];
      }
      out.grad_logit_scale += dlogits(i, j) * logits(i, j);
    }
  }
  return out;
}

}  // namespace cvgl
