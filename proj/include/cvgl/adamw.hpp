#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "error.hpp"

namespace cvgl {

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moments per parameter tensor, plus the shared step count.
struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam step over a list of parameter tensors.
///
///   m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
///   m_hat = m / (1-b1^t)          v_hat = v / (1-b2^t)
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
///
/// State tensors are sized lazily on the first call.
inline void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                       AdamWState& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) fail(ErrorCode::DimMismatch, "parameter and gradient lists differ in length");
  if (!(cfg.lr > 0.0)) fail(ErrorCode::Usage, "learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) fail(ErrorCode::DimMismatch, "optimizer state does not match parameters");

  const std::uint64_t t = state.step + 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p];
    const auto g = grads[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (g.size() != theta.size() || m.size() != theta.size()) fail(ErrorCode::DimMismatch, "tensor shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i]);
      if (!std::isfinite(theta[i])) fail(ErrorCode::NonFiniteParam, "parameter became non-finite");
    }
  }
  state.step = t;
}

/// Exponential schedule, stepped once per epoch: lr0 * gamma^epoch.
inline double lr_at(std::uint64_t epoch, double lr0, double gamma) {
  return lr0 * std::pow(gamma, static_cast<double>(epoch));
}

}  // namespace cvgl
