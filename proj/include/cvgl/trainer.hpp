#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adamw.hpp"
#include "dataset.hpp"
#include "embedding.hpp"
#include "loss.hpp"
#include "model.hpp"

namespace cvgl {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr0 = 1e-5;
  double gamma = 0.9;
  double p_drone = 0.3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double label_smoothing = 0.0;
  std::uint64_t seed = 0;
  std::size_t d_out = 128;

  void validate() const {
    if (batch_size < 2) fail(ErrorCode::Usage, "batch_size must be at least 2");
    if (!(lr0 > 0.0)) fail(ErrorCode::Usage, "lr0 must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorCode::Usage, "gamma must lie in (0, 1]");
    if (!(p_drone >= 0.0 && p_drone <= 1.0)) fail(ErrorCode::Usage, "p_drone must lie in [0, 1]");
    if (!(weight_decay >= 0.0)) fail(ErrorCode::Usage, "weight_decay must be non-negative");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail(ErrorCode::Usage, "label_smoothing must lie in [0, 1)");
    if (d_out == 0) fail(ErrorCode::Usage, "d_out must be positive");
  }
};

/// Frozen base features per view, keyed by image ref.
struct ViewTables {
  EmbeddingTable street;
  EmbeddingTable satellite;
  EmbeddingTable drone;
};

struct TrainResult {
  ProjectionModel model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

// Stream tags under the run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kSamplerStream = 2;

namespace detail {

struct HeadPass {
  Matrix input;   // n x d_in
  Matrix output;  // n x d_out, unit rows
  std::vector<double> norms;
};

inline HeadPass run_head(const Linear& head, const std::vector<const EmbeddingVector*>& rows) {
  HeadPass pass{Matrix(rows.size(), head.d_in), Matrix(rows.size(), head.d_out), std::vector<double>(rows.size())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i]->begin(), rows[i]->end(), pass.input.row(i).begin());
    const auto z = apply_linear(head, *rows[i]);
    double norm = 0.0;
    for (double v : z) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::DivergedTraining, "projection collapsed to zero");
    pass.norms[i] = norm;
    auto out = pass.output.row(i);
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] / norm;
  }
  return pass;
}

// Back-propagates d loss / d u through u = z/|z| and z = W x + b.
inline void backward_head(const HeadPass& pass, const Matrix& grad_out, std::vector<double>& grad_w,
                          std::vector<double>& grad_b) {
  const std::size_t d_out = pass.output.cols;
  const std::size_t d_in = pass.input.cols;
  std::vector<double> dz(d_out);
  for (std::size_t i = 0; i < pass.output.rows; ++i) {
    const auto u = pass.output.row(i);
    const auto du = grad_out.row(i);
    const double radial = dot(u, du);
    for (std::size_t k = 0; k < d_out; ++k) dz[k] = (du[k] - u[k] * radial) / pass.norms[i];
    const auto x = pass.input.row(i);
    for (std::size_t k = 0; k < d_out; ++k) {
      grad_b[k] += dz[k];
      double* gw = grad_w.data() + k * d_in;
      for (std::size_t j = 0; j < d_in; ++j) gw[j] += dz[k] * x[j];
    }
  }
}

}  // namespace detail

struct BatchGradients {
  double loss = 0.0;
  std::vector<double> street_w, street_b, sat_w, sat_b;
  double logit_scale = 0.0;
};

/// Loss and full-model gradients for one batch of (street, reference) features.
inline BatchGradients batch_gradients(const ProjectionModel& model, const std::vector<const EmbeddingVector*>& street,
                                      const std::vector<const EmbeddingVector*>& ref, double label_smoothing = 0.0) {
  const auto s = detail::run_head(model.street_head, street);
  const auto r = detail::run_head(model.sat_head, ref);
  const auto nce = info_nce_loss(s.output, r.output, model.logit_scale, label_smoothing, -1.0);
  BatchGradients g;
  g.loss = nce.loss;
  g.street_w.assign(model.street_head.weight.size(), 0.0);
  g.street_b.assign(model.street_head.bias.size(), 0.0);
  g.sat_w.assign(model.sat_head.weight.size(), 0.0);
  g.sat_b.assign(model.sat_head.bias.size(), 0.0);
  detail::backward_head(s, nce.grad_street, g.street_w, g.street_b);
  detail::backward_head(r, nce.grad_ref, g.sat_w, g.sat_b);
  g.logit_scale = nce.grad_logit_scale;
  return g;
}

/// Applies one AdamW step to every model parameter and clamps the logit scale.
inline void apply_step(ProjectionModel& model, const BatchGradients& g, AdamWState& state, const AdamWConfig& cfg) {
  std::span<double> scale(&model.logit_scale, 1);
  std::span<const double> scale_grad(&g.logit_scale, 1);
  const std::span<double> params[] = {model.street_head.weight, model.street_head.bias, model.sat_head.weight,
                                      model.sat_head.bias, scale};
  const std::span<const double> grads[] = {g.street_w, g.street_b, g.sat_w, g.sat_b, scale_grad};
  adamw_step(params, grads, state, cfg);
  model.logit_scale = std::min(model.logit_scale, kMaxLogitScale);
}

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss, double lr)>;

/// Trains both projection heads with symmetric InfoNCE.
///
/// Each epoch draws a fresh shuffled pair list (drone substitution at
/// `p_drone`), cuts it into consecutive batches of `batch_size` and keeps the
/// final short batch unless it holds a single pair. The learning rate follows
/// lr_at(epoch) and is constant within an epoch.
inline TrainResult train(const Manifest& manifest, const ViewTables& tables, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  const std::size_t d_in = tables.street.dim();
  if (d_in == 0) fail(ErrorCode::MissingEmbedding, "street embedding table is empty");
  if (tables.satellite.dim() != d_in) fail(ErrorCode::DimMismatch, "street and satellite tables differ in dim");
  const bool uses_drone = config.p_drone > 0.0;
  if (uses_drone && !tables.drone.empty() && tables.drone.dim() != d_in) {
    fail(ErrorCode::DimMismatch, "drone table dim differs from street table");
  }
  for (const auto& loc : manifest.locations) {
    for (const auto& ref : loc.street) tables.street.at(ref);
    if (!loc.street.empty() && !loc.satellite.empty()) tables.satellite.at(loc.satellite.front());
    if (uses_drone) {
      for (const auto& ref : loc.drone) tables.drone.at(ref);
    }
  }

  TrainResult result{init_model(d_in, config.d_out, derive_seed(config.seed, kInitStream)), {}};
  AdamWState state;
  const std::uint64_t sampler_root = derive_seed(config.seed, kSamplerStream);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const AdamWConfig opt{lr_at(epoch, config.lr0, config.gamma), config.beta1, config.beta2, config.eps,
                          config.weight_decay};
    const auto pairs = sample_pairs(manifest, config.p_drone, sampler_root, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, pairs.size());
      if (end - start < 2) break;
      std::vector<const EmbeddingVector*> street, ref;
      for (std::size_t i = start; i < end; ++i) {
        street.push_back(&tables.street.at(pairs[i].query_image));
        ref.push_back(pairs[i].substituted ? &tables.drone.at(pairs[i].reference_image)
                                           : &tables.satellite.at(pairs[i].reference_image));
      }
      BatchGradients g;
      try {
        g = batch_gradients(result.model, street, ref, config.label_smoothing);
        apply_step(result.model, g, state, opt);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::NonFiniteParam) {
          fail(ErrorCode::DivergedTraining, "epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
      loss_sum += g.loss;
      ++batches;
    }
    const double mean = batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches);
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean, opt.lr);
  }
  return result;
}

}  // namespace cvgl
