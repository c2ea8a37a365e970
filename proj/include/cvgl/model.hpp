#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "binary_io.hpp"
#include "embedding.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace cvgl {

/// Affine map d_in -> d_out; weight is d_out x d_in, row-major.
struct Linear {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : d_in(in), d_out(out), weight(in * out, 0.0), bias(out, 0.0) {}

  bool operator==(const Linear&) const = default;
};

inline const double kInitialLogitScale = std::log(1.0 / 0.07);
inline const double kMaxLogitScale = std::log(100.0);

/// Two projection heads without weight sharing plus a shared, trainable
/// log inverse temperature.
struct ProjectionModel {
  Linear street_head;
  Linear sat_head;
  double logit_scale = kInitialLogitScale;

  std::size_t d_in() const { return street_head.d_in; }
  std::size_t d_out() const { return street_head.d_out; }

  bool operator==(const ProjectionModel&) const = default;
};

/// Fan-in uniform init in [-1/sqrt(d_in), 1/sqrt(d_in)], zero bias. The street
/// head is drawn first, then the satellite head, from one stream.
inline ProjectionModel init_model(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  if (d_in == 0 || d_out == 0) fail(ErrorCode::DimMismatch, "model dimensions must be positive");
  Xoshiro256 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  ProjectionModel model{Linear(d_in, d_out), Linear(d_in, d_out), kInitialLogitScale};
  for (auto* head : {&model.street_head, &model.sat_head}) {
    for (auto& w : head->weight) w = rng.uniform(-bound, bound);
  }
  return model;
}

/// W*x + b in double precision.
inline std::vector<double> apply_linear(const Linear& head, std::span<const float> x) {
  if (x.size() != head.d_in) {
    fail(ErrorCode::DimMismatch, "input dim " + std::to_string(x.size()) + " != head d_in " + std::to_string(head.d_in));
  }
  std::vector<double> z(head.bias);
  for (std::size_t o = 0; o < head.d_out; ++o) {
    const double* w = head.weight.data() + o * head.d_in;
    double sum = 0.0;
    for (std::size_t i = 0; i < head.d_in; ++i) sum += w[i] * x[i];
    z[o] += sum;
  }
  return z;
}

/// Normalized projection of one embedding; ZeroVector if the head maps x to 0.
inline EmbeddingVector forward(const Linear& head, std::span<const float> x) {
  const auto z = apply_linear(head, x);
  double norm = 0.0;
  for (double v : z) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::ZeroVector, "projection is zero or non-finite");
  EmbeddingVector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<float>(z[i] / norm);
  return out;
}

inline EmbeddingTable project_table(const Linear& head, const EmbeddingTable& table) {
  EmbeddingTable out(head.d_out);
  for (const auto& [id, values] : table) out.insert(id, forward(head, values));
  return out;
}

// CVGM checkpoint (little-endian):
//   "CVGM" | version u16 | reserved u16 | d_in u32 | d_out u32
//   W_s (d_out*d_in f32) | b_s (d_out f32) | W_r | b_r | logit_scale f32
inline constexpr std::string_view kModelMagic = "CVGM";
inline constexpr std::uint16_t kModelVersion = 1;

inline void write_model(const ProjectionModel& model, const std::filesystem::path& path) {
  binary::Writer w;
  w.put_bytes(kModelMagic);
  w.put<std::uint16_t>(kModelVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.d_in()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.d_out()));
  for (const auto* head : {&model.street_head, &model.sat_head}) {
    for (double x : head->weight) w.put<float>(static_cast<float>(x));
    for (double x : head->bias) w.put<float>(static_cast<float>(x));
  }
  w.put<float>(static_cast<float>(model.logit_scale));
  w.save(path);
}

inline ProjectionModel read_model(const std::filesystem::path& path) {
  auto r = binary::Reader::from_file(path);
  if (r.remaining() < 4 || r.get_bytes(4) != kModelMagic) fail(ErrorCode::BadMagic, "not a CVGM model file");
  const auto version = r.get<std::uint16_t>();
  if (version != kModelVersion) fail(ErrorCode::UnsupportedVersion, "CVGM version " + std::to_string(version));
  r.get<std::uint16_t>();
  const auto d_in = r.get<std::uint32_t>();
  const auto d_out = r.get<std::uint32_t>();
  if (d_in == 0 || d_out == 0) fail(ErrorCode::DimMismatch, "CVGM header declares a zero dimension");
  ProjectionModel model{Linear(d_in, d_out), Linear(d_in, d_out), 0.0};
  for (auto* head : {&model.street_head, &model.sat_head}) {
    for (auto& x : head->weight) x = r.get<float>();
    for (auto& x : head->bias) x = r.get<float>();
  }
  model.logit_scale = r.get<float>();
  if (r.remaining() != 0) fail(ErrorCode::DimMismatch, "trailing bytes in model file");
  return model;
}

}  // namespace cvgl
