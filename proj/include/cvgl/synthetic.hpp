#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "embedding.hpp"
#include "ppm.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "trainer.hpp"

namespace cvgl::synthetic {

/// Embedding-space stand-in for a three-view dataset.
///
/// Each location owns an anchor direction; anchors are orthonormal. A street
/// sample is A(anchor + noise), the satellite sample is B(anchor + noise) with
/// A and B independent Gaussian distortions, and a drone sample is a random
/// convex mix of a fresh street-like and satellite-like sample.
struct Options {
  std::size_t locations = 32;
  std::size_t dim = 192;
  std::size_t street_per_location = 64;
  std::size_t drone_per_location = 6;
  std::size_t queries_per_location = 4;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

struct Dataset {
  Manifest train;          // locations with street, satellite and drone refs
  Manifest test;           // same locations, held-out street queries
  ViewTables tables;       // features for every train ref
  EmbeddingTable queries;  // features for every test street ref
  EmbeddingTable gallery;  // satellite features (shared by train and test)
};

inline std::string location_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "L%04zu", i);
  return buf;
}

namespace detail {

inline std::vector<std::vector<double>> orthonormal_anchors(std::size_t count, std::size_t dim, Xoshiro256& rng) {
  if (count > dim) fail(ErrorCode::Usage, "more anchors than dimensions");
  std::vector<std::vector<double>> anchors;
  while (anchors.size() < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& a : anchors) {
      const double proj = dot(v, a);
      for (std::size_t k = 0; k < dim; ++k) v[k] -= proj * a[k];
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    anchors.push_back(std::move(v));
  }
  return anchors;
}

inline Matrix gaussian_map(std::size_t dim, Xoshiro256& rng) {
  Matrix m(dim, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : m.data) x = rng.normal() * scale;
  return m;
}

inline std::vector<double> noisy(const std::vector<double>& anchor, double sigma, Xoshiro256& rng) {
  std::vector<double> out(anchor);
  const double per_dim = sigma / std::sqrt(static_cast<double>(anchor.size()));
  for (auto& x : out) x += rng.normal() * per_dim;
  return out;
}

inline std::vector<double> apply(const Matrix& m, const std::vector<double>& x) {
  std::vector<double> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), x);
  return out;
}

inline EmbeddingVector to_f32(const std::vector<double>& x) { return {x.begin(), x.end()}; }

}  // namespace detail

inline Dataset generate(const Options& opt) {
  Xoshiro256 rng(opt.seed);
  const auto anchors = detail::orthonormal_anchors(opt.locations, opt.dim, rng);
  const Matrix street_map = detail::gaussian_map(opt.dim, rng);
  const Matrix sat_map = detail::gaussian_map(opt.dim, rng);

  Dataset ds;
  ds.train.split = Split::Train;
  ds.test.split = Split::Test;
  ds.tables = {EmbeddingTable(opt.dim), EmbeddingTable(opt.dim), EmbeddingTable(opt.dim)};
  ds.queries = EmbeddingTable(opt.dim);
  ds.gallery = EmbeddingTable(opt.dim);

  for (std::size_t l = 0; l < opt.locations; ++l) {
    const auto id = location_id(l);
    const auto& anchor = anchors[l];
    LocationRecord train_loc{id, {}, {}, {}};
    LocationRecord test_loc{id, {}, {}, {}};

    const std::string sat_ref = "satellite/" + id;
    auto sat = detail::apply(sat_map, detail::noisy(anchor, opt.noise, rng));
    ds.tables.satellite.insert(sat_ref, detail::to_f32(sat));
    ds.gallery.insert(sat_ref, detail::to_f32(sat));
    train_loc.satellite.push_back(sat_ref);
    test_loc.satellite.push_back(sat_ref);

    for (std::size_t s = 0; s < opt.street_per_location; ++s) {
      const auto ref = "street/" + id + "_" + std::to_string(s);
      ds.tables.street.insert(ref, detail::to_f32(detail::apply(street_map, detail::noisy(anchor, opt.noise, rng))));
      train_loc.street.push_back(ref);
    }
    for (std::size_t d = 0; d < opt.drone_per_location; ++d) {
      const auto ref = "drone/" + id + "_" + std::to_string(d);
      const auto a = detail::apply(street_map, detail::noisy(anchor, opt.noise, rng));
      const auto b = detail::apply(sat_map, detail::noisy(anchor, opt.noise, rng));
      const double t = rng.uniform(0.2, 0.8);
      std::vector<double> mix(opt.dim);
      for (std::size_t k = 0; k < opt.dim; ++k) mix[k] = t * a[k] + (1.0 - t) * b[k];
      ds.tables.drone.insert(ref, detail::to_f32(mix));
      train_loc.drone.push_back(ref);
    }
    for (std::size_t q = 0; q < opt.queries_per_location; ++q) {
      const auto ref = "query/" + id + "_" + std::to_string(q);
      ds.queries.insert(ref, detail::to_f32(detail::apply(street_map, detail::noisy(anchor, opt.noise, rng))));
      test_loc.street.push_back(ref);
    }
    ds.train.locations.push_back(std::move(train_loc));
    ds.test.locations.push_back(std::move(test_loc));
  }
  return ds;
}

struct ImageOptions {
  std::size_t locations = 24;
  std::size_t size = 32;  // square images, pixels
  std::size_t cells = 8;  // pattern resolution
  std::size_t street_per_location = 6;
  std::size_t drone_per_location = 3;
  std::size_t queries_per_location = 2;
  double noise = 0.3;
  double distinctiveness = 0.06;  // spread of each location around a shared pattern
  std::uint64_t seed = 7;
};

/// Writes a small three-view PPM dataset plus train/test manifests and a
/// pipeline config (demo.json) under `root`.
///
/// Every location perturbs one shared colour pattern. Street images tint it warm and
/// add noise; the satellite image is the transposed pattern with a cool tint;
/// drone images blend the two. Test manifests reuse the locations with
/// held-out street images.
inline void write_image_dataset(const std::filesystem::path& root, const ImageOptions& opt) {
  namespace fs = std::filesystem;
  Xoshiro256 rng(opt.seed);
  for (const char* sub : {"street", "satellite", "drone", "query"}) fs::create_directories(root / sub);

  const std::size_t px = opt.size / opt.cells;
  if (px == 0) fail(ErrorCode::Usage, "image size must be at least the pattern resolution");
  auto clamp01 = [](double x) { return static_cast<float>(x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x)); };
  auto render = [&](const std::vector<double>& pattern, bool transpose, const double (&tint)[3], double noise) {
    Image img{opt.size, opt.size, std::vector<float>(opt.size * opt.size * 3)};
    for (std::size_t y = 0; y < opt.size; ++y) {
      for (std::size_t x = 0; x < opt.size; ++x) {
        std::size_t cy = std::min(y / px, opt.cells - 1), cx = std::min(x / px, opt.cells - 1);
        if (transpose) std::swap(cy, cx);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double base = pattern[(cy * opt.cells + cx) * 3 + ch] * tint[ch];
          img.data[(y * opt.size + x) * 3 + ch] = clamp01(base + noise * rng.normal());
        }
      }
    }
    return img;
  };
  const double warm[3] = {1.0, 0.85, 0.7};
  const double cool[3] = {0.7, 0.85, 1.0};

  std::vector<double> shared(opt.cells * opt.cells * 3);
  for (auto& v : shared) v = rng.uniform(0.25, 0.75);

  Manifest train, test;
  train.split = Split::Train;
  test.split = Split::Test;
  for (std::size_t l = 0; l < opt.locations; ++l) {
    const auto id = location_id(l);
    std::vector<double> pattern(opt.cells * opt.cells * 3);
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      pattern[i] = shared[i] + rng.uniform(-opt.distinctiveness, opt.distinctiveness);
    }
    LocationRecord tr{id, {}, {}, {}}, te{id, {}, {}, {}};
    const auto sat_ref = "satellite/" + id + ".ppm";
    write_ppm(render(pattern, true, cool, opt.noise * 0.5), root / sat_ref);
    tr.satellite.push_back(sat_ref);
    te.satellite.push_back(sat_ref);
    for (std::size_t s = 0; s < opt.street_per_location; ++s) {
      const auto ref = "street/" + id + "_" + std::to_string(s) + ".ppm";
      write_ppm(render(pattern, false, warm, opt.noise), root / ref);
      tr.street.push_back(ref);
    }
    for (std::size_t d = 0; d < opt.drone_per_location; ++d) {
      const auto ref = "drone/" + id + "_" + std::to_string(d) + ".ppm";
      const auto a = render(pattern, false, warm, opt.noise);
      const auto b = render(pattern, true, cool, opt.noise);
      const double t = rng.uniform(0.3, 0.7);
      Image mix = a;
      for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = static_cast<float>(t * a.data[i] + (1.0 - t) * b.data[i]);
      write_ppm(mix, root / ref);
      tr.drone.push_back(ref);
    }
    for (std::size_t q = 0; q < opt.queries_per_location; ++q) {
      const auto ref = "query/" + id + "_" + std::to_string(q) + ".ppm";
      write_ppm(render(pattern, false, warm, opt.noise), root / ref);
      te.street.push_back(ref);
    }
    train.locations.push_back(std::move(tr));
    test.locations.push_back(std::move(te));
  }
  save_manifest(train, root / "train.json");
  save_manifest(test, root / "test.json");

  const nlohmann::json config = {
      {"seed", opt.seed},
      {"output_dir", "out"},
      {"data", {{"train_manifest", "train.json"}, {"test_manifest", "test.json"}}},
      {"embed", {{"grid", kDefaultGrid}}},
      {"train", {{"epochs", 30}, {"batch_size", 32}, {"lr", 1e-3}, {"gamma", 0.9}, {"p_drone", 0.3},
                 {"weight_decay", 0.01}, {"d_out", 64}}},
      {"retrieve", {{"k", 10}}},
      {"rerank", {{"endpoint", ""}, {"model", "gemini-2.5-flash"}, {"k", 10}, {"concurrency", 4}, {"timeout_ms", 10000},
                  {"retries", 0}, {"mock", "identity"}}},
      {"eval", {{"ks", {1, 5, 10}}}},
  };
  std::ofstream out(root / "demo.json");
  if (!out) fail(ErrorCode::Io, "cannot write demo config");
  out << config.dump(2) << '\n';
}

}  // namespace cvgl::synthetic
