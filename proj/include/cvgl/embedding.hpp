#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace cvgl {

/// A dense f32 feature vector. Stored unnormalized; callers normalize when they
/// need cosine geometry.
using EmbeddingVector = std::vector<float>;

/// Image id -> embedding, all of one dimension. Iteration order is ascending id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) fail(ErrorCode::DimMismatch, "embedding dim must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(const std::string& id) const { return entries_.contains(id); }

  void insert(std::string id, EmbeddingVector values) {
    if (values.size() != dim_) {
      fail(ErrorCode::DimMismatch, "'" + id + "' has dim " + std::to_string(values.size()) + ", table dim is " +
                                       std::to_string(dim_));
    }
    for (float x : values) {
      if (!std::isfinite(x)) fail(ErrorCode::NonFiniteParam, "non-finite component in '" + id + "'");
    }
    if (!entries_.emplace(id, std::move(values)).second) fail(ErrorCode::DuplicateId, "duplicate embedding id '" + id + "'");
  }

  const EmbeddingVector& at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) fail(ErrorCode::MissingEmbedding, "no embedding for '" + id + "'");
    return it->second;
  }

  const std::map<std::string, EmbeddingVector>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  bool operator==(const EmbeddingTable&) const = default;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, EmbeddingVector> entries_;
};

inline double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

inline EmbeddingVector l2_normalize(std::span<const float> v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::ZeroVector, "cannot normalize a zero or non-finite vector");
  EmbeddingVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

/// RGB image with float samples in [0, 1], row-major, channels interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  static constexpr std::size_t channels = 3;

  float at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data[(row * width + col) * channels + ch];
  }
};

inline void check_image(const Image& image) {
  if (image.width == 0 || image.height == 0) fail(ErrorCode::BadImage, "image has zero extent");
  if (image.data.size() != image.width * image.height * Image::channels) {
    fail(ErrorCode::BadImage, "pixel buffer length does not match width*height*3");
  }
  for (float x : image.data) {
    if (!(x >= 0.0f && x <= 1.0f)) fail(ErrorCode::BadImage, "pixel value outside [0, 1]");
  }
}

inline constexpr std::size_t kDefaultGrid = 8;

/// Frozen stand-in feature extractor: per-cell channel means on a g x g grid.
///
/// Cell (r, c) spans rows [floor(r*H/g), floor((r+1)*H/g)) and the analogous
/// column range. Output layout is channel-major: index = ch*g*g + r*g + c.
/// The result is L2-normalized; an all-black image raises BadImage.
inline EmbeddingVector toy_embed(const Image& image, std::size_t grid = kDefaultGrid) {
  check_image(image);
  if (grid == 0 || grid > image.width || grid > image.height) {
    fail(ErrorCode::GridTooLarge, "grid " + std::to_string(grid) + " does not fit a " + std::to_string(image.width) + "x" +
                                      std::to_string(image.height) + " image");
  }
  const std::size_t cells = grid * grid;
  std::vector<double> features(Image::channels * cells, 0.0);
  for (std::size_t r = 0; r < grid; ++r) {
    const std::size_t row0 = r * image.height / grid;
    const std::size_t row1 = (r + 1) * image.height / grid;
    for (std::size_t c = 0; c < grid; ++c) {
      const std::size_t col0 = c * image.width / grid;
      const std::size_t col1 = (c + 1) * image.width / grid;
      const double count = static_cast<double>((row1 - row0) * (col1 - col0));
      for (std::size_t ch = 0; ch < Image::channels; ++ch) {
        double sum = 0.0;
        for (std::size_t y = row0; y < row1; ++y) {
          for (std::size_t x = col0; x < col1; ++x) sum += image.at(y, x, ch);
        }
        features[ch * cells + r * grid + c] = sum / count;
      }
    }
  }
  double norm = 0.0;
  for (double f : features) norm += f * f;
  norm = std::sqrt(norm);
  if (norm == 0.0) fail(ErrorCode::BadImage, "image is all black; its embedding cannot be normalized");
  EmbeddingVector out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) out[i] = static_cast<float>(features[i] / norm);
  return out;
}

}  // namespace cvgl
