#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "embedding.hpp"

namespace cvgl {

// Binary PPM (P6, maxval <= 255) is the only decoded format; anything richer
// goes through an external exporter that writes CVGE directly.

inline Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P6") fail(ErrorCode::BadImage, "not a binary PPM (P6) image");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(next_token());
    height = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    fail(ErrorCode::BadImage, "malformed PPM header");
  }
  if (maxval == 0 || maxval > 255) fail(ErrorCode::BadImage, "PPM maxval must be in 1..255");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = width * height * Image::channels;
  if (width == 0 || height == 0 || pos + n > bytes.size()) fail(ErrorCode::BadImage, "PPM raster truncated");
  Image image{width, height, std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    image.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
  }
  return image;
}

inline std::string encode_ppm(const Image& image) {
  check_image(image);
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (float x : image.data) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0f))));
  return out;
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open image '" + path.string() + "'");
  return decode_ppm(std::string(std::istreambuf_iterator<char>(in), {}));
}

inline void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write image '" + path.string() + "'");
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace cvgl
