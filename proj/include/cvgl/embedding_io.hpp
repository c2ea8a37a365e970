#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>

#include "binary_io.hpp"
#include "embedding.hpp"

namespace cvgl {

// CVGE layout (little-endian):
//   "CVGE" | version u16 | reserved u16 | dim u32 | count u64
//   count x { id_len u16 | id bytes (UTF-8) | dim x f32 }
inline constexpr std::string_view kEmbeddingMagic = "CVGE";
inline constexpr std::uint16_t kEmbeddingVersion = 1;

inline std::string encode_embeddings(const EmbeddingTable& table) {
  if (table.dim() == 0) fail(ErrorCode::DimMismatch, "table has no dimension");
  binary::Writer w;
  w.put_bytes(kEmbeddingMagic);
  w.put<std::uint16_t>(kEmbeddingVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.dim()));
  w.put<std::uint64_t>(table.size());
  for (const auto& [id, values] : table) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) fail(ErrorCode::ParseError, "id longer than 65535 bytes");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(id.size()));
    w.put_bytes(id);
    for (float x : values) w.put<float>(x);
  }
  return w.bytes();
}

inline EmbeddingTable decode_embeddings(std::string bytes) {
  binary::Reader r(std::move(bytes));
  if (r.remaining() < 4 || r.get_bytes(4) != kEmbeddingMagic) fail(ErrorCode::BadMagic, "not a CVGE embedding file");
  const auto version = r.get<std::uint16_t>();
  if (version != kEmbeddingVersion) fail(ErrorCode::UnsupportedVersion, "CVGE version " + std::to_string(version));
  r.get<std::uint16_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (dim == 0) fail(ErrorCode::DimMismatch, "CVGE header declares dim 0");
  EmbeddingTable table(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = r.get<std::uint16_t>();
    std::string id = r.get_bytes(id_len);
    EmbeddingVector values(dim);
    for (auto& x : values) x = r.get<float>();
    table.insert(std::move(id), std::move(values));
  }
  if (r.remaining() != 0) fail(ErrorCode::DimMismatch, "trailing bytes after the declared records");
  return table;
}

inline void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  binary::Writer w;
  w.put_bytes(encode_embeddings(table));
  w.save(path);
}

inline EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open embedding file '" + path.string() + "'");
  return decode_embeddings(std::string(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace cvgl
