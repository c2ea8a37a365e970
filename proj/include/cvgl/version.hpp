#pragma once

#include <string>

#include "embedding_io.hpp"
#include "model.hpp"

namespace cvgl {

inline constexpr const char* kEngineVersion = "1.0.0";

inline std::string version_string() {
  return std::string("cvgl ") + kEngineVersion + " (embeddings CVGE v" + std::to_string(kEmbeddingVersion) +
         ", model CVGM v" + std::to_string(kModelVersion) + ", rerank contract POST /v1/rerank)";
}

}  // namespace cvgl
