#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "index.hpp"

namespace cvgl {

/// One line of a rankings file. The rerank stage fills the optional fields.
struct RankingRecord {
  RankedList list;
  std::optional<bool> used_vlm;
  std::optional<std::string> justification;
  std::optional<std::string> failure;

  bool operator==(const RankingRecord&) const = default;
};

inline nlohmann::json to_json(const RankingRecord& rec) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& e : rec.list.entries) candidates.push_back({{"id", e.id}, {"score", e.score}});
  nlohmann::json line = {{"query", rec.list.query_id}, {"candidates", std::move(candidates)}};
  if (rec.used_vlm) {
    line["used_vlm"] = *rec.used_vlm;
    line["justification"] = rec.justification ? nlohmann::json(*rec.justification) : nlohmann::json(nullptr);
    if (rec.failure) line["failure"] = *rec.failure;
  }
  return line;
}

inline RankingRecord ranking_from_json(const nlohmann::json& line) {
  RankingRecord rec;
  try {
    rec.list.query_id = line.at("query").get<std::string>();
    for (const auto& c : line.at("candidates")) rec.list.entries.push_back({c.at("id").get<std::string>(), c.at("score").get<double>()});
    if (line.contains("used_vlm")) rec.used_vlm = line.at("used_vlm").get<bool>();
    if (line.contains("justification") && line.at("justification").is_string()) {
      rec.justification = line.at("justification").get<std::string>();
    }
    if (line.contains("failure")) rec.failure = line.at("failure").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("ranking line: ") + e.what());
  }
  return rec;
}

inline void write_rankings(const std::vector<RankingRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  for (const auto& rec : records) out << to_json(rec).dump() << '\n';
}

inline std::vector<RankingRecord> read_rankings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open rankings file '" + path.string() + "'");
  std::vector<RankingRecord> records;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    try {
      records.push_back(ranking_from_json(nlohmann::json::parse(text)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace cvgl
