#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "index.hpp"

namespace cvgl {

/// Query id -> id of the one correct reference.
using GroundTruth = std::map<std::string, std::string>;

struct RecallReport {
  std::size_t n_queries = 0;
  std::vector<std::size_t> ks;           // ascending, unique
  std::map<std::size_t, double> recall;  // K -> fraction
  std::map<std::string, std::optional<std::size_t>> ranks;  // 1-based; nullopt = not found

  bool operator==(const RecallReport&) const = default;
};

/// Street image ref -> first satellite ref of its location, for every query in
/// the manifest.
inline GroundTruth truth_from_manifest(const Manifest& manifest) {
  GroundTruth truth;
  for (const auto& loc : manifest.locations) {
    if (loc.satellite.empty()) continue;
    for (const auto& street : loc.street) truth[street] = loc.satellite.front();
  }
  return truth;
}

inline std::vector<std::size_t> normalize_ks(std::vector<std::size_t> ks) {
  if (ks.empty()) fail(ErrorCode::Usage, "no K values given");
  for (auto k : ks) {
    if (k == 0) fail(ErrorCode::Usage, "K must be positive");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

/// Recall@K: share of queries whose true reference sits at rank <= K. A
/// missing true reference counts as a miss at every K.
inline RecallReport recall_at_k(const std::vector<RankedList>& rankings, const GroundTruth& truth,
                                std::vector<std::size_t> ks) {
  RecallReport report;
  report.ks = normalize_ks(std::move(ks));
  report.n_queries = rankings.size();
  std::map<std::size_t, std::size_t> hits;
  for (const auto& list : rankings) {
    auto it = truth.find(list.query_id);
    if (it == truth.end()) fail(ErrorCode::MissingTruth, "no ground truth for query '" + list.query_id + "'");
    std::optional<std::size_t> rank;
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      if (list.entries[i].id == it->second) {
        rank = i + 1;
        break;
      }
    }
    if (!report.ranks.emplace(list.query_id, rank).second) {
      fail(ErrorCode::DuplicateId, "query '" + list.query_id + "' ranked twice");
    }
    for (auto k : report.ks) {
      if (rank && *rank <= k) ++hits[k];
    }
  }
  for (auto k : report.ks) {
    report.recall[k] = report.n_queries == 0 ? 0.0 : static_cast<double>(hits[k]) / static_cast<double>(report.n_queries);
  }
  return report;
}

inline nlohmann::json to_json(const RecallReport& report) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : report.recall) recall[std::to_string(k)] = v;
  nlohmann::json ranks = nlohmann::json::object();
  for (const auto& [q, r] : report.ranks) ranks[q] = r ? nlohmann::json(*r) : nlohmann::json(nullptr);
  return {{"n_queries", report.n_queries}, {"ks", report.ks}, {"recall", std::move(recall)}, {"ranks", std::move(ranks)}};
}

inline RecallReport report_from_json(const nlohmann::json& doc) {
  RecallReport report;
  try {
    report.n_queries = doc.at("n_queries").get<std::size_t>();
    report.ks = doc.at("ks").get<std::vector<std::size_t>>();
    for (const auto& [k, v] : doc.at("recall").items()) report.recall[std::stoul(k)] = v.get<double>();
    for (const auto& [q, r] : doc.at("ranks").items()) {
      report.ranks[q] = r.is_null() ? std::nullopt : std::optional<std::size_t>(r.get<std::size_t>());
    }
  } catch (const std::exception& e) {
    fail(ErrorCode::ParseError, std::string("report: ") + e.what());
  }
  return report;
}

inline RecallReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open report '" + path.string() + "'");
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, "report '" + path.string() + "': " + e.what());
  }
}

inline GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open truth file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in).get<GroundTruth>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, "truth file '" + path.string() + "': " + e.what());
  }
}

inline void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << nlohmann::json(truth).dump(2) << '\n';
}

/// Fraction -> percentage with two decimals ("0.3021" -> "30.21").
inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

struct Comparison {
  std::string text;
  nlohmann::json json;
};

/// Side-by-side R@K table, one row per named run.
inline Comparison compare_runs(const std::vector<std::pair<std::string, RecallReport>>& runs) {
  if (runs.empty()) fail(ErrorCode::Usage, "nothing to compare");
  const auto& ks = runs.front().second.ks;
  for (const auto& [name, report] : runs) {
    if (report.ks != ks) fail(ErrorCode::KMismatch, "run '" + name + "' reports different K values");
  }
  std::size_t name_width = 3;
  for (const auto& [name, report] : runs) name_width = std::max(name_width, name.size());

  auto pad = [](std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
  };
  Comparison out;
  out.text = pad("Run", name_width);
  for (auto k : ks) out.text += " | " + pad("R@" + std::to_string(k), 6);
  out.text += '\n';
  out.json = {{"ks", ks}, {"rows", nlohmann::json::array()}};
  for (const auto& [name, report] : runs) {
    out.text += pad(name, name_width);
    nlohmann::json cells = nlohmann::json::object();
    for (auto k : ks) {
      const auto cell = percent(report.recall.at(k));
      out.text += " | " + pad(cell, 6);
      cells["R@" + std::to_string(k)] = cell;
    }
    out.text += '\n';
    out.json["rows"].push_back({{"run", name}, {"n_queries", report.n_queries}, {"recall", std::move(cells)}});
  }
  return out;
}

}  // namespace cvgl
