#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace cvgl {

enum class Split { Train, Test };

/// One geo-tagged building and the images captured of it.
struct LocationRecord {
  std::string id;
  std::vector<std::string> street;
  std::vector<std::string> satellite;
  std::vector<std::string> drone;

  bool operator==(const LocationRecord&) const = default;
};

struct Manifest {
  Split split = Split::Train;
  std::vector<LocationRecord> locations;
  // Directory image refs are resolved against; empty for in-memory manifests.
  std::filesystem::path base_dir;

  std::size_t size() const { return locations.size(); }

  std::filesystem::path resolve(const std::string& ref) const { return base_dir / ref; }
};

struct TrainingPair {
  std::string query_image;
  std::string reference_image;
  std::string location_id;
  bool substituted = false;

  bool operator==(const TrainingPair&) const = default;
};

inline std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

/// Checks the manifest invariants; throws DuplicateId, EmptyManifest or ParseError.
inline void validate(const Manifest& manifest) {
  if (manifest.locations.empty()) fail(ErrorCode::EmptyManifest, "manifest has no locations");
  std::set<std::string> seen;
  for (const auto& loc : manifest.locations) {
    if (loc.id.empty()) fail(ErrorCode::ParseError, "location with empty id");
    if (!seen.insert(loc.id).second) fail(ErrorCode::DuplicateId, "duplicate location id '" + loc.id + "'");
    for (const auto* view : {&loc.street, &loc.satellite, &loc.drone}) {
      for (const auto& ref : *view) {
        if (ref.empty()) fail(ErrorCode::ParseError, "empty image ref in location '" + loc.id + "'");
      }
    }
  }
}

inline Manifest manifest_from_json(const nlohmann::json& doc) {
  Manifest manifest;
  try {
    const auto split = doc.at("split").get<std::string>();
    if (split == "train") {
      manifest.split = Split::Train;
    } else if (split == "test") {
      manifest.split = Split::Test;
    } else {
      fail(ErrorCode::ParseError, "split must be \"train\" or \"test\", got \"" + split + "\"");
    }
    for (const auto& item : doc.at("locations")) {
      LocationRecord loc;
      loc.id = item.at("id").get<std::string>();
      loc.street = item.value("street", std::vector<std::string>{});
      loc.satellite = item.value("satellite", std::vector<std::string>{});
      loc.drone = item.value("drone", std::vector<std::string>{});
      manifest.locations.push_back(std::move(loc));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("manifest schema: ") + e.what());
  }
  validate(manifest);
  return manifest;
}

inline nlohmann::json manifest_to_json(const Manifest& manifest) {
  nlohmann::json locations = nlohmann::json::array();
  for (const auto& loc : manifest.locations) {
    locations.push_back({{"id", loc.id}, {"street", loc.street}, {"satellite", loc.satellite}, {"drone", loc.drone}});
  }
  return {{"split", std::string(to_string(manifest.split))}, {"locations", std::move(locations)}};
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open manifest '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, "manifest '" + path.string() + "': " + e.what());
  }
  Manifest manifest = manifest_from_json(doc);
  manifest.base_dir = path.parent_path();
  return manifest;
}

inline void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write manifest '" + path.string() + "'");
  out << manifest_to_json(manifest).dump(2) << '\n';
}

/// Seed of the sampler stream for one epoch. Epochs never share a stream.
inline std::uint64_t sampler_seed(std::uint64_t seed, std::uint64_t epoch) {
  return derive_seed(seed, 0x5A4D'0000'0000ull + epoch);
}

/// One shuffled pass over every (street image, location) combination.
///
/// Each pair independently swaps the satellite reference for a uniformly drawn
/// drone image of the same location with probability `p_drone`. Locations with
/// no drone imagery keep the satellite image and report substituted = false.
/// The first satellite image of a location is always the reference.
///
/// Draw order: for every pair in manifest order one uniform() decides the
/// substitution, followed by one below() for the drone index when it fires;
/// then a Fisher-Yates shuffle consumes the same stream.
inline std::vector<TrainingPair> sample_pairs(const Manifest& manifest, double p_drone, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (!(p_drone >= 0.0 && p_drone <= 1.0)) fail(ErrorCode::Usage, "p_drone must lie in [0, 1]");
  Xoshiro256 rng(sampler_seed(seed, epoch));
  std::vector<TrainingPair> pairs;
  for (const auto& loc : manifest.locations) {
    if (loc.street.empty()) continue;
    if (loc.satellite.empty()) fail(ErrorCode::MissingView, "location '" + loc.id + "' has no satellite image");
    for (const auto& street : loc.street) {
      TrainingPair pair{street, loc.satellite.front(), loc.id, false};
      if (rng.uniform() < p_drone && !loc.drone.empty()) {
        pair.reference_image = loc.drone[rng.below(loc.drone.size())];
        pair.substituted = true;
      }
      pairs.push_back(std::move(pair));
    }
  }
  shuffle(std::span(pairs), rng);
  return pairs;
}

}  // namespace cvgl
