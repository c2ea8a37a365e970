#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "embedding_io.hpp"
#include "eval.hpp"
#include "index.hpp"
#include "model.hpp"
#include "ppm.hpp"
#include "rankings_io.hpp"
#include "rerank.hpp"
#include "trainer.hpp"
#include "vlm_http.hpp"

namespace cvgl {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

enum class View { Street, Satellite, Drone };

inline View parse_view(std::string_view name) {
  if (name == "street") return View::Street;
  if (name == "satellite") return View::Satellite;
  if (name == "drone") return View::Drone;
  fail(ErrorCode::Usage, "unknown view '" + std::string(name) + "' (expected street, satellite or drone)");
}

inline const std::vector<std::string>& refs_of(const LocationRecord& loc, View view) {
  switch (view) {
    case View::Street: return loc.street;
    case View::Satellite: return loc.satellite;
    case View::Drone: return loc.drone;
  }
  return loc.street;
}

// ---------------------------------------------------------------------------
// Stages. Each reads and writes files so that running them one by one gives
// the same artifacts as the pipeline command.

/// Toy-extracts every image of one view (PPM files) into a CVGE table keyed by
/// the manifest's image refs.
inline EmbeddingTable embed_stage(const fs::path& manifest_path, View view, std::size_t grid, const fs::path& out) {
  const auto manifest = load_manifest(manifest_path);
  EmbeddingTable table(3 * grid * grid);
  for (const auto& loc : manifest.locations) {
    for (const auto& ref : refs_of(loc, view)) {
      if (!table.contains(ref)) table.insert(ref, toy_embed(read_ppm(manifest.resolve(ref)), grid));
    }
  }
  if (table.empty()) fail(ErrorCode::EmptyTable, "manifest '" + manifest_path.string() + "' has no images of that view");
  write_embeddings(table, out);
  return table;
}

struct TrainInputs {
  fs::path manifest;
  fs::path street_emb;
  fs::path sat_emb;
  std::optional<fs::path> drone_emb;
};

inline TrainResult train_stage(const TrainInputs& in, const TrainConfig& config, const fs::path& out_model,
                               const std::optional<fs::path>& loss_log = {}, const Logger& log = {}) {
  const auto manifest = load_manifest(in.manifest);
  if (manifest.split != Split::Train) fail(ErrorCode::Usage, "training needs a train-split manifest");
  ViewTables tables{read_embeddings(in.street_emb), read_embeddings(in.sat_emb), EmbeddingTable{}};
  if (in.drone_emb) tables.drone = read_embeddings(*in.drone_emb);
  auto result = train(manifest, tables, config, [&](std::size_t epoch, double loss, double lr) {
    if (log) log("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss) + " lr " + std::to_string(lr));
  });
  write_model(result.model, out_model);
  if (loss_log) {
    std::ofstream out(*loss_log, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write '" + loss_log->string() + "'");
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
      out << nlohmann::json{{"epoch", e}, {"loss", result.epoch_losses[e]}, {"lr", lr_at(e, config.lr0, config.gamma)}}.dump()
          << '\n';
    }
  }
  return result;
}

/// Projects queries with the street head and references with the satellite
/// head (raw features when no model is given), then ranks exactly.
inline std::vector<RankingRecord> retrieve_stage(const std::optional<fs::path>& model_path, const fs::path& index_path,
                                                 const fs::path& queries_path, std::size_t k, const fs::path& out,
                                                 std::size_t threads = 1) {
  auto refs = read_embeddings(index_path);
  auto queries = read_embeddings(queries_path);
  if (model_path) {
    const auto model = read_model(*model_path);
    refs = project_table(model.sat_head, refs);
    queries = project_table(model.street_head, queries);
  } else {
    EmbeddingTable unit(queries.dim());
    for (const auto& [id, v] : queries) unit.insert(id, l2_normalize(v));
    queries = std::move(unit);
  }
  const auto index = build_index(refs);
  std::vector<RankingRecord> records;
  for (auto& list : query_batch(index, queries, k, threads)) records.push_back({std::move(list), {}, {}, {}});
  write_rankings(records, out);
  return records;
}

/// Image id -> file path for every ref in the given manifests.
inline std::map<std::string, fs::path> image_paths(const std::vector<fs::path>& manifests) {
  std::map<std::string, fs::path> paths;
  for (const auto& mp : manifests) {
    const auto manifest = load_manifest(mp);
    for (const auto& loc : manifest.locations) {
      for (View v : {View::Street, View::Satellite, View::Drone}) {
        for (const auto& ref : refs_of(loc, v)) paths.emplace(ref, manifest.resolve(ref));
      }
    }
  }
  return paths;
}

struct RerankStageOptions {
  std::string endpoint;
  RerankOptions rerank;
  std::size_t concurrency = 4;
  std::chrono::milliseconds timeout{120000};
};

inline std::vector<RankingRecord> rerank_stage(const fs::path& rankings_path, const std::vector<fs::path>& manifests,
                                               const RerankStageOptions& opt, const fs::path& out,
                                               const Logger& log = {}) {
  const auto input = read_rankings(rankings_path);
  const auto paths = image_paths(manifests);
  std::vector<RankedList> lists;
  for (const auto& rec : input) lists.push_back(rec.list);
  ImageSource source = [&](const std::string& id) {
    auto it = paths.find(id);
    if (it == paths.end()) fail(ErrorCode::MissingView, "image '" + id + "' is not listed in any manifest");
    return load_image_payload(it->second);
  };
  HttpVlmClient client(opt.endpoint, opt.timeout);
  const auto outcomes = rerank_all(client, lists, source, opt.rerank, opt.concurrency,
                                   [&](const std::string& query, const RerankOutcome& o) {
                                     if (log && o.failure) log("rerank " + query + ": fallback (" + o.detail + ")");
                                   });
  std::vector<RankingRecord> records;
  for (const auto& o : outcomes) {
    RankingRecord rec{o.final, o.used_vlm, o.justification, std::nullopt};
    if (o.failure) rec.failure = std::string(to_string(*o.failure));
    records.push_back(std::move(rec));
  }
  write_rankings(records, out);
  return records;
}

inline RecallReport eval_stage(const fs::path& rankings_path, const fs::path& truth_path, std::vector<std::size_t> ks,
                               const fs::path& out) {
  if (!fs::exists(truth_path)) fail(ErrorCode::Io, "truth file '" + truth_path.string() + "' does not exist");
  const auto truth = load_truth(truth_path);
  std::vector<RankedList> lists;
  for (auto& rec : read_rankings(rankings_path)) lists.push_back(std::move(rec.list));
  auto report = recall_at_k(lists, truth, std::move(ks));
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorCode::Io, "cannot write '" + out.string() + "'");
  file << to_json(report).dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------------------
// Whole-pipeline configuration

struct PipelineConfig {
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  fs::path train_manifest;
  fs::path test_manifest;
  // Precomputed features; when absent the toy extractor runs on PPM images.
  std::optional<fs::path> train_street_emb, train_sat_emb, train_drone_emb, test_street_emb, test_sat_emb;
  std::size_t grid = kDefaultGrid;
  TrainConfig train;
  std::size_t k = 10;
  bool rerank_enabled = true;
  std::string endpoint;
  std::string vlm_model = "gemini-2.5-flash";
  std::size_t rerank_k = 10;
  std::size_t concurrency = 4;
  std::size_t retries = 0;
  std::chrono::milliseconds timeout{120000};
  std::optional<MockMode> mock;
  std::vector<std::size_t> ks{1, 5, 10};

  /// Checks cross-field invariants and that input paths exist.
  void validate() const {
    if (train_manifest.empty() || test_manifest.empty()) fail(ErrorCode::Usage, "train and test manifests are required");
    for (const auto* p : {&train_manifest, &test_manifest}) {
      if (!fs::exists(*p)) fail(ErrorCode::Io, "'" + p->string() + "' does not exist");
    }
    for (const auto* p : {&train_street_emb, &train_sat_emb, &train_drone_emb, &test_street_emb, &test_sat_emb}) {
      if (*p && !fs::exists(**p)) fail(ErrorCode::Io, "'" + (*p)->string() + "' does not exist");
    }
    if (k == 0 || rerank_k == 0) fail(ErrorCode::Usage, "k must be positive");
    const auto norm = normalize_ks(ks);
    if (k < norm.back()) fail(ErrorCode::Usage, "retrieval k must be at least max(ks)");
    if (rerank_enabled && !mock && endpoint.empty()) fail(ErrorCode::Usage, "rerank needs an endpoint or a mock mode");
    train.validate();
  }
};

namespace detail {

template <typename T>
void read_if(const nlohmann::json& section, const char* key, T& target) {
  if (section.contains(key)) target = section.at(key).get<T>();
}

inline void read_path(const nlohmann::json& section, const char* key, const fs::path& base, fs::path& target) {
  if (section.contains(key)) target = base / section.at(key).get<std::string>();
}

inline void read_path(const nlohmann::json& section, const char* key, const fs::path& base,
                      std::optional<fs::path>& target) {
  if (section.contains(key) && !section.at(key).is_null()) target = base / section.at(key).get<std::string>();
}

}  // namespace detail

/// Reads a JSON config with one section per stage. Relative paths resolve
/// against the config file's directory. Unset fields keep their defaults.
inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config '" + path.string() + "'");
  PipelineConfig cfg;
  const fs::path base = path.parent_path();
  try {
    const auto doc = nlohmann::json::parse(in);
    const nlohmann::json empty = nlohmann::json::object();
    auto section = [&](const char* name) -> const nlohmann::json& { return doc.contains(name) ? doc.at(name) : empty; };
    detail::read_if(doc, "seed", cfg.seed);
    cfg.train.seed = cfg.seed;
    detail::read_path(doc, "output_dir", base, cfg.output_dir);

    const auto& data = section("data");
    detail::read_path(data, "train_manifest", base, cfg.train_manifest);
    detail::read_path(data, "test_manifest", base, cfg.test_manifest);
    detail::read_path(data, "train_street_emb", base, cfg.train_street_emb);
    detail::read_path(data, "train_sat_emb", base, cfg.train_sat_emb);
    detail::read_path(data, "train_drone_emb", base, cfg.train_drone_emb);
    detail::read_path(data, "test_street_emb", base, cfg.test_street_emb);
    detail::read_path(data, "test_sat_emb", base, cfg.test_sat_emb);

    detail::read_if(section("embed"), "grid", cfg.grid);

    const auto& t = section("train");
    detail::read_if(t, "epochs", cfg.train.epochs);
    detail::read_if(t, "batch_size", cfg.train.batch_size);
    detail::read_if(t, "lr", cfg.train.lr0);
    detail::read_if(t, "gamma", cfg.train.gamma);
    detail::read_if(t, "p_drone", cfg.train.p_drone);
    detail::read_if(t, "weight_decay", cfg.train.weight_decay);
    detail::read_if(t, "label_smoothing", cfg.train.label_smoothing);
    detail::read_if(t, "d_out", cfg.train.d_out);
    detail::read_if(t, "seed", cfg.train.seed);

    detail::read_if(section("retrieve"), "k", cfg.k);

    const auto& r = section("rerank");
    detail::read_if(r, "enabled", cfg.rerank_enabled);
    detail::read_if(r, "endpoint", cfg.endpoint);
    detail::read_if(r, "model", cfg.vlm_model);
    detail::read_if(r, "k", cfg.rerank_k);
    detail::read_if(r, "concurrency", cfg.concurrency);
    detail::read_if(r, "retries", cfg.retries);
    if (r.contains("timeout_ms")) cfg.timeout = std::chrono::milliseconds(r.at("timeout_ms").get<std::int64_t>());
    if (r.contains("mock") && !r.at("mock").is_null()) {
      const auto name = r.at("mock").get<std::string>();
      cfg.mock = parse_mock_mode(name);
      if (!cfg.mock) fail(ErrorCode::Usage, "unknown mock mode '" + name + "'");
    }
    detail::read_if(section("eval"), "ks", cfg.ks);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, "config '" + path.string() + "': " + e.what());
  }
  return cfg;
}

struct PipelineResult {
  RecallReport pre;
  RecallReport post;
  Comparison comparison;
};

/// embed (if needed) -> train -> retrieve -> rerank -> eval, all through files
/// in output_dir. A mock mode starts an in-process mock server for the rerank
/// stage; its oracle sidecar is the test manifest's ground truth.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  const auto out = [&](const char* name) { return cfg.output_dir / name; };
  auto note = [&](const std::string& msg) {
    if (log) log(msg);
  };

  auto features = [&](const std::optional<fs::path>& given, const fs::path& manifest, View view,
                      const char* name) -> std::optional<fs::path> {
    if (given) return given;
    const auto m = load_manifest(manifest);
    bool any = false;
    for (const auto& loc : m.locations) any = any || !refs_of(loc, view).empty();
    if (!any) return std::nullopt;
    note(std::string("embed ") + name);
    embed_stage(manifest, view, cfg.grid, out(name));
    return out(name);
  };
  const auto train_street = features(cfg.train_street_emb, cfg.train_manifest, View::Street, "train_street.cvge");
  const auto train_sat = features(cfg.train_sat_emb, cfg.train_manifest, View::Satellite, "train_satellite.cvge");
  const auto train_drone = features(cfg.train_drone_emb, cfg.train_manifest, View::Drone, "train_drone.cvge");
  const auto test_street = features(cfg.test_street_emb, cfg.test_manifest, View::Street, "test_street.cvge");
  const auto test_sat = features(cfg.test_sat_emb, cfg.test_manifest, View::Satellite, "test_satellite.cvge");
  if (!train_street || !train_sat || !test_street || !test_sat) {
    fail(ErrorCode::MissingView, "street and satellite features are required for both splits");
  }

  note("train");
  train_stage({cfg.train_manifest, *train_street, *train_sat, train_drone}, cfg.train, out("model.cvgm"),
              out("train_log.jsonl"), log);

  note("retrieve");
  retrieve_stage(out("model.cvgm"), *test_sat, *test_street, cfg.k, out("rankings.jsonl"));
  const auto truth = truth_from_manifest(load_manifest(cfg.test_manifest));
  save_truth(truth, out("truth.json"));

  PipelineResult result;
  result.pre = eval_stage(out("rankings.jsonl"), out("truth.json"), cfg.ks, out("report_pre.json"));

  if (cfg.rerank_enabled) {
    std::optional<MockVlmServer> mock;
    RerankStageOptions opt{cfg.endpoint, {cfg.vlm_model, cfg.rerank_k, cfg.retries}, cfg.concurrency, cfg.timeout};
    if (cfg.mock) {
      mock.emplace(MockOptions{*cfg.mock, truth, std::chrono::milliseconds(2000)});
      mock->start();
      opt.endpoint = mock->url();
    }
    note("rerank via " + opt.endpoint);
    rerank_stage(out("rankings.jsonl"), {cfg.test_manifest}, opt, out("reranked.jsonl"), log);
    result.post = eval_stage(out("reranked.jsonl"), out("truth.json"), cfg.ks, out("report_post.json"));
  } else {
    result.post = result.pre;
  }

  result.comparison = compare_runs({{"Without re-ranking", result.pre}, {"With re-ranking", result.post}});
  {
    std::ofstream txt(out("comparison.txt"), std::ios::binary | std::ios::trunc);
    txt << result.comparison.text;
    std::ofstream js(out("comparison.json"), std::ios::binary | std::ios::trunc);
    js << result.comparison.json.dump(2) << '\n';
  }
  return result;
}

}  // namespace cvgl
