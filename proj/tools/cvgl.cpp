// cvgl: command-line front end for the two-stage cross-view localisation engine.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <cvgl/pipeline.hpp>
#include <cvgl/synthetic.hpp>
#include <cvgl/version.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTransport = 4;

int exit_code(const cvgl::Error& e) {
  switch (e.error_class()) {
    case cvgl::ErrorClass::Usage: return kExitUsage;
    case cvgl::ErrorClass::Transport: return kExitTransport;
    case cvgl::ErrorClass::Data: return kExitData;
  }
  return kExitData;
}

void log_line(const std::string& msg) { std::cerr << "[cvgl] " << msg << '\n'; }

void require_file(const fs::path& p) {
  if (!fs::exists(p)) cvgl::fail(cvgl::ErrorCode::Io, "'" + p.string() + "' does not exist");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view geo-localisation: contrastive retrieval with VLM re-ranking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cvgl::version_string()));

  // embed
  auto* embed = app.add_subcommand("embed", "Toy-extract features for one view of a manifest (PPM images)");
  fs::path embed_manifest, embed_out;
  std::string embed_view = "street";
  std::size_t embed_grid = cvgl::kDefaultGrid;
  embed->add_option("--manifest", embed_manifest, "Manifest JSON")->required();
  embed->add_option("--view", embed_view, "street, satellite or drone")->capture_default_str();
  embed->add_option("--grid", embed_grid, "Grid size g (dim = 3*g*g)")->capture_default_str();
  embed->add_option("--out", embed_out, "Output .cvge")->required();

  // train
  auto* train = app.add_subcommand("train", "Train the projection heads with symmetric InfoNCE");
  cvgl::TrainInputs train_in;
  fs::path drone_emb, train_out;
  std::optional<fs::path> train_log;
  cvgl::TrainConfig tc;
  train->add_option("--manifest", train_in.manifest, "Train manifest")->required();
  train->add_option("--street-emb", train_in.street_emb, "Street features (.cvge)")->required();
  train->add_option("--sat-emb", train_in.sat_emb, "Satellite features (.cvge)")->required();
  train->add_option("--drone-emb", drone_emb, "Drone features (.cvge)");
  train->add_option("--p-drone", tc.p_drone, "Drone substitution probability")->capture_default_str();
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.lr0, "Initial learning rate")->capture_default_str();
  train->add_option("--gamma", tc.gamma, "Per-epoch exponential decay")->capture_default_str();
  train->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  train->add_option("--label-smoothing", tc.label_smoothing)->capture_default_str();
  train->add_option("--d-out", tc.d_out, "Projection dimension")->capture_default_str();
  train->add_option("--seed", tc.seed)->capture_default_str();
  train->add_option("--log", train_log, "Per-epoch loss log (JSON lines)");
  train->add_option("--out", train_out, "Output model (.cvgm)")->required();

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Rank references for every query");
  std::optional<fs::path> retrieve_model;
  fs::path retrieve_index, retrieve_queries, retrieve_out;
  std::size_t retrieve_k = 10, retrieve_threads = 1;
  retrieve->add_option("--model", retrieve_model, "Trained model (.cvgm); raw features when omitted");
  retrieve->add_option("--index", retrieve_index, "Reference features (.cvge)")->required();
  retrieve->add_option("--queries", retrieve_queries, "Query features (.cvge)")->required();
  retrieve->add_option("--k", retrieve_k)->capture_default_str();
  retrieve->add_option("--threads", retrieve_threads)->capture_default_str();
  retrieve->add_option("--out", retrieve_out, "Output rankings (.jsonl)")->required();

  // rerank
  auto* rerank = app.add_subcommand("rerank", "Re-rank retrieval heads through a VLM endpoint");
  fs::path rerank_in, rerank_out;
  std::vector<fs::path> rerank_manifests;
  cvgl::RerankStageOptions ro;
  std::int64_t rerank_timeout_ms = 120000;
  rerank->add_option("--rankings", rerank_in, "Input rankings (.jsonl)")->required();
  rerank->add_option("--manifest", rerank_manifests, "Manifest(s) resolving image ids to files")->required();
  rerank->add_option("--endpoint", ro.endpoint, "Server root URL")->required();
  rerank->add_option("--model", ro.rerank.model_name)->capture_default_str();
  rerank->add_option("--k", ro.rerank.k)->capture_default_str();
  rerank->add_option("--concurrency", ro.concurrency)->capture_default_str();
  rerank->add_option("--retries", ro.rerank.retries)->capture_default_str();
  rerank->add_option("--timeout-ms", rerank_timeout_ms)->capture_default_str();
  rerank->add_option("--out", rerank_out, "Output rankings (.jsonl)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Recall@K of a rankings file");
  fs::path eval_rankings, eval_truth, eval_out;
  std::vector<std::size_t> eval_ks{1, 5, 10};
  eval->add_option("--rankings", eval_rankings)->required();
  eval->add_option("--truth", eval_truth, "JSON object query id -> reference id")->required();
  eval->add_option("--ks", eval_ks)->delimiter(',')->capture_default_str();
  eval->add_option("--out", eval_out, "Report JSON")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "Tabulate several eval reports");
  std::vector<std::string> compare_runs;
  std::optional<fs::path> compare_json;
  compare->add_option("--run", compare_runs, "NAME=report.json (repeatable, in row order)")->required();
  compare->add_option("--json", compare_json, "Also write the table as JSON");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "embed -> train -> retrieve -> rerank -> eval from one config");
  fs::path pipeline_config;
  std::string pipeline_mock, pipeline_endpoint;
  std::optional<std::uint64_t> pipeline_seed;
  std::optional<fs::path> pipeline_out;
  std::optional<std::size_t> pipeline_epochs;
  pipeline->add_option("--config", pipeline_config, "Pipeline config (JSON)")->required();
  pipeline->add_option("--mock", pipeline_mock, "Use an in-process mock VLM in this mode");
  pipeline->add_option("--endpoint", pipeline_endpoint, "VLM endpoint (overrides config)");
  pipeline->add_option("--seed", pipeline_seed, "Global seed (overrides config)");
  pipeline->add_option("--epochs", pipeline_epochs, "Training epochs (overrides config)");
  pipeline->add_option("--out-dir", pipeline_out, "Output directory (overrides config)");

  // mock-serve
  auto* serve = app.add_subcommand("mock-serve", "Run the mock VLM server in the foreground");
  std::string serve_host = "127.0.0.1", serve_mode = "identity";
  int serve_port = 8089;
  std::optional<fs::path> serve_truth;
  std::int64_t serve_slow_ms = 2000;
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->capture_default_str();
  serve->add_option("--mode", serve_mode, "identity|reverse|oracle|garbage|http500|slow|short|fuzz")->capture_default_str();
  serve->add_option("--truth", serve_truth, "Ground-truth sidecar for oracle mode");
  serve->add_option("--slow-ms", serve_slow_ms)->capture_default_str();

  // demo
  auto* demo = app.add_subcommand("demo", "Write a small synthetic PPM dataset and demo.json");
  fs::path demo_out;
  cvgl::synthetic::ImageOptions demo_opt;
  demo->add_option("--out", demo_out, "Target directory")->required();
  demo->add_option("--seed", demo_opt.seed)->capture_default_str();
  demo->add_option("--locations", demo_opt.locations)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*embed) {
      const auto table = cvgl::embed_stage(embed_manifest, cvgl::parse_view(embed_view), embed_grid, embed_out);
      log_line("wrote " + std::to_string(table.size()) + " embeddings of dim " + std::to_string(table.dim()));
    } else if (*train) {
      if (!drone_emb.empty()) train_in.drone_emb = drone_emb;
      const auto result = cvgl::train_stage(train_in, tc, train_out, train_log, log_line);
      log_line("final loss " + std::to_string(result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back()));
    } else if (*retrieve) {
      const auto records = cvgl::retrieve_stage(retrieve_model, retrieve_index, retrieve_queries, retrieve_k, retrieve_out,
                                                retrieve_threads);
      log_line("ranked " + std::to_string(records.size()) + " queries");
    } else if (*rerank) {
      ro.timeout = std::chrono::milliseconds(rerank_timeout_ms);
      const auto records = cvgl::rerank_stage(rerank_in, rerank_manifests, ro, rerank_out, log_line);
      std::size_t used = 0;
      for (const auto& r : records) used += r.used_vlm.value_or(false) ? 1 : 0;
      log_line("re-ranked " + std::to_string(used) + "/" + std::to_string(records.size()) + " queries");
    } else if (*eval) {
      const auto report = cvgl::eval_stage(eval_rankings, eval_truth, eval_ks, eval_out);
      std::cout << cvgl::compare_runs({{eval_rankings.stem().string(), report}}).text;
    } else if (*compare) {
      std::vector<std::pair<std::string, cvgl::RecallReport>> runs;
      for (const auto& spec : compare_runs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) cvgl::fail(cvgl::ErrorCode::Usage, "--run expects NAME=PATH, got '" + spec + "'");
        runs.emplace_back(spec.substr(0, eq), cvgl::load_report(spec.substr(eq + 1)));
      }
      const auto table = cvgl::compare_runs(runs);
      std::cout << table.text;
      if (compare_json) {
        std::ofstream out(*compare_json);
        out << table.json.dump(2) << '\n';
      }
    } else if (*pipeline) {
      require_file(pipeline_config);
      auto cfg = cvgl::load_pipeline_config(pipeline_config);
      if (!pipeline_mock.empty()) {
        cfg.mock = cvgl::parse_mock_mode(pipeline_mock);
        if (!cfg.mock) cvgl::fail(cvgl::ErrorCode::Usage, "unknown mock mode '" + pipeline_mock + "'");
      }
      if (!pipeline_endpoint.empty()) {
        cfg.endpoint = pipeline_endpoint;
        if (pipeline_mock.empty()) cfg.mock.reset();
      }
      if (pipeline_seed) cfg.seed = cfg.train.seed = *pipeline_seed;
      if (pipeline_epochs) cfg.train.epochs = *pipeline_epochs;
      if (pipeline_out) cfg.output_dir = *pipeline_out;
      const auto result = cvgl::run_pipeline(cfg, log_line);
      std::cout << result.comparison.text;
    } else if (*serve) {
      auto mode = cvgl::parse_mock_mode(serve_mode);
      if (!mode) cvgl::fail(cvgl::ErrorCode::Usage, "unknown mock mode '" + serve_mode + "'");
      cvgl::MockOptions opt{*mode, {}, std::chrono::milliseconds(serve_slow_ms)};
      if (serve_truth) opt.truth = cvgl::load_truth(*serve_truth);
      if (*mode == cvgl::MockMode::Oracle && opt.truth.empty()) {
        cvgl::fail(cvgl::ErrorCode::Usage, "oracle mode needs --truth");
      }
      cvgl::MockVlmServer server(std::move(opt));
      log_line("starting mock VLM (" + serve_mode + ") on http://" + serve_host + ":" + std::to_string(serve_port));
      server.serve(serve_host, serve_port);
    } else if (*demo) {
      cvgl::synthetic::write_image_dataset(demo_out, demo_opt);
      log_line("wrote demo dataset to " + demo_out.string() + "; run: cvgl pipeline --config " +
               (demo_out / "demo.json").string());
    }
  } catch (const cvgl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
