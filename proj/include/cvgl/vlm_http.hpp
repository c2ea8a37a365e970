#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eval.hpp"
#include "rerank.hpp"

namespace cvgl {

inline constexpr const char* kRerankPath = "/v1/rerank";
inline constexpr const char* kQueryIdHeader = "X-Cvgl-Query-Id";
inline constexpr const char* kCandidateIdsHeader = "X-Cvgl-Candidate-Ids";
inline constexpr const char* kMockModeHeader = "X-Mock-Mode";
inline constexpr const char* kApiKeyEnv = "CVGL_VLM_API_KEY";

inline std::string media_type_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

/// Reads an image file verbatim and base64-encodes it; no re-encoding.
inline ImagePayload load_image_payload(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open image '" + path.string() + "'");
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  return {media_type_for(path), httplib::detail::base64_encode(bytes)};
}

/// POSTs RerankRequest JSON to `<endpoint>/v1/rerank`.
class HttpVlmClient : public VlmClient {
 public:
  explicit HttpVlmClient(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : timeout_(timeout) {
    while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
    const auto scheme_end = endpoint.find("://");
    const auto path_start = endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    host_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : endpoint.substr(path_start);
    if (path_.size() < 10 || path_.substr(path_.size() - 10) != kRerankPath) path_ += kRerankPath;
    if (host_.empty()) fail(ErrorCode::Usage, "empty VLM endpoint");
    if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && *key != '\0') api_key_ = key;
  }

  /// Extra header sent with every request (tests use it to pick mock modes).
  void set_header(std::string name, std::string value) { extra_.emplace(std::move(name), std::move(value)); }

  VlmReply send(const RerankRequest& request, const RerankContext& context) override {
    httplib::Client client(host_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers = extra_;
    headers.emplace(kQueryIdHeader, nlohmann::json(context.query_id).dump());
    headers.emplace(kCandidateIdsHeader, nlohmann::json(context.candidate_ids).dump());
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);
    auto result = client.Post(path_, headers, to_json(request).dump(), "application/json");
    if (!result) return {0, {}, httplib::to_string(result.error())};
    return {result->status, result->body, {}};
  }

  const std::string& host() const { return host_; }
  const std::string& path() const { return path_; }

 private:
  std::string host_;
  std::string path_;
  std::chrono::milliseconds timeout_;
  std::optional<std::string> api_key_;
  httplib::Headers extra_;
};

// ---------------------------------------------------------------------------
// Mock VLM server

enum class MockMode { Identity, Reverse, Oracle, Garbage, Http500, Slow, Short, Fuzz };

inline std::optional<MockMode> parse_mock_mode(std::string_view name) {
  if (name == "identity") return MockMode::Identity;
  if (name == "reverse") return MockMode::Reverse;
  if (name == "oracle") return MockMode::Oracle;
  if (name == "garbage") return MockMode::Garbage;
  if (name == "http500") return MockMode::Http500;
  if (name == "slow") return MockMode::Slow;
  if (name == "short") return MockMode::Short;
  if (name == "fuzz") return MockMode::Fuzz;
  return std::nullopt;
}

struct MockOptions {
  MockMode mode = MockMode::Identity;
  GroundTruth truth;  // oracle sidecar: query id -> true reference id
  std::chrono::milliseconds slow_delay{2000};
};

/// In-process HTTP server speaking the rerank contract with scripted answers.
///
/// Modes: identity and reverse permute trivially; oracle moves the true
/// reference (from the truth sidecar and the id headers) to the front;
/// garbage answers 200 with non-JSON bytes; http500 fails; slow sleeps before
/// answering identity; short returns a permutation one element too short;
/// fuzz picks one of the above per query id. The X-Mock-Mode header overrides
/// the configured mode per request. Requests that break the contract
/// (temperature, thinking budget, prompt, K) get 400.
class MockVlmServer {
 public:
  explicit MockVlmServer(MockOptions options) : options_(std::move(options)) {
    server_.Post(kRerankPath, [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
  }

  ~MockVlmServer() { stop(); }

  MockVlmServer(const MockVlmServer&) = delete;
  MockVlmServer& operator=(const MockVlmServer&) = delete;

  /// Binds and starts serving on a background thread. port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) fail(ErrorCode::Transport, "mock server cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Blocks serving on the calling thread (CLI mode).
  void serve(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) fail(ErrorCode::Transport, "cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    {
      std::lock_guard lock(stop_mutex_);
      stopping_ = true;
    }
    stop_cv_.notify_all();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }
  int port() const { return port_; }
  std::size_t requests() const { return requests_.load(); }
  std::size_t max_in_flight() const { return max_in_flight_.load(); }

  /// Deterministic per-query choice used by fuzz mode.
  static MockMode fuzz_mode(const std::string& query_id) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : query_id) h = (h ^ c) * 0x100000001b3ull;
    static constexpr MockMode kChoices[] = {MockMode::Identity, MockMode::Reverse, MockMode::Garbage, MockMode::Http500,
                                            MockMode::Slow,     MockMode::Short,   MockMode::Oracle};
    return kChoices[h % std::size(kChoices)];
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    const std::size_t now = ++in_flight_;
    std::size_t seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    respond(req, res);
    --in_flight_;
  }

  void respond(const httplib::Request& req, httplib::Response& res) {
    RerankRequest request;
    try {
      request = request_from_json(nlohmann::json::parse(req.body));
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
      return;
    }
    const std::size_t k = request.k();
    if (k == 0 || request.temperature != kRerankTemperature || request.max_thinking_tokens != kThinkingBudget ||
        request.prompt != build_prompt(k) || request.schema != response_schema(k)) {
      res.status = 400;
      res.set_content("request violates the rerank contract", "text/plain");
      return;
    }
    std::string query_id;
    std::vector<std::string> candidate_ids;
    try {
      if (req.has_header(kQueryIdHeader)) query_id = nlohmann::json::parse(req.get_header_value(kQueryIdHeader)).get<std::string>();
      if (req.has_header(kCandidateIdsHeader)) {
        candidate_ids = nlohmann::json::parse(req.get_header_value(kCandidateIdsHeader)).get<std::vector<std::string>>();
      }
    } catch (const std::exception&) {
      res.status = 400;
      res.set_content("malformed id headers", "text/plain");
      return;
    }

    MockMode mode = options_.mode;
    if (req.has_header(kMockModeHeader)) {
      auto m = parse_mock_mode(req.get_header_value(kMockModeHeader));
      if (!m) {
        res.status = 400;
        res.set_content("unknown mock mode", "text/plain");
        return;
      }
      mode = *m;
    }
    if (mode == MockMode::Fuzz) mode = fuzz_mode(query_id);

    std::vector<std::size_t> ranking(k);
    for (std::size_t i = 0; i < k; ++i) ranking[i] = i + 1;
    std::string justification = "identity order kept";
    switch (mode) {
      case MockMode::Identity:
        break;
      case MockMode::Reverse:
        std::reverse(ranking.begin(), ranking.end());
        justification = "reversed order";
        break;
      case MockMode::Oracle: {
        auto truth = options_.truth.find(query_id);
        if (truth != options_.truth.end()) {
          auto hit = std::find(candidate_ids.begin(), candidate_ids.end(), truth->second);
          if (hit != candidate_ids.end() && static_cast<std::size_t>(hit - candidate_ids.begin()) < k) {
            const std::size_t pos = static_cast<std::size_t>(hit - candidate_ids.begin()) + 1;
            std::rotate(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(pos - 1),
                        ranking.begin() + static_cast<std::ptrdiff_t>(pos));
            justification = "candidate " + std::to_string(pos) + " is the ground-truth match";
          }
        }
        break;
      }
      case MockMode::Garbage:
        res.status = 200;
        res.set_content(std::string("\x00\xff{not json", 11), "application/json");
        return;
      case MockMode::Http500:
        res.status = 500;
        res.set_content("internal error", "text/plain");
        return;
      case MockMode::Slow: {
        std::unique_lock lock(stop_mutex_);
        stop_cv_.wait_for(lock, options_.slow_delay, [this] { return stopping_; });
        justification = "slow identity";
        break;
      }
      case MockMode::Short:
        ranking.pop_back();
        justification = "one candidate missing";
        break;
      case MockMode::Fuzz:
        break;
    }
    res.status = 200;
    res.set_content(to_json(RerankResponse{ranking, justification}).dump(), "application/json");
  }

  MockOptions options_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
};

}  // namespace cvgl
