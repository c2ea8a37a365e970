#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "index.hpp"

namespace cvgl {

/// Published re-ranking prompt with the candidate count substituted.
inline std::string build_prompt(std::size_t k) {
  if (k == 0) fail(ErrorCode::Usage, "prompt needs at least one candidate");
  const std::string n = std::to_string(k);
  return "Given one ground image and " + n +
         " satellite images, identify which satellite image matches the ground location. Summarise the ground image "
         "and each satellite image, focusing on key features (streets, buildings, etc.). Then, compare the ground image "
         "with each satellite image as well as the summarisation. Rank these " +
         n + " satellite images by likelihood [1–" + n +
         "]. Justify the top choice with matching features and estimated camera position.";
}

/// JSON schema the model's structured output must satisfy for k candidates.
inline nlohmann::json response_schema(std::size_t k) {
  return {{"type", "object"},
          {"properties",
           {{"ranking",
             {{"type", "array"},
              {"items", {{"type", "integer"}, {"minimum", 1}, {"maximum", k}}},
              {"minItems", k},
              {"maxItems", k}}},
            {"justification", {{"type", "string"}}}}},
          {"required", {"ranking", "justification"}}};
}

struct ImagePayload {
  std::string media_type;
  std::string data_base64;
};

inline constexpr double kRerankTemperature = 0.0;
inline constexpr int kThinkingBudget = 1024;

struct RerankRequest {
  std::string model_name;
  double temperature = kRerankTemperature;
  int max_thinking_tokens = kThinkingBudget;
  std::string prompt;
  ImagePayload query;
  std::vector<ImagePayload> candidates;  // retrieval order; candidate i has index i+1
  nlohmann::json schema;

  std::size_t k() const { return candidates.size(); }
};

inline RerankRequest make_request(std::string model_name, ImagePayload query, std::vector<ImagePayload> candidates) {
  RerankRequest req;
  req.model_name = std::move(model_name);
  req.prompt = build_prompt(candidates.size());
  req.schema = response_schema(candidates.size());
  req.query = std::move(query);
  req.candidates = std::move(candidates);
  return req;
}

inline nlohmann::json to_json(const RerankRequest& req) {
  nlohmann::json images = nlohmann::json::array();
  images.push_back({{"role", "query"}, {"candidate_index", nullptr}, {"media_type", req.query.media_type},
                    {"data", req.query.data_base64}});
  for (std::size_t i = 0; i < req.candidates.size(); ++i) {
    images.push_back({{"role", "candidate"}, {"candidate_index", i + 1}, {"media_type", req.candidates[i].media_type},
                      {"data", req.candidates[i].data_base64}});
  }
  return {{"model", req.model_name},
          {"temperature", req.temperature},
          {"max_thinking_tokens", req.max_thinking_tokens},
          {"prompt", req.prompt},
          {"images", std::move(images)},
          {"response_schema", req.schema}};
}

/// Reads a request body back; used by servers speaking the contract.
inline RerankRequest request_from_json(const nlohmann::json& body) {
  RerankRequest req;
  try {
    req.model_name = body.at("model").get<std::string>();
    req.temperature = body.at("temperature").get<double>();
    req.max_thinking_tokens = body.at("max_thinking_tokens").get<int>();
    req.prompt = body.at("prompt").get<std::string>();
    req.schema = body.at("response_schema");
    bool have_query = false;
    for (const auto& img : body.at("images")) {
      ImagePayload p{img.at("media_type").get<std::string>(), img.at("data").get<std::string>()};
      const auto role = img.at("role").get<std::string>();
      if (role == "query") {
        if (have_query) fail(ErrorCode::ParseError, "more than one query image");
        req.query = std::move(p);
        have_query = true;
      } else if (role == "candidate") {
        if (img.at("candidate_index").get<std::size_t>() != req.candidates.size() + 1) {
          fail(ErrorCode::ParseError, "candidate images out of order");
        }
        req.candidates.push_back(std::move(p));
      } else {
        fail(ErrorCode::ParseError, "unknown image role '" + role + "'");
      }
    }
    if (!have_query) fail(ErrorCode::ParseError, "no query image");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("rerank request: ") + e.what());
  }
  return req;
}

struct RerankResponse {
  std::vector<std::size_t> ranking;  // 1-based candidate indices, best first
  std::string justification;

  bool operator==(const RerankResponse&) const = default;
};

enum class ParseFailure { NotJson, MissingField, NotPermutation, WrongLength };

inline std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::NotJson: return "NotJson";
    case ParseFailure::MissingField: return "MissingField";
    case ParseFailure::NotPermutation: return "NotPermutation";
    case ParseFailure::WrongLength: return "WrongLength";
  }
  return "Unknown";
}

/// Validates a model reply: an object with an integer `ranking` that permutes
/// 1..k and a non-empty string `justification`. Mistyped fields count as
/// missing.
inline std::variant<RerankResponse, ParseFailure> parse_response(std::string_view body, std::size_t k) {
  const auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) return ParseFailure::NotJson;
  if (!doc.is_object() || !doc.contains("ranking") || !doc.contains("justification")) return ParseFailure::MissingField;
  const auto& ranking = doc["ranking"];
  const auto& justification = doc["justification"];
  if (!ranking.is_array() || !justification.is_string() || justification.get<std::string>().empty()) {
    return ParseFailure::MissingField;
  }
  for (const auto& x : ranking) {
    if (!x.is_number_integer()) return ParseFailure::MissingField;
  }
  if (ranking.size() != k) return ParseFailure::WrongLength;
  RerankResponse out;
  out.justification = justification.get<std::string>();
  std::vector<bool> seen(k + 1, false);
  for (const auto& x : ranking) {
    const auto v = x.get<long long>();
    if (v < 1 || static_cast<unsigned long long>(v) > k || seen[static_cast<std::size_t>(v)]) return ParseFailure::NotPermutation;
    seen[static_cast<std::size_t>(v)] = true;
    out.ranking.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline nlohmann::json to_json(const RerankResponse& r) {
  return {{"ranking", r.ranking}, {"justification", r.justification}};
}

/// Permutes the first K entries by the model's ranking; the tail is untouched.
inline RankedList apply_rerank(const RankedList& original, const RerankResponse& response) {
  const std::size_t k = response.ranking.size();
  if (original.entries.size() < k) {
    fail(ErrorCode::LengthMismatch, "ranking has " + std::to_string(k) + " entries but the list only " +
                                        std::to_string(original.entries.size()));
  }
  std::vector<bool> seen(k + 1, false);
  for (auto r : response.ranking) {
    if (r < 1 || r > k || seen[r]) fail(ErrorCode::LengthMismatch, "ranking is not a permutation of 1..K");
    seen[r] = true;
  }
  RankedList out{original.query_id, original.entries};
  for (std::size_t i = 0; i < k; ++i) out.entries[i] = original.entries[response.ranking[i] - 1];
  return out;
}

// ---------------------------------------------------------------------------
// Client contract

/// What came back over the wire. status == 0 means the transport failed.
struct VlmReply {
  int status = 0;
  std::string body;
  std::string error;
};

/// Side-channel identifiers sent with each request (as headers over HTTP).
/// Providers ignore them; the mock server's oracle mode reads them.
struct RerankContext {
  std::string query_id;
  std::vector<std::string> candidate_ids;
};

class VlmClient {
 public:
  virtual ~VlmClient() = default;
  /// Must be safe to call from several threads at once.
  virtual VlmReply send(const RerankRequest& request, const RerankContext& context) = 0;
};

enum class RerankFailure { TransportError, NotJson, MissingField, NotPermutation, WrongLength, NoCandidates };

inline std::string_view to_string(RerankFailure f) {
  switch (f) {
    case RerankFailure::TransportError: return "TransportError";
    case RerankFailure::NotJson: return "NotJson";
    case RerankFailure::MissingField: return "MissingField";
    case RerankFailure::NotPermutation: return "NotPermutation";
    case RerankFailure::WrongLength: return "WrongLength";
    case RerankFailure::NoCandidates: return "NoCandidates";
  }
  return "Unknown";
}

inline RerankFailure to_failure(ParseFailure f) {
  switch (f) {
    case ParseFailure::NotJson: return RerankFailure::NotJson;
    case ParseFailure::MissingField: return RerankFailure::MissingField;
    case ParseFailure::NotPermutation: return RerankFailure::NotPermutation;
    case ParseFailure::WrongLength: return RerankFailure::WrongLength;
  }
  return RerankFailure::NotJson;
}

struct RerankOutcome {
  RankedList final;
  bool used_vlm = false;
  std::optional<std::string> justification;
  std::optional<RerankFailure> failure;
  std::string detail;  // human-readable cause when failure is set
};

struct RerankOptions {
  std::string model_name = "gemini-2.5-flash";
  std::size_t k = 10;
  std::size_t retries = 0;
};

/// Re-ranks the head of one retrieval list through the client.
///
/// K shrinks to the list length when fewer candidates exist. Any transport
/// error, non-2xx status or invalid reply leaves the original order in place
/// and records why; nothing is thrown for client misbehaviour.
inline RerankOutcome rerank_query(VlmClient& client, const ImagePayload& query_image, const RankedList& original,
                                  const std::vector<ImagePayload>& candidate_images, const RerankOptions& options = {}) {
  RerankOutcome out{original, false, std::nullopt, std::nullopt, {}};
  const std::size_t k = std::min(options.k, original.entries.size());
  if (k == 0) {
    out.failure = RerankFailure::NoCandidates;
    out.detail = "empty candidate list";
    return out;
  }
  if (candidate_images.size() < k) {
    fail(ErrorCode::LengthMismatch, "query '" + original.query_id + "' has " + std::to_string(candidate_images.size()) +
                                        " candidate images for K=" + std::to_string(k));
  }
  const auto request = make_request(options.model_name, query_image,
                                    {candidate_images.begin(), candidate_images.begin() + static_cast<std::ptrdiff_t>(k)});
  RerankContext context{original.query_id, {}};
  for (std::size_t i = 0; i < k; ++i) context.candidate_ids.push_back(original.entries[i].id);

  for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
    VlmReply reply;
    try {
      reply = client.send(request, context);
    } catch (const std::exception& e) {
      reply = {0, {}, e.what()};
    }
    if (reply.status < 200 || reply.status >= 300) {
      out.failure = RerankFailure::TransportError;
      out.detail = reply.status == 0 ? "transport: " + reply.error : "HTTP status " + std::to_string(reply.status);
      continue;
    }
    auto parsed = parse_response(reply.body, k);
    if (auto* f = std::get_if<ParseFailure>(&parsed)) {
      out.failure = to_failure(*f);
      out.detail = "invalid reply: " + std::string(to_string(*f));
      continue;
    }
    const auto& response = std::get<RerankResponse>(parsed);
    out.final = apply_rerank(original, response);
    out.used_vlm = true;
    out.justification = response.justification;
    out.failure.reset();
    out.detail.clear();
    return out;
  }
  return out;
}

/// Resolves an image id (query or reference) to its payload.
using ImageSource = std::function<ImagePayload(const std::string& image_id)>;
using RerankLog = std::function<void(const std::string& query_id, const RerankOutcome&)>;

/// Re-ranks many lists with at most `concurrency` requests in flight.
/// Outcomes come back in input order. Image loading errors propagate.
inline std::vector<RerankOutcome> rerank_all(VlmClient& client, const std::vector<RankedList>& lists,
                                             const ImageSource& images, const RerankOptions& options,
                                             std::size_t concurrency = 4, const RerankLog& log = {}) {
  std::vector<RerankOutcome> outcomes(lists.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex error_mutex, log_mutex;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= lists.size() || abort.load()) return;
      try {
        const auto& list = lists[i];
        const std::size_t k = std::min(options.k, list.entries.size());
        std::vector<ImagePayload> candidates;
        for (std::size_t c = 0; c < k; ++c) candidates.push_back(images(list.entries[c].id));
        const ImagePayload query = k == 0 ? ImagePayload{} : images(list.query_id);
        outcomes[i] = rerank_query(client, query, list, candidates, options);
        if (log) {
          std::lock_guard lock(log_mutex);
          log(list.query_id, outcomes[i]);
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        abort = true;
        return;
      }
    }
  };
  concurrency = std::clamp<std::size_t>(concurrency, 1, std::max<std::size_t>(1, lists.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < concurrency; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return outcomes;
}

}  // namespace cvgl
