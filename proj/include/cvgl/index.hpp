#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "embedding.hpp"

namespace cvgl {

struct RankedEntry {
  std::string id;
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

/// Candidates for one query, best first; equal scores in ascending id order.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  bool operator==(const RankedList&) const = default;
};

/// Exact cosine index over a precomputed reference set.
class RetrievalIndex {
 public:
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }

  friend RetrievalIndex build_index(const EmbeddingTable& table);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;  // ascending
  std::vector<float> matrix_;     // size() x dim(), unit rows
};

/// Normalizes every reference vector into a row-major matrix; ids ascend.
inline RetrievalIndex build_index(const EmbeddingTable& table) {
  if (table.empty()) fail(ErrorCode::EmptyTable, "cannot index an empty table");
  RetrievalIndex index;
  index.dim_ = table.dim();
  index.ids_.reserve(table.size());
  index.matrix_.reserve(table.size() * table.dim());
  for (const auto& [id, values] : table) {
    EmbeddingVector unit;
    try {
      unit = l2_normalize(values);
    } catch (const Error&) {
      fail(ErrorCode::ZeroVector, "reference '" + id + "' is the zero vector");
    }
    index.ids_.push_back(id);
    index.matrix_.insert(index.matrix_.end(), unit.begin(), unit.end());
  }
  return index;
}

/// Top-k references by dot product with a normalized query.
///
/// Scores accumulate in double. Selection is a partial sort on
/// (score desc, id asc); rows are stored in id order so the row index is the
/// id tie-break.
inline RankedList query_topk(const RetrievalIndex& index, std::span<const float> query, std::size_t k,
                             std::string query_id = {}) {
  if (query.size() != index.dim()) {
    fail(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) + " != index dim " +
                                     std::to_string(index.dim()));
  }
  if (k == 0) fail(ErrorCode::Usage, "k must be positive");
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = index.row(i);
    double sum = 0.0;
    for (std::size_t d = 0; d < r.size(); ++d) sum += static_cast<double>(r[d]) * query[d];
    scores[i] = sum;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  RankedList out{std::move(query_id), {}};
  out.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.entries.push_back({index.ids()[order[i]], scores[order[i]]});
  return out;
}

/// Queries every entry of `queries` (already normalized). Results keep the
/// table's id order; work is split across up to `threads` workers.
inline std::vector<RankedList> query_batch(const RetrievalIndex& index, const EmbeddingTable& queries, std::size_t k,
                                           std::size_t threads = 1) {
  std::vector<const std::pair<const std::string, EmbeddingVector>*> items;
  for (const auto& entry : queries) items.push_back(&entry);
  std::vector<RankedList> out(items.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, items.size()));
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < items.size(); i += threads) {
      out[i] = query_topk(index, items[i]->second, k, items[i]->first);
    }
  };
  if (threads == 1) {
    work(0);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  pool.clear();
  return out;
}

}  // namespace cvgl
