#include <cmath>

#include <gtest/gtest.h>

#include <cvgl/index.hpp>
#include <cvgl/rng.hpp>

#include "oracles.hpp"

using namespace cvgl;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

EmbeddingVector random_vector(std::size_t d, Xoshiro256& rng) {
  EmbeddingVector v(d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

std::map<std::string, std::vector<float>> stored_rows(const RetrievalIndex& index) {
  std::map<std::string, std::vector<float>> rows;
  for (std::size_t i = 0; i < index.size(); ++i) rows[index.ids()[i]] = {index.row(i).begin(), index.row(i).end()};
  return rows;
}

}  // namespace

TEST(Index, OrthogonalAndAntipodal) {
  EmbeddingTable t(2);
  t.insert("c", {-1, 0});
  t.insert("a", {1, 0});
  t.insert("b", {0, 1});
  const auto index = build_index(t);
  EXPECT_EQ(index.ids(), (std::vector<std::string>{"a", "b", "c"}));
  const auto r = query_topk(index, std::vector<float>{1, 0}, 3, "q");
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.query_id, "q");
  EXPECT_EQ(r.entries[0], (RankedEntry{"a", 1.0}));
  EXPECT_EQ(r.entries[1], (RankedEntry{"b", 0.0}));
  EXPECT_EQ(r.entries[2], (RankedEntry{"c", -1.0}));
}

TEST(Index, TiesBreakByAscendingId) {
  EmbeddingTable t(2);
  t.insert("b", {0.6f, 0.8f});
  t.insert("a", {0.6f, 0.8f});
  t.insert("c", {-0.6f, -0.8f});
  const auto r = query_topk(build_index(t), std::vector<float>{0.6f, 0.8f}, 3);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].id, "a");
  EXPECT_EQ(r.entries[1].id, "b");
  EXPECT_EQ(r.entries[2].id, "c");
  EXPECT_EQ(query_topk(build_index(t), std::vector<float>{0.6f, 0.8f}, 1).entries[0].id, "a");
  EXPECT_EQ(r.entries[0].score, r.entries[1].score);
}

TEST(Index, KLargerThanIndexReturnsEverything) {
  EmbeddingTable t(2);
  t.insert("a", {1, 0});
  t.insert("b", {0, 1});
  EXPECT_EQ(query_topk(build_index(t), std::vector<float>{0, 1}, 10).entries.size(), 2u);
}

TEST(Index, MatchesFullSortOracle) {
  Xoshiro256 rng(31);
  EmbeddingTable t(16);
  for (int i = 0; i < 1000; ++i) t.insert("ref" + std::to_string(i), random_vector(16, rng));
  const auto index = build_index(t);
  const auto rows = stored_rows(index);
  for (int q = 0; q < 30; ++q) {
    const auto query = l2_normalize(random_vector(16, rng));
    for (std::size_t k : {1, 5, 10, 37, 1000}) {
      const auto got = query_topk(index, query, k);
      const auto want = oracle::full_sort_topk(rows, query, k);
      ASSERT_EQ(got.entries.size(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(got.entries[i].id, want[i].id);
        EXPECT_EQ(got.entries[i].score, want[i].score);
      }
    }
  }
}

TEST(Index, RowsAreUnitCopiesOfTheTable) {
  Xoshiro256 rng(2);
  EmbeddingTable t(32);
  for (int i = 0; i < 100; ++i) t.insert("r" + std::to_string(i), random_vector(32, rng));
  const auto index = build_index(t);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& raw = t.at(index.ids()[i]);
    long double norm = 0, raw_norm = 0;
    for (std::size_t d = 0; d < 32; ++d) {
      norm += static_cast<long double>(index.row(i)[d]) * index.row(i)[d];
      raw_norm += static_cast<long double>(raw[d]) * raw[d];
    }
    EXPECT_NEAR(static_cast<double>(std::sqrt(norm)), 1.0, 1e-5);
    for (std::size_t d = 0; d < 32; ++d)
      EXPECT_NEAR(index.row(i)[d], static_cast<double>(raw[d] / std::sqrt(raw_norm)), 1e-6);
  }
}

TEST(Index, SelfRetrievalPrefixAndBounds) {
  Xoshiro256 rng(77);
  EmbeddingTable t(8);
  for (int i = 0; i < 200; ++i) t.insert("r" + std::to_string(i), random_vector(8, rng));
  const auto index = build_index(t);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::vector<float> q(index.row(i).begin(), index.row(i).end());
    const auto top = query_topk(index, q, 12);
    EXPECT_EQ(top.entries[0].id, index.ids()[i]);
    EXPECT_NEAR(top.entries[0].score, 1.0, 1e-6);
    for (std::size_t j = 1; j < top.entries.size(); ++j) {
      EXPECT_GE(top.entries[j - 1].score, top.entries[j].score);
      EXPECT_GE(top.entries[j].score, -1.0 - 1e-6);
      EXPECT_LE(top.entries[j].score, 1.0 + 1e-6);
    }
    const auto shorter = query_topk(index, q, 11);
    EXPECT_TRUE(std::equal(shorter.entries.begin(), shorter.entries.end(), top.entries.begin()));
  }
}

TEST(Index, BatchQueriesKeepInputOrderAcrossThreads) {
  Xoshiro256 rng(5);
  EmbeddingTable refs(6), queries(6);
  for (int i = 0; i < 300; ++i) refs.insert("r" + std::to_string(i), random_vector(6, rng));
  for (int i = 0; i < 57; ++i) queries.insert("q" + std::to_string(i), l2_normalize(random_vector(6, rng)));
  const auto index = build_index(refs);
  const auto serial = query_batch(index, queries, 10, 1);
  const auto parallel = query_batch(index, queries, 10, 4);
  EXPECT_EQ(serial, parallel);
  std::size_t i = 0;
  for (const auto& [id, v] : queries) {
    EXPECT_EQ(serial[i].query_id, id);
    EXPECT_EQ(serial[i], query_topk(index, v, 10, id));
    ++i;
  }
}

TEST(Index, Errors) {
  EmbeddingTable t(2);
  t.insert("fine", {1, 0});
  t.insert("null/ref", {0, 0});
  try {
    build_index(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
    EXPECT_NE(std::string(e.what()).find("null/ref"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { build_index(EmbeddingTable(3)); }), ErrorCode::EmptyTable);
  EmbeddingTable ok(2);
  ok.insert("a", {1, 0});
  const auto index = build_index(ok);
  EXPECT_EQ(code_of([&] { query_topk(index, std::vector<float>{1, 0, 0}, 1); }), ErrorCode::DimMismatch);
  EXPECT_EQ(code_of([&] { query_topk(index, std::vector<float>{1, 0}, 0); }), ErrorCode::Usage);
}

TEST(Index, HeldOutScaleGallery) {
  Xoshiro256 rng(951);
  EmbeddingTable t(12);
  for (int i = 0; i < 951; ++i) t.insert("sat/" + std::to_string(i), random_vector(12, rng));
  EXPECT_EQ(build_index(t).size(), 951u);
}
