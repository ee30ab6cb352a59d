#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "twerc/ann.hpp"
#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

using namespace twerc;

namespace {

std::vector<AnnItem> random_items(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<AnnItem> items(n);
  for (std::size_t i = 0; i < n; ++i) {
    items[i].id = i;
    items[i].vec.resize(dim);
    for (double& x : items[i].vec) x = rng.gaussian();
  }
  return items;
}

std::vector<double> random_query(Rng& rng, std::size_t dim) {
  std::vector<double> q(dim);
  for (double& x : q) x = rng.gaussian();
  return q;
}

// Independent oracle: naive max-inner-product scan with the documented
// tie rule.
std::vector<AnnResult> naive_scan(const std::vector<AnnItem>& items,
                                  std::span<const double> q, std::size_t k,
                                  const AnnFilter& filter = nullptr) {
  std::vector<AnnResult> all;
  for (const auto& it : items) {
    if (filter && !filter(it.id)) continue;
    double s = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d) s += it.vec[d] * q[d];
    all.push_back({it.id, s});
  }
  std::sort(all.begin(), all.end(), [](const AnnResult& a, const AnnResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::vector<std::uint64_t> ids_of(const std::vector<AnnResult>& r) {
  std::vector<std::uint64_t> out;
  for (const auto& x : r) out.push_back(x.id);
  return out;
}

}  // namespace

TEST_CASE("exact index basics") {
  SUBCASE("a single item is everyone's nearest neighbor") {
    AnnIndex idx = build_exact({{7, {0.5, -0.5}}});
    auto r = idx.query(std::vector<double>{1.0, 1.0}, 3);
    REQUIRE(r.size() == 1);
    CHECK(r[0].id == 7);
  }

  SUBCASE("duplicate vectors rank by ascending id") {
    AnnIndex idx = build_exact({{9, {1.0, 0.0}}, {4, {1.0, 0.0}}, {6, {0.0, 1.0}}});
    auto r = idx.query(std::vector<double>{1.0, 0.0}, 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].id == 4);
    CHECK(r[1].id == 9);
  }

  SUBCASE("matches an independently coded naive scan") {
    Rng rng(3);
    auto items = random_items(rng, 1000, 16);
    AnnIndex idx = build_exact(items);
    for (int q = 0; q < 20; ++q) {
      auto query = random_query(rng, 16);
      auto got = idx.query(query, 10);
      auto want = naive_scan(items, query, 10);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].id == want[i].id);
        CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
      }
    }
  }

  SUBCASE("results are sorted by score desc then id asc") {
    Rng rng(5);
    auto items = random_items(rng, 200, 8);
    AnnIndex idx = build_exact(items);
    auto r = idx.query(random_query(rng, 8), 200);
    for (std::size_t i = 1; i < r.size(); ++i) {
      bool ordered = r[i - 1].score > r[i].score ||
                     (r[i - 1].score == r[i].score && r[i - 1].id < r[i].id);
      CHECK(ordered);
    }
  }

  SUBCASE("argument errors") {
    CHECK_THROWS_AS(build_exact({}), ArgumentError);
    CHECK_THROWS_AS(build_exact({{0, {1.0}}, {1, {1.0, 2.0}}}), ArgumentError);
    CHECK_THROWS_AS(build_exact({{0, {1.0}}, {0, {2.0}}}), ArgumentError);
    AnnIndex idx = build_exact({{0, {1.0, 2.0}}});
    CHECK_THROWS_AS(idx.query(std::vector<double>{1.0}, 1), ArgumentError);
    CHECK_THROWS_AS(idx.query(std::vector<double>{1.0, 2.0}, 0), ArgumentError);
  }
}

TEST_CASE("query filters") {
  Rng rng(7);
  auto items = random_items(rng, 300, 12);
  AnnIndex idx = build_exact(items);
  auto query = random_query(rng, 12);

  SUBCASE("a filter rejecting everything returns nothing") {
    auto r = idx.query(query, 5, [](std::uint64_t) { return false; });
    CHECK(r.empty());
  }

  SUBCASE("k beyond the corpus returns the whole corpus sorted") {
    auto r = idx.query(query, 1000);
    CHECK(r.size() == items.size());
  }

  SUBCASE("random 50% filter equals the naive filtered scan") {
    AnnFilter keep = [](std::uint64_t id) { return id % 2 == 0; };
    auto got = idx.query(query, 20, keep);
    auto want = naive_scan(items, query, 20, keep);
    CHECK(ids_of(got) == ids_of(want));
  }

  SUBCASE("filtered results are the filtered projection of unfiltered") {
    AnnFilter keep = [](std::uint64_t id) { return id % 3 != 0; };
    auto unfiltered = idx.query(query, items.size());
    std::vector<std::uint64_t> projected;
    for (const auto& r : unfiltered)
      if (keep(r.id) && projected.size() < 25) projected.push_back(r.id);
    auto filtered = idx.query(query, 25, keep);
    CHECK(ids_of(filtered) == projected);
  }
}

TEST_CASE("hnsw index") {
  HnswParams params;

  SUBCASE("tiny corpora are exact") {
    Rng rng(11);
    auto items = random_items(rng, 12, 8);  // n <= M = 16
    AnnIndex hnsw = build_hnsw(items, params, 1);
    AnnIndex exact = build_exact(items);
    for (int q = 0; q < 10; ++q) {
      auto query = random_query(rng, 8);
      CHECK(ids_of(hnsw.query(query, 5)) == ids_of(exact.query(query, 5)));
    }
  }

  SUBCASE("recall@10 on random vectors meets the quality gate") {
    Rng rng(13);
    auto items = random_items(rng, 2000, 32);
    AnnIndex hnsw = build_hnsw(items, params, 1);
    AnnIndex exact = build_exact(items);
    std::vector<std::vector<std::uint64_t>> approx, truth;
    for (int q = 0; q < 100; ++q) {
      auto query = random_query(rng, 32);
      approx.push_back(ids_of(hnsw.query(query, 10)));
      truth.push_back(ids_of(exact.query(query, 10)));
    }
    CHECK(recall_at_k(approx, truth, 10) >= 0.95);
  }

  SUBCASE("same seed gives identical results") {
    Rng rng(17);
    auto items = random_items(rng, 500, 16);
    AnnIndex a = build_hnsw(items, params, 9);
    AnnIndex b = build_hnsw(items, params, 9);
    for (int q = 0; q < 10; ++q) {
      auto query = random_query(rng, 16);
      auto ra = a.query(query, 10);
      auto rb = b.query(query, 10);
      REQUIRE(ra.size() == rb.size());
      for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].id == rb[i].id);
        CHECK(ra[i].score == rb[i].score);
      }
    }
  }

  SUBCASE("filtered hnsw query over-fetches then filters") {
    Rng rng(19);
    auto items = random_items(rng, 1000, 16);
    AnnIndex hnsw = build_hnsw(items, params, 3);
    AnnIndex exact = build_exact(items);
    AnnFilter keep = [](std::uint64_t id) { return id % 2 == 1; };
    std::vector<std::vector<std::uint64_t>> approx, truth;
    for (int q = 0; q < 30; ++q) {
      auto query = random_query(rng, 16);
      approx.push_back(ids_of(hnsw.query(query, 10, keep)));
      truth.push_back(ids_of(exact.query(query, 10, keep)));
    }
    CHECK(recall_at_k(approx, truth, 10) >= 0.9);
  }
}

TEST_CASE("recall_at_k") {
  std::vector<std::vector<std::uint64_t>> a{{1, 2, 3, 4}};
  std::vector<std::vector<std::uint64_t>> b{{1, 2, 3, 4}};
  CHECK(recall_at_k(a, b, 4) == 1.0);
  std::vector<std::vector<std::uint64_t>> c{{5, 6, 7, 8}};
  CHECK(recall_at_k(a, c, 4) == 0.0);
  std::vector<std::vector<std::uint64_t>> half{{1, 2, 9, 10}};
  CHECK(recall_at_k(half, b, 4) == 0.5);
  CHECK_THROWS_AS(recall_at_k(a, {}, 4), ArgumentError);
}

TEST_CASE("index files round-trip byte-identically") {
  Rng rng(23);
  auto items = random_items(rng, 300, 8);

  SUBCASE("hnsw") {
    AnnIndex idx = build_hnsw(items, HnswParams{}, 5);
    idx.save("twerc_ann_a.bin");
    AnnIndex loaded = AnnIndex::load("twerc_ann_a.bin");
    CHECK(loaded.kind() == AnnIndex::Kind::hnsw);
    loaded.save("twerc_ann_b.bin");

    std::ifstream fa("twerc_ann_a.bin", std::ios::binary);
    std::ifstream fb("twerc_ann_b.bin", std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
    CHECK(a.substr(0, 4) == "TWAN");

    // Loaded index answers queries like the original. Vectors pass
    // through f32, so compare ids only at matching precision.
    for (int q = 0; q < 5; ++q) {
      auto query = random_query(rng, 8);
      CHECK(ids_of(idx.query(query, 5)) == ids_of(loaded.query(query, 5)));
    }
    std::remove("twerc_ann_a.bin");
    std::remove("twerc_ann_b.bin");
  }

  SUBCASE("exact") {
    AnnIndex idx = build_exact(items);
    idx.save("twerc_ann_c.bin");
    AnnIndex loaded = AnnIndex::load("twerc_ann_c.bin");
    CHECK(loaded.kind() == AnnIndex::Kind::exact);
    loaded.save("twerc_ann_d.bin");
    std::ifstream fa("twerc_ann_c.bin", std::ios::binary);
    std::ifstream fb("twerc_ann_d.bin", std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
    std::remove("twerc_ann_c.bin");
    std::remove("twerc_ann_d.bin");
  }

  SUBCASE("missing and malformed files are rejected") {
    CHECK_THROWS_AS(AnnIndex::load("no_such_index.bin"), MissingInputError);
    std::ofstream junk("twerc_ann_junk.bin", std::ios::binary);
    junk << "NOTANINDEX";
    junk.close();
    CHECK_THROWS_AS(AnnIndex::load("twerc_ann_junk.bin"), FormatError);
    std::remove("twerc_ann_junk.bin");
  }
}
