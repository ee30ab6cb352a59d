#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <map>
#include <set>
#include <tuple>

#include "twerc/errors.hpp"
#include "twerc/graph.hpp"
#include "twerc/rng.hpp"

using namespace twerc;

namespace {

EventRecord engagement(Timestamp ts, UserId u, AdId a, AdvertiserId adv,
                       bool positive = true) {
  EventRecord r;
  r.ts = ts;
  r.user_id = u;
  r.ad_id = a;
  r.advertiser_id = adv;
  r.event = positive ? EventType::positive_engagement
                     : EventType::negative_engagement;
  r.objective = 1;
  return r;
}

using Triple = std::tuple<Vertex, Relation, Vertex>;

Triple triple_of(const GraphEdge& e) { return {e.head, e.rel, e.tail}; }

std::map<Triple, std::pair<std::uint64_t, Timestamp>> edge_map(
    const std::vector<GraphEdge>& edges) {
  std::map<Triple, std::pair<std::uint64_t, Timestamp>> m;
  for (const auto& e : edges) m[triple_of(e)] = {e.weight, e.ts};
  return m;
}

EventLog random_events(Rng& rng, int n, Timestamp span, int n_users, int n_ads) {
  EventLog log;
  for (int i = 0; i < n; ++i) {
    UserId u = rng.uniform_index(n_users);
    AdId a = rng.uniform_index(n_ads);
    log.records.push_back(engagement(
        static_cast<Timestamp>(rng.uniform_index(span + 1)), u, a,
        a % 7, rng.bernoulli(0.8)));
  }
  return log;
}

}  // namespace

TEST_CASE("empty log builds an empty graph") {
  EventLog log;
  GraphBuild b = build_graph(log, 0, 100);
  CHECK(b.graph.vertices.empty());
  CHECK(b.graph.edges.empty());
}

TEST_CASE("a single engagement yields user, ad, advertiser and both edges") {
  EventLog log;
  log.records.push_back(engagement(10, 1, 2, 3));
  GraphBuild b = build_graph(log, 0, 100);

  REQUIRE(b.graph.vertices.size() == 3);  // advertiser included for closure
  CHECK(b.graph.has_vertex({VertexType::user, 1}));
  CHECK(b.graph.has_vertex({VertexType::ad, 2}));
  CHECK(b.graph.has_vertex({VertexType::advertiser, 3}));

  REQUIRE(b.graph.edges.size() == 2);
  auto m = edge_map(b.graph.edges);
  Triple eng{{VertexType::user, 1}, Relation::engaged_pos, {VertexType::ad, 2}};
  Triple auth{{VertexType::ad, 2}, Relation::authored_by, {VertexType::advertiser, 3}};
  REQUIRE(m.count(eng) == 1);
  REQUIRE(m.count(auth) == 1);
  CHECK(m[eng].first == 1);
  CHECK(m[auth].first == 1);
}

TEST_CASE("repeated engagements collapse into one weighted edge") {
  EventLog log;
  log.records.push_back(engagement(10, 1, 2, 3));
  log.records.push_back(engagement(20, 1, 2, 3));
  log.records.push_back(engagement(30, 1, 2, 3));
  GraphBuild b = build_graph(log, 0, 100);

  // Brute-force multiset count over the raw events.
  std::map<std::pair<UserId, AdId>, std::uint64_t> naive;
  for (const auto& r : log.records)
    if (r.event == EventType::positive_engagement) ++naive[{r.user_id, r.ad_id}];

  auto m = edge_map(b.graph.edges);
  Triple eng{{VertexType::user, 1}, Relation::engaged_pos, {VertexType::ad, 2}};
  REQUIRE(m.count(eng) == 1);
  CHECK(m[eng].first == naive[{1, 2}]);
  CHECK(m[eng].second == 30);  // freshest contributing event
}

TEST_CASE("window filtering and cleaning report") {
  EventLog log;
  log.records.push_back(engagement(5, 1, 2, 3));
  log.records.push_back(engagement(150, 1, 2, 3));  // outside
  log.malformed_lines = 2;
  GraphBuild b = build_graph(log, 0, 100);
  CHECK(b.report.malformed == 2);
  CHECK(b.report.out_of_window == 1);
  auto m = edge_map(b.graph.edges);
  Triple eng{{VertexType::user, 1}, Relation::engaged_pos, {VertexType::ad, 2}};
  CHECK(m[eng].first == 1);

  CHECK_THROWS_AS(build_graph(log, 100, 100), ArgumentError);
  CHECK_THROWS_AS(build_graph(log, 200, 100), ArgumentError);
}

TEST_CASE("impressions and conversions are not engagement edges") {
  EventLog log;
  EventRecord imp = engagement(10, 1, 2, 3);
  imp.event = EventType::impression;
  log.records.push_back(imp);
  EventRecord conv = engagement(20, 1, 2, 3);
  conv.event = EventType::conversion;
  log.records.push_back(conv);
  GraphBuild b = build_graph(log, 0, 100);
  CHECK(b.graph.vertices.empty());
  CHECK(b.graph.edges.empty());
}

TEST_CASE("delta of identical snapshots is empty") {
  Rng rng(3);
  EventLog log = random_events(rng, 200, 100, 20, 30);
  HetGraph g = build_graph(log, 0, 100).graph;
  EdgeDelta d = delta_edges(g, g);
  CHECK(d.new_vertices.empty());
  CHECK(d.delta_edges.empty());
}

TEST_CASE("a new user with one edge is exactly the delta") {
  EventLog prev_log;
  prev_log.records.push_back(engagement(10, 1, 2, 3));
  EventLog curr_log = prev_log;
  curr_log.records.push_back(engagement(150, 9, 2, 3));

  HetGraph prev = build_graph(prev_log, 0, 100).graph;
  HetGraph curr = build_graph(curr_log, 0, 200).graph;
  EdgeDelta d = delta_edges(prev, curr);

  REQUIRE(d.new_vertices.size() == 1);
  CHECK(d.new_vertices[0] == Vertex{VertexType::user, 9});
  REQUIRE(d.delta_edges.size() == 1);
  CHECK(triple_of(d.delta_edges[0]) ==
        Triple{{VertexType::user, 9}, Relation::engaged_pos, {VertexType::ad, 2}});

  CHECK_THROWS_AS(delta_edges(curr, prev), ArgumentError);
}

TEST_CASE("randomized deltas match the brute-force recomputation") {
  Rng rng(11);
  for (int round = 0; round < 10; ++round) {
    EventLog phase1 = random_events(rng, 300, 100, 40, 60);
    EventLog all = phase1;
    EventLog phase2 = random_events(rng, 200, 100, 50, 60);
    for (auto& r : phase2.records) r.ts += 101;  // strictly after t1
    all.records.insert(all.records.end(), phase2.records.begin(),
                       phase2.records.end());

    HetGraph prev = build_graph(phase1, 0, 100).graph;
    HetGraph curr = build_graph(all, 0, 250).graph;
    EdgeDelta d = delta_edges(prev, curr);

    // Oracle: vertex set difference plus per-triple weight difference,
    // recomputed from scratch.
    std::set<Vertex> prev_v(prev.vertices.begin(), prev.vertices.end());
    std::set<Vertex> expect_new;
    for (const auto& v : curr.vertices)
      if (!prev_v.count(v)) expect_new.insert(v);
    CHECK(std::set<Vertex>(d.new_vertices.begin(), d.new_vertices.end()) ==
          expect_new);

    auto prev_m = edge_map(prev.edges);
    std::map<Triple, std::uint64_t> expect_delta;
    for (const auto& e : curr.edges) {
      bool touches_new = expect_new.count(e.head) || expect_new.count(e.tail);
      bool fresh = e.ts > prev.t_end;
      std::uint64_t before = 0;
      if (auto it = prev_m.find(triple_of(e)); it != prev_m.end())
        before = it->second.first;
      if ((touches_new || fresh) && e.weight > before)
        expect_delta[triple_of(e)] = e.weight - before;
    }
    std::map<Triple, std::uint64_t> got;
    for (const auto& e : d.delta_edges) got[triple_of(e)] = e.weight;
    CHECK(got == expect_delta);
  }
}

TEST_CASE("merge_edges") {
  SUBCASE("empty delta leaves the list unchanged") {
    EventLog log;
    log.records.push_back(engagement(10, 1, 2, 3));
    HetGraph g = build_graph(log, 0, 100).graph;
    auto merged = merge_edges(g.edges, EdgeDelta{});
    CHECK(edge_map(merged) == edge_map(g.edges));
  }

  SUBCASE("disjoint lists concatenate") {
    GraphEdge a{{VertexType::user, 1}, Relation::engaged_pos, {VertexType::ad, 2}, 10, 1};
    GraphEdge b{{VertexType::user, 5}, Relation::engaged_pos, {VertexType::ad, 6}, 20, 1};
    EdgeDelta d;
    d.delta_edges.push_back(b);
    auto merged = merge_edges({a}, d);
    CHECK(merged.size() == 2);
  }

  SUBCASE("overlapping triples sum weights") {
    GraphEdge a{{VertexType::user, 1}, Relation::engaged_pos, {VertexType::ad, 2}, 10, 2};
    GraphEdge b = a;
    b.weight = 3;
    b.ts = 50;
    EdgeDelta d;
    d.delta_edges.push_back(b);
    auto merged = merge_edges({a}, d);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].weight == 5);  // brute-force multiset sum: 2 + 3
    CHECK(merged[0].ts == 50);
  }
}

TEST_CASE("merge of prev with delta reproduces the larger snapshot") {
  Rng rng(17);
  for (int round = 0; round < 8; ++round) {
    EventLog phase1 = random_events(rng, 400, 1000, 40, 80);
    EventLog all = phase1;
    EventLog phase2 = random_events(rng, 300, 800, 55, 80);
    for (auto& r : phase2.records) r.ts += 1001;
    all.records.insert(all.records.end(), phase2.records.begin(),
                       phase2.records.end());

    HetGraph prev = build_graph(phase1, 0, 1000).graph;
    HetGraph curr = build_graph(all, 0, 2000).graph;
    auto merged = merge_edges(prev.edges, delta_edges(prev, curr));

    REQUIRE(merged.size() == curr.edges.size());
    auto got = edge_map(merged);
    auto want = edge_map(curr.edges);
    CHECK(got == want);
  }
}

TEST_CASE("graphs are referentially closed") {
  Rng rng(23);
  EventLog log = random_events(rng, 500, 300, 30, 50);
  HetGraph g = build_graph(log, 0, 300).graph;
  for (const auto& e : g.edges) {
    CHECK(g.has_vertex(e.head));
    CHECK(g.has_vertex(e.tail));
    CHECK(e.ts >= g.t_start);
    CHECK(e.ts <= g.t_end);
    CHECK(e.weight >= 1);
  }
}

TEST_CASE("graph snapshots round-trip through the jsonl files") {
  Rng rng(29);
  EventLog log = random_events(rng, 300, 200, 25, 40);
  HetGraph g = build_graph(log, 0, 200).graph;
  save_graph(g, "twerc_test_vertices.jsonl", "twerc_test_edges.jsonl");
  HetGraph g2 = load_graph("twerc_test_vertices.jsonl", "twerc_test_edges.jsonl");
  CHECK(g2.t_start == g.t_start);
  CHECK(g2.t_end == g.t_end);
  CHECK(g2.vertices == g.vertices);
  CHECK(edge_map(g2.edges) == edge_map(g.edges));
  std::remove("twerc_test_vertices.jsonl");
  std::remove("twerc_test_edges.jsonl");
}
