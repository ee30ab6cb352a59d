#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "twerc/embed.hpp"
#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

using namespace twerc;

namespace {

EntityKey user(std::uint64_t id) { return {VertexType::user, id}; }
EntityKey ad(std::uint64_t id) { return {VertexType::ad, id}; }

GraphEdge edge(EntityKey h, Relation r, EntityKey t, Timestamp ts = 0,
               std::uint64_t w = 1) {
  return {{h.type, h.id}, r, {t.type, t.id}, ts, w};
}

HetGraph graph_of(const std::vector<GraphEdge>& edges, Timestamp t_end = 100) {
  HetGraph g;
  g.t_start = 0;
  g.t_end = t_end;
  g.edges = edges;
  std::set<Vertex> vs;
  for (const auto& e : edges) {
    vs.insert(e.head);
    vs.insert(e.tail);
  }
  g.vertices.assign(vs.begin(), vs.end());
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tuple{a.head, a.rel, a.tail} < std::tuple{b.head, b.rel, b.tail};
  });
  return g;
}

TrainParams small_params() {
  TrainParams p;
  p.dim = 8;
  p.negatives_batch = 4;
  p.negatives_uniform = 4;
  p.epochs = 50;
  p.learning_rate = 0.1;
  p.batch_size = 4;
  p.loss_delta_stop = 0.0;
  p.seed = 7;
  return p;
}

bool same_vector(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double mean_entity_norm(const EmbeddingModel& m) {
  double s = 0.0;
  for (const auto& k : m.keys()) s += norm(m.vector_of(k));
  return s / static_cast<double>(m.entity_count());
}

}  // namespace

TEST_CASE("score_edge is the translated dot product") {
  EmbeddingModel m(2);
  m.add_entity(user(1), std::vector<double>{1.0, 0.0});
  m.add_entity(ad(1), std::vector<double>{1.0, 1.0});
  m.set_relation(Relation::engaged_pos, std::vector<double>{0.0, 1.0});
  CHECK(score_edge(m, user(1), Relation::engaged_pos, ad(1)) ==
        doctest::Approx(2.0).epsilon(1e-15));

  // Zero relation, orthogonal head and tail.
  EmbeddingModel z(2);
  z.add_entity(user(1), std::vector<double>{1.0, 0.0});
  z.add_entity(ad(1), std::vector<double>{0.0, 1.0});
  z.set_relation(Relation::engaged_pos, std::vector<double>{0.0, 0.0});
  CHECK(score_edge(z, user(1), Relation::engaged_pos, ad(1)) == 0.0);

  CHECK_THROWS_AS(score_edge(z, user(9), Relation::engaged_pos, ad(1)),
                  LookupError);
  CHECK_THROWS_AS(score_edge(z, user(1), Relation::authored_by, ad(1)),
                  LookupError);
}

TEST_CASE("score_edge matches an independent naive computation") {
  Rng rng(13);
  EmbeddingModel m(10);
  std::vector<double> h(10), r(10), t(10);
  for (int i = 0; i < 10; ++i) {
    h[i] = rng.gaussian();
    r[i] = rng.gaussian();
    t[i] = rng.gaussian();
  }
  m.add_entity(user(0), h);
  m.add_entity(ad(0), t);
  m.set_relation(Relation::engaged_pos, r);
  double naive = 0.0;
  for (int i = 0; i < 10; ++i) naive += (h[i] + r[i]) * t[i];
  CHECK(std::abs(score_edge(m, user(0), Relation::engaged_pos, ad(0)) - naive) <
        1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
  // 5-edge, 4-dim instance; the acceptance gate runs the same check.
  const std::uint32_t dim = 4;
  EmbeddingModel m(dim);
  Rng rng(101);
  for (std::uint64_t i = 0; i < 2; ++i)
    m.add_entity(user(i), random_entity_vector(rng, dim));
  for (std::uint64_t i = 0; i < 3; ++i)
    m.add_entity(ad(i), random_entity_vector(rng, dim));
  m.set_relation(Relation::engaged_pos, random_entity_vector(rng, dim));
  m.set_relation(Relation::engaged_neg, random_entity_vector(rng, dim));

  std::vector<TrainSample> batch = {
      {user(0), Relation::engaged_pos, ad(0), {ad(1), ad(2)}},
      {user(0), Relation::engaged_pos, ad(1), {ad(0), ad(2), ad(2)}},
      {user(1), Relation::engaged_pos, ad(2), {ad(0)}},
      {user(1), Relation::engaged_neg, ad(1), {ad(2), ad(0)}},
      {user(0), Relation::engaged_neg, ad(2), {ad(1)}},
  };
  const double reg = 1e-3;
  LossGrad lg = softmax_translation_loss(m, batch, reg);

  const double h = 1e-4;
  auto fd_check = [&](std::span<double> v, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      double orig = v[i];
      v[i] = orig + h;
      double up = softmax_translation_loss(m, batch, reg).loss;
      v[i] = orig - h;
      double down = softmax_translation_loss(m, batch, reg).loss;
      v[i] = orig;
      double fd = (up - down) / (2.0 * h);
      double rel = std::abs(grad[i] - fd) /
                   std::max({std::abs(grad[i]), std::abs(fd), 1e-4});
      CHECK(rel < 1e-4);
    }
  };
  for (const auto& [key, grad] : lg.entity_grad)
    fd_check(m.mutable_vector(key), grad);
  for (const auto& [rel, grad] : lg.relation_grad)
    fd_check(m.mutable_relation(rel), grad);
}

TEST_CASE("training contracts") {
  HetGraph g = graph_of({
      edge(user(1), Relation::engaged_pos, ad(1)),
      edge(user(2), Relation::engaged_pos, ad(2)),
  });
  TrainParams p = small_params();

  SUBCASE("zero epochs with init returns init unchanged") {
    EmbeddingModel base = train(g, p);
    TrainParams zero = p;
    zero.epochs = 0;
    EmbeddingModel again = train(g, zero, &base);
    REQUIRE(again.entity_count() == base.entity_count());
    for (const auto& k : base.keys())
      CHECK(same_vector(again.vector_of(k), base.vector_of(k)));
  }

  SUBCASE("empty graph is a training error") {
    HetGraph empty;
    empty.t_end = 1;
    CHECK_THROWS_AS(train(empty, p), TrainingError);
  }

  SUBCASE("co-engagement ordering emerges at convergence") {
    TrainParams conv = p;
    conv.epochs = 300;
    EmbeddingModel m = train(g, conv);
    double own = score_edge(m, user(1), Relation::engaged_pos, ad(1));
    double other = score_edge(m, user(1), Relation::engaged_pos, ad(2));
    CHECK(own > other);
  }

  SUBCASE("fully frozen training is a no-op on the vectors") {
    EmbeddingModel base = train(g, p);
    EmbeddingModel frozen = base;
    for (const auto& k : base.keys()) frozen.frozen.insert(k);
    TrainParams more = p;
    more.epochs = 20;
    EmbeddingModel after = train(g, more, &frozen);
    for (const auto& k : base.keys())
      CHECK(same_vector(after.vector_of(k), base.vector_of(k)));
  }
}

TEST_CASE("regularization shrinks embedding norms") {
  HetGraph g = graph_of({
      edge(user(1), Relation::engaged_pos, ad(1)),
      edge(user(2), Relation::engaged_pos, ad(2)),
      edge(user(1), Relation::engaged_pos, ad(3)),
      edge(user(3), Relation::engaged_pos, ad(2)),
  });
  TrainParams p = small_params();
  p.epochs = 30;
  p.reg = 0.0;
  EmbeddingModel loose = train(g, p);
  p.reg = 1e3;
  EmbeddingModel tight = train(g, p);
  CHECK(mean_entity_norm(tight) < mean_entity_norm(loose));
}

TEST_CASE("tic freezes the old manifold") {
  HetGraph g = graph_of({
      edge(user(1), Relation::engaged_pos, ad(1)),
      edge(user(2), Relation::engaged_pos, ad(2)),
      edge(user(3), Relation::engaged_pos, ad(1)),
  });
  TrainParams p = small_params();
  EmbeddingModel base = train(g, p);

  SUBCASE("empty delta only bumps tic_step") {
    EmbeddingModel after = tic_update(base, EdgeDelta{}, p);
    CHECK(after.tic_step == base.tic_step + 1);
    CHECK(after.toc_epoch == base.toc_epoch);
    for (const auto& k : base.keys())
      CHECK(same_vector(after.vector_of(k), base.vector_of(k)));
  }

  SUBCASE("old vertices are bit-identical, new vertices trained") {
    EdgeDelta delta;
    delta.new_vertices.push_back({VertexType::user, 9});
    delta.delta_edges.push_back(edge(user(9), Relation::engaged_pos, ad(1), 150));
    TrainParams tp = small_params();
    tp.epochs = 100;
    EmbeddingModel after = tic_update(base, delta, tp);

    for (const auto& k : base.keys())
      CHECK(same_vector(after.vector_of(k), base.vector_of(k)));
    CHECK(after.has_entity(user(9)));

    // The random init state is what a zero-epoch tic returns; training
    // must have moved the new vertex away from it.
    TrainParams zero = tp;
    zero.epochs = 0;
    EmbeddingModel at_init = tic_update(base, delta, zero);
    CHECK_FALSE(same_vector(after.vector_of(user(9)),
                            at_init.vector_of(user(9))));

    // Relations are part of the frozen manifold during a tic.
    for (const auto& [rel, vec] : base.relations())
      CHECK(same_vector(after.relation_vector(rel), vec));
  }

  SUBCASE("a new user attached to an ad lands near it") {
    // 20 ads engaged by 20 users, then one new user with a single edge to
    // ad 1: its trained vector should score ad 1 above 95% of the ads.
    std::vector<GraphEdge> edges;
    for (std::uint64_t i = 1; i <= 20; ++i)
      edges.push_back(edge(user(i), Relation::engaged_pos, ad(i)));
    HetGraph big = graph_of(edges);
    TrainParams tp = small_params();
    tp.epochs = 150;
    EmbeddingModel trained = train(big, tp);

    EdgeDelta delta;
    delta.new_vertices.push_back({VertexType::user, 99});
    delta.delta_edges.push_back(edge(user(99), Relation::engaged_pos, ad(1), 150));
    EmbeddingModel after = tic_update(trained, delta, tp);

    double target = score_edge(after, user(99), Relation::engaged_pos, ad(1));
    int below = 0;
    for (std::uint64_t i = 2; i <= 20; ++i)
      below += score_edge(after, user(99), Relation::engaged_pos, ad(i)) < target;
    CHECK(below >= 18);  // 18/19 > 95%
  }
}

TEST_CASE("toc relaxes the whole graph") {
  HetGraph g = graph_of({
      edge(user(1), Relation::engaged_pos, ad(1)),
      edge(user(2), Relation::engaged_pos, ad(2)),
  });
  TrainParams p = small_params();
  EmbeddingModel base = train(g, p);

  SUBCASE("zero epochs bumps the version only") {
    TrainParams zero = p;
    zero.epochs = 0;
    EmbeddingModel after = toc_update(base, g.edges, zero);
    CHECK(after.toc_epoch == base.toc_epoch + 1);
    CHECK(after.tic_step == 0);
    CHECK(after.frozen.empty());
    for (const auto& k : base.keys())
      CHECK(same_vector(after.vector_of(k), base.vector_of(k)));
  }

  SUBCASE("toc after tic does not lose ground on the merged edges") {
    EdgeDelta delta;
    delta.new_vertices.push_back({VertexType::user, 9});
    delta.new_vertices.push_back({VertexType::ad, 9});
    delta.delta_edges.push_back(edge(user(9), Relation::engaged_pos, ad(9), 150));
    delta.delta_edges.push_back(edge(user(1), Relation::engaged_pos, ad(9), 160));

    EmbeddingModel ticd = tic_update(base, delta, p);
    auto merged = merge_edges(g.edges, delta);
    TrainParams tocp = p;
    tocp.epochs = 100;
    EmbeddingModel tocd = toc_update(ticd, merged, tocp);

    CHECK(tocd.frozen.empty());
    CHECK(tocd.toc_epoch == ticd.toc_epoch + 1);
    CHECK(tocd.tic_step == 0);
    double tic_loss = eval_loss(ticd, merged, p, 99);
    double toc_loss = eval_loss(tocd, merged, p, 99);
    CHECK(toc_loss <= tic_loss);
  }
}

TEST_CASE("time-decayed user embeddings") {
  DecayParams d;

  SUBCASE("single engagement returns that vector exactly") {
    auto out = decay_user_embedding({{{1.0, 2.0, 3.0}, 500}}, 1000, d);
    REQUIRE(out.has_value());
    CHECK((*out)[0] == 1.0);
    CHECK((*out)[1] == 2.0);
    CHECK((*out)[2] == 3.0);
  }

  SUBCASE("equal timestamps average arithmetically") {
    auto out = decay_user_embedding({{{2.0, 0.0}, 10}, {{0.0, 4.0}, 10}}, 100, d);
    REQUIRE(out.has_value());
    CHECK((*out)[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((*out)[1] == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("half-life weighting matches the hand evaluation") {
    // lambda = ln2/day: v1 one day old gets weight 1/2, v2 fresh gets 1.
    DecayParams half;
    half.lambda = std::log(2.0);
    Timestamp day = 86400;
    auto out = decay_user_embedding(
        {{{1.0, 0.0}, 0}, {{0.0, 1.0}, day}}, day, half);
    REQUIRE(out.has_value());
    CHECK((*out)[0] == doctest::Approx(0.5 / 1.5).epsilon(1e-12));
    CHECK((*out)[1] == doctest::Approx(1.0 / 1.5).epsilon(1e-12));
  }

  SUBCASE("last_n truncation keeps the most recent engagements") {
    DecayParams capped;
    capped.last_n = 1;
    auto out = decay_user_embedding(
        {{{1.0}, 10}, {{5.0}, 20}}, 100, capped);
    REQUIRE(out.has_value());
    CHECK((*out)[0] == 5.0);
  }

  SUBCASE("output lies in the convex hull of the inputs") {
    Rng rng(3);
    for (int round = 0; round < 50; ++round) {
      std::vector<TimedVector> tv;
      int n = 1 + rng.uniform_index(10);
      for (int i = 0; i < n; ++i)
        tv.push_back({{rng.gaussian()}, static_cast<Timestamp>(rng.uniform_index(1000))});
      auto out = decay_user_embedding(tv, 1000, d);
      REQUIRE(out.has_value());
      double lo = 1e300, hi = -1e300;
      for (const auto& e : tv) {
        lo = std::min(lo, e.vec[0]);
        hi = std::max(hi, e.vec[0]);
      }
      CHECK((*out)[0] >= lo - 1e-12);
      CHECK((*out)[0] <= hi + 1e-12);
    }
  }

  SUBCASE("error paths") {
    CHECK(!decay_user_embedding({}, 100, d).has_value());
    CHECK_THROWS_AS(decay_user_embedding({{{1.0}, 200}}, 100, d), ArgumentError);
    DecayParams bad;
    bad.lambda = 0.0;
    CHECK_THROWS_AS(decay_user_embedding({{{1.0}, 0}}, 100, bad), ConfigError);
  }
}

TEST_CASE("feature propagation over the follow graph") {
  const std::uint32_t dim = 4;
  EmbeddingModel table(dim);
  Rng rng(31);
  for (std::uint64_t i = 0; i < 300; ++i)
    table.add_entity(user(i), random_entity_vector(rng, dim));

  SUBCASE("one embedded following is copied exactly") {
    std::map<UserId, std::vector<UserId>> fg{{1000, {5}}};
    EmbeddingModel out = propagate_embeddings(fg, table, 100, 1);
    REQUIRE(out.has_entity(user(1000)));
    CHECK(same_vector(out.vector_of(user(1000)), table.vector_of(user(5))));
  }

  SUBCASE("two embedded followings give the midpoint") {
    std::map<UserId, std::vector<UserId>> fg{{1000, {5, 6}}};
    EmbeddingModel out = propagate_embeddings(fg, table, 100, 1);
    auto v = out.vector_of(user(1000));
    auto a = table.vector_of(user(5));
    auto b = table.vector_of(user(6));
    for (std::uint32_t i = 0; i < dim; ++i)
      CHECK(v[i] == doctest::Approx(0.5 * (a[i] + b[i])).epsilon(1e-12));
  }

  SUBCASE("users with no embedded followings stay missing") {
    std::map<UserId, std::vector<UserId>> fg{{1000, {5000, 6000}}};
    EmbeddingModel out = propagate_embeddings(fg, table, 100, 1);
    CHECK_FALSE(out.has_entity(user(1000)));
  }

  SUBCASE("existing embeddings are never modified") {
    std::map<UserId, std::vector<UserId>> fg{{7, {5, 6}}, {1000, {7}}};
    EmbeddingModel out = propagate_embeddings(fg, table, 100, 1);
    CHECK(same_vector(out.vector_of(user(7)), table.vector_of(user(7))));
  }

  SUBCASE("cap sampling matches an independent replay of the sampler") {
    const std::uint64_t cap = 100, seed = 55, who = 9999;
    std::vector<UserId> followings;
    for (std::uint64_t i = 0; i < 250; ++i) followings.push_back(i);
    std::map<UserId, std::vector<UserId>> fg{{who, followings}};
    EmbeddingModel out = propagate_embeddings(fg, table, cap, seed);

    // Replay: ascending eligible ids, per-user seed hash_key(seed, user),
    // partial Fisher-Yates of length cap, arithmetic mean.
    std::vector<UserId> pool = followings;
    Rng r(hash_key(seed, who));
    for (std::uint64_t i = 0; i < cap; ++i) {
      std::uint64_t j = i + r.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(cap);
    std::vector<double> mean(dim, 0.0);
    for (UserId f : pool) {
      auto v = table.vector_of(user(f));
      for (std::uint32_t i = 0; i < dim; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(cap);

    auto got = out.vector_of(user(who));
    for (std::uint32_t i = 0; i < dim; ++i)
      CHECK(got[i] == doctest::Approx(mean[i]).epsilon(1e-12));
  }
}

TEST_CASE("embedding table round-trips byte-identically") {
  HetGraph g = graph_of({
      edge(user(1), Relation::engaged_pos, ad(1)),
      edge(user(2), Relation::engaged_neg, ad(2)),
  });
  TrainParams p = small_params();
  p.epochs = 5;
  EmbeddingModel m = train(g, p);

  save_embeddings(m, "twerc_embed_a.bin");
  EmbeddingModel loaded = load_embeddings("twerc_embed_a.bin");
  save_embeddings(loaded, "twerc_embed_b.bin");

  std::ifstream fa("twerc_embed_a.bin", std::ios::binary);
  std::ifstream fb("twerc_embed_b.bin", std::ios::binary);
  std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(a == b);
  CHECK(!a.empty());
  CHECK(a.substr(0, 4) == "TWRC");
  std::remove("twerc_embed_a.bin");
  std::remove("twerc_embed_b.bin");

  CHECK_THROWS_AS(load_embeddings("missing.bin"), MissingInputError);
}
