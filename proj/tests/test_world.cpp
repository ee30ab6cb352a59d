#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"
#include "twerc/world.hpp"

using namespace twerc;

namespace {

WorldConfig small_config() {
  WorldConfig c;
  c.n_users = 200;
  c.n_advertisers = 20;
  c.n_ads = 400;
  c.seed = 42;
  return c;
}

std::string temp_path(const char* name) {
  return std::string("twerc_world_test_") + name;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  WorldConfig c = small_config();
  c.n_users = 0;
  try {
    gen_world(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "n_users");
  }

  c = small_config();
  c.bid_sigma = -0.1;
  try {
    gen_world(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "bid_sigma");
  }
}

TEST_CASE("same config and seed give byte-identical serialized worlds") {
  WorldConfig c = small_config();
  World a = gen_world(c);
  World b = gen_world(c);
  CHECK(world_to_json(a) == world_to_json(b));
}

TEST_CASE("latent vectors are unit norm and references are valid") {
  World w = gen_world(small_config());
  for (const auto& u : w.users) {
    CHECK(std::abs(norm(u.latent) - 1.0) < 1e-6);
    for (UserId f : u.followings) CHECK(f < w.users.size());
  }
  for (const auto& a : w.ads) {
    CHECK(std::abs(norm(a.latent) - 1.0) < 1e-6);
    CHECK(a.advertiser_id < w.advertisers.size());
    CHECK(a.campaign_id < w.campaigns.size());
    CHECK(a.bid >= 0.0);
    CHECK(a.remaining_budget >= 0.0);
  }
}

TEST_CASE("mean ad bid tracks the configured log-normal mean at n_ads=5000") {
  WorldConfig c;
  c.n_users = 50;  // bids only depend on the ad stream
  c.n_ads = 5000;
  c.seed = 42;
  World w = gen_world(c);
  double mean = 0.0;
  for (const auto& a : w.ads) mean += a.bid;
  mean /= static_cast<double>(w.ads.size());
  CHECK(mean == doctest::Approx(c.bid_mean).epsilon(0.05));
}

TEST_CASE("engagement probability follows the latent logistic form") {
  World w = gen_world(small_config());

  // Aligned pair: dot = 1.
  w.users[0].latent = w.ads[0].latent;
  EngagementProb p = true_engagement_prob(w, 0, 0);
  CHECK(p.p_pos ==
        doctest::Approx(sigmoid(1.0 + w.pos_logit_offset(w.ads[0].objective)))
            .epsilon(1e-12));
  CHECK(p.p_neg == doctest::Approx(sigmoid(-1.0 + w.b_neg)).epsilon(1e-12));

  // Orthogonal pair: dot = 0.
  std::vector<double> e1(w.config.latent_dim, 0.0), e2(w.config.latent_dim, 0.0);
  e1[0] = 1.0;
  e2[1] = 1.0;
  w.users[1].latent = e1;
  w.ads[1].latent = e2;
  p = true_engagement_prob(w, 1, 1);
  CHECK(p.p_pos ==
        doctest::Approx(sigmoid(w.pos_logit_offset(w.ads[1].objective)))
            .epsilon(1e-12));

  CHECK_THROWS_AS(true_engagement_prob(w, w.users.size(), 0), LookupError);
  CHECK_THROWS_AS(true_engagement_prob(w, 0, w.ads.size()), LookupError);
}

TEST_CASE("population mean of p_pos matches the configured base rate") {
  WorldConfig c;
  c.seed = 42;  // shipped default world dimensions
  World w = gen_world(c);
  Rng rng(7);
  double mean = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    UserId u = rng.uniform_index(w.users.size());
    AdId a = rng.uniform_index(w.ads.size());
    mean += true_engagement_prob(w, u, a).p_pos;
  }
  mean /= n;
  CHECK(std::abs(mean - c.base_engagement_rate) < 0.01);
}

TEST_CASE("request generation") {
  World w = gen_world(small_config());

  SUBCASE("single request lands inside the span") {
    RequestLog log = gen_requests(w, 1, 1000, {1.1, 3});
    REQUIRE(log.size() == 1);
    CHECK(log[0].ts >= 0);
    CHECK(log[0].ts <= 1000);
    CHECK(log[0].user_id < w.users.size());
  }

  SUBCASE("identical seeds give identical logs") {
    RequestLog a = gen_requests(w, 500, 86400, {1.1, 9});
    RequestLog b = gen_requests(w, 500, 86400, {1.1, 9});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].ts == b[i].ts);
      CHECK(a[i].user_id == b[i].user_id);
      CHECK(a[i].request_id == b[i].request_id);
    }
  }

  SUBCASE("top one percent of users hold at least 15 percent of requests") {
    WorldConfig c;
    c.seed = 42;
    World big = gen_world(c);
    RequestLog log = gen_requests(big, 50000, 21 * 86400, {1.1, 1});
    std::map<UserId, std::uint64_t> counts;
    for (const auto& r : log) ++counts[r.user_id];
    std::vector<std::uint64_t> sorted;
    for (const auto& [u, n] : counts) sorted.push_back(n);
    std::sort(sorted.rbegin(), sorted.rend());
    std::size_t top = static_cast<std::size_t>(
        std::ceil(0.01 * static_cast<double>(big.users.size())));
    std::uint64_t head = 0;
    for (std::size_t i = 0; i < top && i < sorted.size(); ++i) head += sorted[i];
    CHECK(static_cast<double>(head) / static_cast<double>(log.size()) >= 0.15);
  }

  SUBCASE("degenerate counts are rejected") {
    CHECK_THROWS_AS(gen_requests(w, 0, 1000), ConfigError);
  }
}

TEST_CASE("engagement sampling") {
  World w = gen_world(small_config());

  SUBCASE("empty impression list gives an empty log") {
    EventLog log = sample_engagements(w, {}, 1);
    CHECK(log.records.empty());
  }

  SUBCASE("forcing p_pos to 1 engages every impression") {
    std::vector<ImpressionEvent> imps;
    for (int i = 0; i < 50; ++i)
      imps.push_back({i * 100, static_cast<UserId>(i % w.users.size()),
                      static_cast<AdId>(i % w.ads.size())});
    EngagementOverrides ov;
    ov.p_pos = 1.0;
    ov.p_neg = 0.0;
    EventLog log = sample_engagements(w, imps, 1, ov);
    int pos = 0;
    for (const auto& r : log.records)
      pos += r.event == EventType::positive_engagement;
    CHECK(pos == 50);
  }

  SUBCASE("engagement rate tracks the oracle expectation") {
    Rng rng(5);
    std::vector<ImpressionEvent> imps;
    double expected = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      UserId u = rng.uniform_index(w.users.size());
      AdId a = rng.uniform_index(w.ads.size());
      imps.push_back({i, u, a});
      expected += true_engagement_prob(w, u, a).p_pos;
    }
    expected /= n;
    EventLog log = sample_engagements(w, imps, 77);
    int pos = 0;
    for (const auto& r : log.records)
      pos += r.event == EventType::positive_engagement;
    double rate = static_cast<double>(pos) / n;
    CHECK(std::abs(rate - expected) / expected < 0.10);
  }

  SUBCASE("every engagement has a preceding impression for its pair") {
    std::vector<ImpressionEvent> imps;
    Rng rng(6);
    for (int i = 0; i < 2000; ++i)
      imps.push_back({i * 10, rng.uniform_index(w.users.size()),
                      rng.uniform_index(w.ads.size())});
    EventLog log = sample_engagements(w, imps, 13);
    std::set<std::pair<UserId, AdId>> seen;
    Timestamp last = 0;
    for (const auto& r : log.records) {
      CHECK(r.ts >= last);
      last = r.ts;
      if (r.event == EventType::impression)
        seen.insert({r.user_id, r.ad_id});
      else
        CHECK(seen.count({r.user_id, r.ad_id}) == 1);
    }
  }

  SUBCASE("unknown ids are rejected") {
    std::vector<ImpressionEvent> imps{{0, 0, w.ads.size()}};
    CHECK_THROWS_AS(sample_engagements(w, imps, 1), LookupError);
  }
}

TEST_CASE("empirical frequency converges to the oracle within 3 sigma") {
  World w = gen_world(small_config());
  const UserId u = 3;
  const AdId a = 7;
  double p = true_engagement_prob(w, u, a).p_pos;
  const int n = 20000;
  std::vector<ImpressionEvent> imps(n, {0, u, a});
  for (int i = 0; i < n; ++i) imps[i].ts = i;
  EventLog log = sample_engagements(w, imps, 21);
  int pos = 0;
  for (const auto& r : log.records)
    pos += r.event == EventType::positive_engagement;
  double freq = static_cast<double>(pos) / n;
  double sigma = std::sqrt(p * (1.0 - p) / n);
  CHECK(std::abs(freq - p) <= 3.0 * sigma);
}

TEST_CASE("world and log files round-trip") {
  World w = gen_world(small_config());
  std::string wp = temp_path("world.json");
  save_world(w, wp);
  World w2 = load_world(wp);
  CHECK(world_to_json(w) == world_to_json(w2));
  std::remove(wp.c_str());

  RequestLog reqs = gen_requests(w, 100, 86400, {1.1, 2});
  std::string rp = temp_path("requests.jsonl");
  save_request_log(reqs, rp);
  RequestLog reqs2 = load_request_log(rp);
  REQUIRE(reqs2.size() == reqs.size());
  CHECK(reqs2[50].user_id == reqs[50].user_id);
  std::remove(rp.c_str());

  std::vector<ImpressionEvent> imps{{0, 0, 0}, {5, 1, 2}};
  EventLog events = sample_engagements(w, imps, 3);
  std::string ep = temp_path("events.jsonl");
  save_event_log(events, ep);
  EventLog events2 = load_event_log(ep);
  CHECK(events2.records.size() == events.records.size());
  CHECK(events2.malformed_lines == 0);

  // A malformed line is dropped and counted, not fatal.
  {
    std::ofstream append(ep, std::ios::app);
    append << "{\"ts\": broken\n";
    append << "{\"ts\": 1, \"user_id\": 0}\n";
  }
  EventLog events3 = load_event_log(ep);
  CHECK(events3.records.size() == events.records.size());
  CHECK(events3.malformed_lines == 2);
  std::remove(ep.c_str());

  CHECK_THROWS_AS(load_world("does_not_exist.json"), MissingInputError);
}
