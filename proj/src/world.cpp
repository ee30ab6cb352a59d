#include "twerc/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

void WorldConfig::validate() const {
  auto need_count = [](const char* field, std::uint64_t v) {
    if (v < 1) throw ConfigError(field, "count must be >= 1");
  };
  need_count("n_users", n_users);
  need_count("n_advertisers", n_advertisers);
  need_count("n_ads", n_ads);
  if (latent_dim < 2) throw ConfigError("latent_dim", "must be >= 2");
  need_count("n_geos", n_geos);
  need_count("n_languages", n_languages);
  need_count("n_age_bands", n_age_bands);
  need_count("n_topics", n_topics);
  need_count("objective_count", objective_count);
  if (!(bid_mean > 0.0)) throw ConfigError("bid_mean", "must be > 0");
  if (bid_sigma < 0.0) throw ConfigError("bid_sigma", "must be >= 0");
  if (!(budget_mean > 0.0)) throw ConfigError("budget_mean", "must be > 0");
  if (budget_sigma < 0.0) throw ConfigError("budget_sigma", "must be >= 0");
  if (base_engagement_rate < 0.0 || base_engagement_rate > 1.0)
    throw ConfigError("base_engagement_rate", "must be in [0, 1]");
}

const User& World::user(UserId id) const {
  if (id >= users.size()) throw LookupError("unknown user id " + std::to_string(id));
  return users[id];
}

const Ad& World::ad(AdId id) const {
  if (id >= ads.size()) throw LookupError("unknown ad id " + std::to_string(id));
  return ads[id];
}

Ad& World::mutable_ad(AdId id) {
  if (id >= ads.size()) throw LookupError("unknown ad id " + std::to_string(id));
  return ads[id];
}

const Campaign& World::campaign(CampaignId id) const {
  if (id >= campaigns.size())
    throw LookupError("unknown campaign id " + std::to_string(id));
  return campaigns[id];
}

double World::pos_logit_offset(std::uint32_t objective) const {
  if (objective < 1 || objective > objective_bias.size())
    throw LookupError("unknown objective " + std::to_string(objective));
  return b_pos + objective_bias[objective - 1];
}

const char* event_type_name(EventType e) {
  switch (e) {
    case EventType::impression: return "impression";
    case EventType::positive_engagement: return "positive_engagement";
    case EventType::negative_engagement: return "negative_engagement";
    case EventType::conversion: return "conversion";
  }
  return "unknown";
}

std::optional<EventType> event_type_from_name(const std::string& name) {
  if (name == "impression") return EventType::impression;
  if (name == "positive_engagement") return EventType::positive_engagement;
  if (name == "negative_engagement") return EventType::negative_engagement;
  if (name == "conversion") return EventType::conversion;
  return std::nullopt;
}

namespace {

std::vector<double> sample_latent(Rng& rng,
                                  const std::vector<double>& center,
                                  double concentration) {
  std::vector<double> v(center.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = concentration * center[i] + rng.gaussian();
  normalize(v);
  return v;
}

// Solves for the intercept b with mean_i sigmoid(logit_i + b) == target.
double calibrate_intercept(const std::vector<double>& logits, double target) {
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double l : logits) mean += sigmoid(l + mid);
    mean /= static_cast<double>(logits.size());
    if (mean < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<std::uint32_t> pick_distinct(Rng& rng, std::uint64_t universe,
                                         std::uint64_t count) {
  std::set<std::uint32_t> out;
  while (out.size() < count && out.size() < universe)
    out.insert(static_cast<std::uint32_t>(rng.uniform_index(universe)));
  return {out.begin(), out.end()};
}

}  // namespace

World gen_world(const WorldConfig& config) {
  config.validate();
  World w;
  w.config = config;
  Rng rng(config.seed);

  // Topic anchors give users and ads a shared cluster structure, which is
  // what makes engagement behavior learnable downstream.
  std::vector<std::vector<double>> centers(config.n_topics);
  for (auto& c : centers) {
    c.resize(config.latent_dim);
    for (double& x : c) x = rng.gaussian();
    normalize(c);
  }
  constexpr double kConcentration = 1.5;

  w.advertisers.resize(config.n_advertisers);
  for (std::uint64_t i = 0; i < config.n_advertisers; ++i)
    w.advertisers[i].id = i;

  // 1..3 campaigns per advertiser; conversion rates exercise AdsValue.
  std::vector<std::vector<CampaignId>> advertiser_campaigns(config.n_advertisers);
  for (std::uint64_t a = 0; a < config.n_advertisers; ++a) {
    std::uint64_t n = 1 + rng.uniform_index(3);
    for (std::uint64_t c = 0; c < n; ++c) {
      Campaign camp;
      camp.id = w.campaigns.size();
      camp.advertiser_id = a;
      camp.conversion_rate = rng.uniform(0.01, 0.2);
      advertiser_campaigns[a].push_back(camp.id);
      w.campaigns.push_back(camp);
    }
  }

  w.users.resize(config.n_users);
  std::vector<std::uint32_t> primary_topic(config.n_users);
  std::vector<std::vector<UserId>> topic_members(config.n_topics);
  for (std::uint64_t i = 0; i < config.n_users; ++i) {
    User& u = w.users[i];
    u.id = i;
    u.geo = static_cast<std::uint32_t>(rng.uniform_index(config.n_geos));
    u.language = static_cast<std::uint32_t>(rng.uniform_index(config.n_languages));
    u.age_band = static_cast<std::uint32_t>(rng.uniform_index(config.n_age_bands));
    std::uint32_t t = static_cast<std::uint32_t>(rng.uniform_index(config.n_topics));
    primary_topic[i] = t;
    topic_members[t].push_back(i);
    u.topics.push_back(t);
    if (rng.bernoulli(0.3)) {
      std::uint32_t t2 = static_cast<std::uint32_t>(rng.uniform_index(config.n_topics));
      if (t2 != t) u.topics.push_back(t2);
    }
    u.latent = sample_latent(rng, centers[t], kConcentration);
  }

  // Follow edges are homophilous: mostly same-topic, so one-hop feature
  // propagation sees neighbors with related interests.
  for (std::uint64_t i = 0; i < config.n_users; ++i) {
    std::uint64_t want = 5 + rng.uniform_index(26);
    std::set<UserId> picked;
    const auto& same = topic_members[primary_topic[i]];
    for (std::uint64_t tries = 0; tries < want * 4 && picked.size() < want; ++tries) {
      UserId cand;
      if (rng.bernoulli(0.7) && same.size() > 1)
        cand = same[rng.uniform_index(same.size())];
      else
        cand = rng.uniform_index(config.n_users);
      if (cand != i) picked.insert(cand);
    }
    w.users[i].followings.assign(picked.begin(), picked.end());
  }

  // Ads-per-advertiser is mildly skewed so the top advertisers hold a
  // disproportionate share of inventory (T1PS has something to measure).
  std::vector<double> adv_cum(config.n_advertisers);
  {
    double acc = 0.0;
    for (std::uint64_t a = 0; a < config.n_advertisers; ++a) {
      acc += std::pow(static_cast<double>(a + 1), -0.7);
      adv_cum[a] = acc;
    }
  }
  auto sample_advertiser = [&](double u) {
    double x = u * adv_cum.back();
    auto it = std::lower_bound(adv_cum.begin(), adv_cum.end(), x);
    return static_cast<AdvertiserId>(it - adv_cum.begin());
  };

  w.ads.resize(config.n_ads);
  for (std::uint64_t i = 0; i < config.n_ads; ++i) {
    Ad& ad = w.ads[i];
    ad.id = i;
    ad.advertiser_id = std::min<AdvertiserId>(sample_advertiser(rng.uniform()),
                                              config.n_advertisers - 1);
    const auto& camps = advertiser_campaigns[ad.advertiser_id];
    ad.campaign_id = camps[rng.uniform_index(camps.size())];
    ad.objective = 1 + static_cast<std::uint32_t>(rng.uniform_index(config.objective_count));
    std::uint32_t t = static_cast<std::uint32_t>(rng.uniform_index(config.n_topics));
    ad.latent = sample_latent(rng, centers[t], kConcentration);
    ad.bid = rng.lognormal_mean(config.bid_mean, config.bid_sigma);
    ad.remaining_budget = rng.lognormal_mean(config.budget_mean, config.budget_sigma);

    if (rng.bernoulli(0.4))
      ad.hard_targeting.geo_set = pick_distinct(rng, config.n_geos, 1 + rng.uniform_index(3));
    if (rng.bernoulli(0.25))
      ad.hard_targeting.language_set = pick_distinct(rng, config.n_languages, 1 + rng.uniform_index(2));
    if (rng.bernoulli(0.2))
      ad.hard_targeting.age_set = pick_distinct(rng, config.n_age_bands, 1 + rng.uniform_index(2));
    if (rng.bernoulli(0.5)) {
      ad.soft_targeting.topic_set.push_back(t);
      if (rng.bernoulli(0.3)) {
        std::uint32_t t2 = static_cast<std::uint32_t>(rng.uniform_index(config.n_topics));
        if (t2 != t) ad.soft_targeting.topic_set.push_back(t2);
      }
      std::sort(ad.soft_targeting.topic_set.begin(), ad.soft_targeting.topic_set.end());
    }
    if (rng.bernoulli(0.15)) {
      auto picked = pick_distinct(rng, config.n_users, 1 + rng.uniform_index(5));
      ad.soft_targeting.follow_set.assign(picked.begin(), picked.end());
    }
  }

  // Calibrate intercepts over a seeded pair sample so the population mean
  // of p_pos (and p_neg) matches base_engagement_rate.
  w.objective_bias.resize(config.objective_count);
  for (std::uint64_t k = 0; k < config.objective_count; ++k)
    w.objective_bias[k] =
        (static_cast<double>(k) - static_cast<double>(config.objective_count - 1) / 2.0) * 0.35;

  std::uint64_t n_pairs = std::min<std::uint64_t>(200000, config.n_users * config.n_ads);
  std::vector<double> pos_logits(n_pairs), neg_logits(n_pairs);
  for (std::uint64_t i = 0; i < n_pairs; ++i) {
    const User& u = w.users[rng.uniform_index(config.n_users)];
    const Ad& a = w.ads[rng.uniform_index(config.n_ads)];
    double d = dot(u.latent, a.latent);
    pos_logits[i] = d + w.objective_bias[a.objective - 1];
    neg_logits[i] = -d;
  }
  w.b_pos = calibrate_intercept(pos_logits, config.base_engagement_rate);
  w.b_neg = calibrate_intercept(neg_logits, config.base_engagement_rate);
  return w;
}

EngagementProb true_engagement_prob(const World& world, UserId user_id,
                                    AdId ad_id) {
  const User& u = world.user(user_id);
  const Ad& a = world.ad(ad_id);
  double d = dot(u.latent, a.latent);
  EngagementProb p;
  p.p_pos = sigmoid(d + world.pos_logit_offset(a.objective));
  p.p_neg = sigmoid(-d + world.b_neg);
  return p;
}

RequestLog gen_requests(const World& world, std::uint64_t n_requests,
                        Timestamp time_span, const RequestGenParams& params) {
  if (n_requests < 1) throw ConfigError("n_requests", "count must be >= 1");
  if (time_span < 1) throw ConfigError("time_span", "must be >= 1 second");
  if (!(params.zipf_exponent > 0.0))
    throw ConfigError("zipf_exponent", "must be > 0");

  Rng rng(params.seed);
  std::uint64_t n = world.users.size();

  // Activity rank is a seeded permutation; weight(rank r) = r^-s.
  std::vector<UserId> by_rank(n);
  for (std::uint64_t i = 0; i < n; ++i) by_rank[i] = i;
  for (std::uint64_t i = n - 1; i > 0; --i)
    std::swap(by_rank[i], by_rank[rng.uniform_index(i + 1)]);

  std::vector<double> cum(n);
  double acc = 0.0;
  for (std::uint64_t r = 0; r < n; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -params.zipf_exponent);
    cum[r] = acc;
  }

  RequestLog log(n_requests);
  for (std::uint64_t i = 0; i < n_requests; ++i) {
    double x = rng.uniform() * cum.back();
    auto it = std::lower_bound(cum.begin(), cum.end(), x);
    log[i].user_id = by_rank[it - cum.begin()];
    log[i].ts = static_cast<Timestamp>(rng.uniform_index(
        static_cast<std::uint64_t>(time_span) + 1));
  }
  std::stable_sort(log.begin(), log.end(),
                   [](const Request& a, const Request& b) { return a.ts < b.ts; });
  for (std::uint64_t i = 0; i < n_requests; ++i) log[i].request_id = i;
  return log;
}

EventLog sample_engagements(const World& world,
                            const std::vector<ImpressionEvent>& impressions,
                            std::uint64_t seed,
                            const EngagementOverrides& overrides) {
  EventLog log;
  Rng rng(seed);
  for (const auto& imp : impressions) {
    const Ad& ad = world.ad(imp.ad_id);
    (void)world.user(imp.user_id);
    EventRecord base;
    base.ts = imp.ts;
    base.user_id = imp.user_id;
    base.ad_id = imp.ad_id;
    base.advertiser_id = ad.advertiser_id;
    base.objective = ad.objective;
    base.event = EventType::impression;
    log.records.push_back(base);

    EngagementProb p = true_engagement_prob(world, imp.user_id, imp.ad_id);
    double p_pos = overrides.p_pos.value_or(p.p_pos);
    double p_neg = overrides.p_neg.value_or(p.p_neg);
    bool pos = rng.bernoulli(p_pos);
    bool neg = rng.bernoulli(p_neg);
    if (pos) {
      EventRecord e = base;
      e.event = EventType::positive_engagement;
      e.ts = imp.ts + 1 + static_cast<Timestamp>(rng.uniform_index(60));
      log.records.push_back(e);
      double conv_rate = world.campaign(ad.campaign_id).conversion_rate;
      if (rng.bernoulli(conv_rate)) {
        EventRecord c = base;
        c.event = EventType::conversion;
        c.ts = e.ts + 1 + static_cast<Timestamp>(rng.uniform_index(600));
        log.records.push_back(c);
      }
    }
    if (neg) {
      EventRecord e = base;
      e.event = EventType::negative_engagement;
      e.ts = imp.ts + 1 + static_cast<Timestamp>(rng.uniform_index(60));
      log.records.push_back(e);
    }
  }
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const EventRecord& a, const EventRecord& b) {
                     return a.ts < b.ts;
                   });
  return log;
}

namespace {

ordered_json clause_to_json(const TargetingClause& c) {
  ordered_json j;
  j["geo_set"] = c.geo_set;
  j["language_set"] = c.language_set;
  j["age_set"] = c.age_set;
  j["follow_set"] = c.follow_set;
  j["topic_set"] = c.topic_set;
  return j;
}

TargetingClause clause_from_json(const ordered_json& j) {
  TargetingClause c;
  c.geo_set = j.at("geo_set").get<std::vector<std::uint32_t>>();
  c.language_set = j.at("language_set").get<std::vector<std::uint32_t>>();
  c.age_set = j.at("age_set").get<std::vector<std::uint32_t>>();
  c.follow_set = j.at("follow_set").get<std::vector<UserId>>();
  c.topic_set = j.at("topic_set").get<std::vector<std::uint32_t>>();
  return c;
}

}  // namespace

std::string world_to_json(const World& w) {
  ordered_json j;
  j["format_version"] = 1;
  ordered_json cfg;
  const WorldConfig& c = w.config;
  cfg["n_users"] = c.n_users;
  cfg["n_advertisers"] = c.n_advertisers;
  cfg["n_ads"] = c.n_ads;
  cfg["latent_dim"] = c.latent_dim;
  cfg["n_geos"] = c.n_geos;
  cfg["n_languages"] = c.n_languages;
  cfg["n_age_bands"] = c.n_age_bands;
  cfg["n_topics"] = c.n_topics;
  cfg["bid_mean"] = c.bid_mean;
  cfg["bid_sigma"] = c.bid_sigma;
  cfg["budget_mean"] = c.budget_mean;
  cfg["budget_sigma"] = c.budget_sigma;
  cfg["objective_count"] = c.objective_count;
  cfg["base_engagement_rate"] = c.base_engagement_rate;
  cfg["seed"] = c.seed;
  j["config"] = cfg;
  j["b_pos"] = w.b_pos;
  j["b_neg"] = w.b_neg;
  j["objective_bias"] = w.objective_bias;

  ordered_json advs = ordered_json::array();
  for (const auto& a : w.advertisers) advs.push_back({{"id", a.id}});
  j["advertisers"] = advs;

  ordered_json camps = ordered_json::array();
  for (const auto& cp : w.campaigns) {
    ordered_json jc;
    jc["id"] = cp.id;
    jc["advertiser_id"] = cp.advertiser_id;
    jc["conversion_rate"] = cp.conversion_rate;
    camps.push_back(jc);
  }
  j["campaigns"] = camps;

  ordered_json users = ordered_json::array();
  for (const auto& u : w.users) {
    ordered_json ju;
    ju["id"] = u.id;
    ju["latent"] = u.latent;
    ju["geo"] = u.geo;
    ju["language"] = u.language;
    ju["age_band"] = u.age_band;
    ju["topics"] = u.topics;
    ju["followings"] = u.followings;
    users.push_back(ju);
  }
  j["users"] = users;

  ordered_json ads = ordered_json::array();
  for (const auto& a : w.ads) {
    ordered_json ja;
    ja["id"] = a.id;
    ja["advertiser_id"] = a.advertiser_id;
    ja["campaign_id"] = a.campaign_id;
    ja["objective"] = a.objective;
    ja["latent"] = a.latent;
    ja["bid"] = a.bid;
    ja["remaining_budget"] = a.remaining_budget;
    ja["hard_targeting"] = clause_to_json(a.hard_targeting);
    ja["soft_targeting"] = clause_to_json(a.soft_targeting);
    ads.push_back(ja);
  }
  j["ads"] = ads;
  return j.dump();
}

void save_world(const World& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out << world_to_json(w) << "\n";
}

World load_world(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError("bad world file " + path + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw FormatError("unsupported world format version in " + path);

  World w;
  const auto& cfg = j.at("config");
  WorldConfig& c = w.config;
  c.n_users = cfg.at("n_users").get<std::uint64_t>();
  c.n_advertisers = cfg.at("n_advertisers").get<std::uint64_t>();
  c.n_ads = cfg.at("n_ads").get<std::uint64_t>();
  c.latent_dim = cfg.at("latent_dim").get<std::uint64_t>();
  c.n_geos = cfg.at("n_geos").get<std::uint64_t>();
  c.n_languages = cfg.at("n_languages").get<std::uint64_t>();
  c.n_age_bands = cfg.at("n_age_bands").get<std::uint64_t>();
  c.n_topics = cfg.at("n_topics").get<std::uint64_t>();
  c.bid_mean = cfg.at("bid_mean").get<double>();
  c.bid_sigma = cfg.at("bid_sigma").get<double>();
  c.budget_mean = cfg.at("budget_mean").get<double>();
  c.budget_sigma = cfg.at("budget_sigma").get<double>();
  c.objective_count = cfg.at("objective_count").get<std::uint64_t>();
  c.base_engagement_rate = cfg.at("base_engagement_rate").get<double>();
  c.seed = cfg.at("seed").get<std::uint64_t>();
  w.b_pos = j.at("b_pos").get<double>();
  w.b_neg = j.at("b_neg").get<double>();
  w.objective_bias = j.at("objective_bias").get<std::vector<double>>();

  for (const auto& ja : j.at("advertisers"))
    w.advertisers.push_back({ja.at("id").get<AdvertiserId>()});
  for (const auto& jc : j.at("campaigns")) {
    Campaign cp;
    cp.id = jc.at("id").get<CampaignId>();
    cp.advertiser_id = jc.at("advertiser_id").get<AdvertiserId>();
    cp.conversion_rate = jc.at("conversion_rate").get<double>();
    w.campaigns.push_back(cp);
  }
  for (const auto& ju : j.at("users")) {
    User u;
    u.id = ju.at("id").get<UserId>();
    u.latent = ju.at("latent").get<std::vector<double>>();
    u.geo = ju.at("geo").get<std::uint32_t>();
    u.language = ju.at("language").get<std::uint32_t>();
    u.age_band = ju.at("age_band").get<std::uint32_t>();
    u.topics = ju.at("topics").get<std::vector<std::uint32_t>>();
    u.followings = ju.at("followings").get<std::vector<UserId>>();
    w.users.push_back(std::move(u));
  }
  for (const auto& ja : j.at("ads")) {
    Ad a;
    a.id = ja.at("id").get<AdId>();
    a.advertiser_id = ja.at("advertiser_id").get<AdvertiserId>();
    a.campaign_id = ja.at("campaign_id").get<CampaignId>();
    a.objective = ja.at("objective").get<std::uint32_t>();
    a.latent = ja.at("latent").get<std::vector<double>>();
    a.bid = ja.at("bid").get<double>();
    a.remaining_budget = ja.at("remaining_budget").get<double>();
    a.hard_targeting = clause_from_json(ja.at("hard_targeting"));
    a.soft_targeting = clause_from_json(ja.at("soft_targeting"));
    w.ads.push_back(std::move(a));
  }
  return w;
}

void save_event_log(const EventLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  for (const auto& r : log.records) {
    ordered_json j;
    j["ts"] = r.ts;
    j["user_id"] = r.user_id;
    j["ad_id"] = r.ad_id;
    j["advertiser_id"] = r.advertiser_id;
    j["event"] = event_type_name(r.event);
    j["objective"] = r.objective;
    out << j.dump() << "\n";
  }
}

EventLog load_event_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  EventLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("ts") ||
        !j.contains("user_id") || !j.contains("ad_id") ||
        !j.contains("advertiser_id") || !j.contains("event") ||
        !j.contains("objective") || !j["event"].is_string() ||
        !event_type_from_name(j["event"].get<std::string>())) {
      ++log.malformed_lines;
      continue;
    }
    EventRecord r;
    try {
      r.ts = j["ts"].get<Timestamp>();
      r.user_id = j["user_id"].get<UserId>();
      r.ad_id = j["ad_id"].get<AdId>();
      r.advertiser_id = j["advertiser_id"].get<AdvertiserId>();
      r.event = *event_type_from_name(j["event"].get<std::string>());
      r.objective = j["objective"].get<std::uint32_t>();
    } catch (const std::exception&) {
      ++log.malformed_lines;
      continue;
    }
    log.records.push_back(r);
  }
  return log;
}

void save_request_log(const RequestLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  for (const auto& r : log) {
    ordered_json j;
    j["request_id"] = r.request_id;
    j["ts"] = r.ts;
    j["user_id"] = r.user_id;
    out << j.dump() << "\n";
  }
}

RequestLog load_request_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  RequestLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError("bad request record in " + path + ": " + line);
    Request r;
    r.request_id = j.at("request_id").get<std::uint64_t>();
    r.ts = j.at("ts").get<Timestamp>();
    r.user_id = j.at("user_id").get<UserId>();
    log.push_back(r);
  }
  return log;
}

}  // namespace twerc
