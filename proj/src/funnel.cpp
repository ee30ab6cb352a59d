#include "twerc/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "twerc/errors.hpp"
#include "twerc/metrics.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

namespace {

// Salts keeping the per-(request, ad) hash streams independent.
constexpr std::uint64_t kSaltHeavyPos = 0x6865767950ULL;
constexpr std::uint64_t kSaltHeavyNeg = 0x686576794eULL;
constexpr std::uint64_t kSaltEngPos = 0x656e6750ULL;
constexpr std::uint64_t kSaltEngNeg = 0x656e674eULL;
constexpr std::uint64_t kSaltConv = 0x636f6e76ULL;
constexpr std::uint64_t kSaltUas = 0x756173ULL;
constexpr std::uint64_t kSaltBucket = 0x62756b74ULL;

}  // namespace

void RankWeights::validate() const {
  if (w_neg < 0.0) throw ConfigError("w_neg", "must be >= 0");
  if (reserve_price < 0.0) throw ConfigError("reserve_price", "must be >= 0");
}

void FunnelConfig::validate() const {
  if (k_light < 1) throw ConfigError("k_light", "must be >= 1");
  if (n_slots < 1) throw ConfigError("n_slots", "must be >= 1");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma", "must be >= 0");
  weights.validate();
  blend.validate();
}

std::span<const double> LightRanker::row(const std::vector<double>& table,
                                         std::size_t idx) const {
  return {table.data() + idx * dim_, dim_};
}

std::vector<double> LightRanker::user_vec(const World& world, UserId id) const {
  const User& u = world.user(id);
  std::vector<double> v(dim_, 0.0);
  auto add = [&](std::span<const double> r, double scale) {
    for (std::uint32_t i = 0; i < dim_; ++i) v[i] += scale * r[i];
  };
  add(row(geo_table_, u.geo), 1.0);
  add(row(lang_table_, u.language), 1.0);
  add(row(age_table_, u.age_band), 1.0);
  if (!u.topics.empty()) {
    double s = 1.0 / static_cast<double>(u.topics.size());
    for (std::uint32_t t : u.topics) add(row(topic_table_, t), s);
  }
  add(row(user_table_, id), 1.0);
  return v;
}

std::vector<double> LightRanker::ad_vec(const World& world, AdId id) const {
  const Ad& a = world.ad(id);
  std::vector<double> v(dim_, 0.0);
  auto add = [&](std::span<const double> r) {
    for (std::uint32_t i = 0; i < dim_; ++i) v[i] += r[i];
  };
  add(row(obj_table_, a.objective - 1));
  add(row(adv_table_, a.advertiser_id));
  add(row(ad_table_, id));
  return v;
}

double LightRanker::pclick(const World& world, UserId user, AdId ad) const {
  return sigmoid(dot(user_vec(world, user), ad_vec(world, ad)));
}

void LightRanker::rebuild_ad_cache(const World& world) {
  ad_cache_.assign(world.ads.size() * dim_, 0.0);
  for (const Ad& a : world.ads) {
    auto v = ad_vec(world, a.id);
    std::copy(v.begin(), v.end(), ad_cache_.begin() + a.id * dim_);
  }
}

std::vector<ScoredAd> LightRanker::rank(const World& world, UserId user,
                                        const std::vector<AdId>& eligible,
                                        std::size_t k) const {
  if (k < 1) throw ArgumentError("light_rank: k must be >= 1");
  std::vector<double> uv = user_vec(world, user);
  std::vector<ScoredAd> scored;
  scored.reserve(eligible.size());
  for (AdId id : eligible) {
    std::span<const double> av = ad_cache_.empty()
                                     ? std::span<const double>()
                                     : row(ad_cache_, id);
    double p = av.empty() ? pclick(world, user, id) : sigmoid(dot(uv, av));
    scored.push_back({id, p * world.ad(id).bid});
  }
  auto cmp = [](const ScoredAd& a, const ScoredAd& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ad_id < b.ad_id;
  };
  std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), cmp);
  scored.resize(take);
  return scored;
}

LightRanker init_light_ranker(const World& world, const LightParams& params) {
  if (params.dim < 1) throw ConfigError("dim", "must be >= 1");
  LightRanker r;
  r.dim_ = params.dim;
  r.params_ = params;
  Rng rng(params.seed);
  double s = 0.5 / std::sqrt(static_cast<double>(params.dim));
  auto fill = [&](std::vector<double>& table, std::size_t rows) {
    table.resize(rows * params.dim);
    for (double& x : table) x = rng.uniform(-s, s);
  };
  const WorldConfig& c = world.config;
  fill(r.geo_table_, c.n_geos);
  fill(r.lang_table_, c.n_languages);
  fill(r.age_table_, c.n_age_bands);
  fill(r.topic_table_, c.n_topics);
  fill(r.user_table_, c.n_users);
  fill(r.obj_table_, c.objective_count);
  fill(r.adv_table_, c.n_advertisers);
  fill(r.ad_table_, c.n_ads);
  r.rebuild_ad_cache(world);
  return r;
}

LightRanker train_light_ranker(const EventLog& impressions, const World& world,
                               const LightParams& params) {
  LightRanker r = init_light_ranker(world, params);
  if (params.epochs == 0) return r;

  std::set<std::pair<UserId, AdId>> engaged;
  for (const auto& e : impressions.records)
    if (e.event == EventType::positive_engagement)
      engaged.insert({e.user_id, e.ad_id});

  struct Sample {
    UserId user;
    AdId ad;
    double label;
  };
  std::vector<Sample> samples;
  for (const auto& e : impressions.records) {
    if (e.event != EventType::impression) continue;
    samples.push_back({e.user_id, e.ad_id,
                       engaged.count({e.user_id, e.ad_id}) ? 1.0 : 0.0});
  }
  bool has_pos = false, has_neg = false;
  for (const auto& s : samples) (s.label > 0.5 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw TrainingError("light ranker needs both engaged and non-engaged impressions");

  Rng rng(params.seed + 1);
  std::uint32_t dim = params.dim;
  std::vector<double> uv(dim), av(dim);
  for (std::uint64_t epoch = 0; epoch < params.epochs; ++epoch) {
    for (std::size_t i = samples.size() - 1; i > 0; --i)
      std::swap(samples[i], samples[rng.uniform_index(i + 1)]);
    for (const auto& s : samples) {
      const User& u = world.user(s.user);
      const Ad& a = world.ad(s.ad);
      {
        auto tmp = r.user_vec(world, s.user);
        std::copy(tmp.begin(), tmp.end(), uv.begin());
        tmp = r.ad_vec(world, s.ad);
        std::copy(tmp.begin(), tmp.end(), av.begin());
      }
      double g = sigmoid(dot(uv, av)) - s.label;
      double lr = params.learning_rate;
      auto upd = [&](std::vector<double>& table, std::size_t idx,
                     const std::vector<double>& other, double scale) {
        double* row = table.data() + idx * dim;
        for (std::uint32_t d = 0; d < dim; ++d)
          row[d] -= lr * (scale * g * other[d] + 2.0 * params.reg * row[d]);
      };
      upd(r.geo_table_, u.geo, av, 1.0);
      upd(r.lang_table_, u.language, av, 1.0);
      upd(r.age_table_, u.age_band, av, 1.0);
      if (!u.topics.empty()) {
        double scale = 1.0 / static_cast<double>(u.topics.size());
        for (std::uint32_t t : u.topics) upd(r.topic_table_, t, av, scale);
      }
      upd(r.user_table_, s.user, av, 1.0);
      upd(r.obj_table_, a.objective - 1, uv, 1.0);
      upd(r.adv_table_, a.advertiser_id, uv, 1.0);
      upd(r.ad_table_, s.ad, uv, 1.0);
    }
  }
  r.rebuild_ad_cache(world);
  return r;
}

namespace {

bool contains(const std::vector<std::uint32_t>& set, std::uint32_t v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

}  // namespace

bool hard_targeting_matches(const User& user, const Ad& ad) {
  const TargetingClause& h = ad.hard_targeting;
  if (!h.geo_set.empty() && !contains(h.geo_set, user.geo)) return false;
  if (!h.language_set.empty() && !contains(h.language_set, user.language))
    return false;
  if (!h.age_set.empty() && !contains(h.age_set, user.age_band)) return false;
  return true;
}

bool targeting_matches(const User& user, const Ad& ad) {
  if (!hard_targeting_matches(user, ad)) return false;
  const TargetingClause& s = ad.soft_targeting;
  if (s.follow_set.empty() && s.topic_set.empty()) return true;
  for (UserId f : s.follow_set)
    if (std::find(user.followings.begin(), user.followings.end(), f) !=
        user.followings.end())
      return true;
  for (std::uint32_t t : s.topic_set)
    if (contains(user.topics, t)) return true;
  return false;
}

std::vector<AdId> target_filter(const World& world, UserId user_id) {
  const User& user = world.user(user_id);
  std::vector<AdId> out;
  for (const Ad& ad : world.ads) {
    if (ad.remaining_budget <= 0.0) continue;
    if (!targeting_matches(user, ad)) continue;
    out.push_back(ad.id);
  }
  return out;
}

std::vector<HeavyScore> heavy_rank(const World& world, const Request& request,
                                   const std::vector<AdId>& cands,
                                   double noise_sigma) {
  std::vector<HeavyScore> out;
  out.reserve(cands.size());
  std::uint64_t seed = world.config.seed;
  for (AdId ad : cands) {
    EngagementProb p = true_engagement_prob(world, request.user_id, ad);
    HeavyScore h;
    h.ad_id = ad;
    h.p_eng = p.p_pos;
    h.p_neg = p.p_neg;
    if (noise_sigma > 0.0) {
      h.p_eng = clamp01(h.p_eng + noise_sigma * hash_gaussian(seed, request.request_id,
                                                              ad, kSaltHeavyPos));
      h.p_neg = clamp01(h.p_neg + noise_sigma * hash_gaussian(seed, request.request_id,
                                                              ad, kSaltHeavyNeg));
    }
    out.push_back(h);
  }
  return out;
}

double rankscore(double bid, double p_eng, double p_neg, const RankWeights& w) {
  return bid * p_eng - w.w_neg * bid * p_neg;
}

AuctionResult auction(const std::vector<ScoredBid>& scored,
                      std::size_t n_slots, const RankWeights& w) {
  if (n_slots < 1) throw ArgumentError("auction: n_slots must be >= 1");
  std::vector<ScoredBid> order = scored;
  std::sort(order.begin(), order.end(), [](const ScoredBid& a, const ScoredBid& b) {
    if (a.rankscore != b.rankscore) return a.rankscore > b.rankscore;
    return a.ad_id < b.ad_id;
  });

  AuctionResult res;
  std::size_t i = 0;
  for (; i < order.size() && res.slots.size() < n_slots; ++i) {
    if (order[i].rankscore < w.reserve_price) break;
    res.slots.push_back({order[i].ad_id, order[i].rankscore, 0.0});
  }
  for (std::size_t j = i; j < order.size(); ++j)
    res.losers.emplace_back(order[j].ad_id, order[j].rankscore);

  double best_loser = res.losers.empty() ? 0.0 : res.losers.front().second;
  for (std::size_t s = 0; s < res.slots.size(); ++s) {
    double own = res.slots[s].rankscore;
    double next = s + 1 < res.slots.size()
                      ? res.slots[s + 1].rankscore
                      : std::max(best_loser, w.reserve_price);
    double bid = order[s].bid;
    res.slots[s].price = own > 0.0 ? bid * next / own : 0.0;
  }
  return res;
}

EngagementDraw draw_engagement(const World& world, const Request& request,
                               AdId ad_id) {
  EngagementProb p = true_engagement_prob(world, request.user_id, ad_id);
  std::uint64_t seed = world.config.seed;
  EngagementDraw d;
  d.pos = hash_uniform(seed, request.request_id, ad_id, kSaltEngPos) < p.p_pos;
  d.neg = hash_uniform(seed, request.request_id, ad_id, kSaltEngNeg) < p.p_neg;
  if (d.pos) {
    const Ad& ad = world.ad(ad_id);
    double rate = world.campaign(ad.campaign_id).conversion_rate;
    d.conv = hash_uniform(seed, request.request_id, ad_id, kSaltConv) < rate;
  }
  return d;
}

namespace {

std::map<std::string, std::vector<AdId>> sources_for_user(
    const ArmInputs& inputs, UserId user) {
  std::map<std::string, std::vector<AdId>> out;
  for (const auto& [name, sourced] : inputs.sources) {
    if (!sourced) continue;
    auto it = sourced->by_user.find(user);
    if (it == sourced->by_user.end()) continue;
    auto& list = out[name];
    list.reserve(it->second.size());
    for (const auto& a : it->second) list.push_back(a.ad_id);
  }
  return out;
}

ServeOutcome serve_with_eligible(World& world, const Request& request,
                                 const FunnelConfig& config,
                                 const ArmInputs& inputs,
                                 const std::vector<AdId>& eligible) {
  if (!inputs.ranker) throw ArgumentError("serve_request: no light ranker");
  std::vector<ScoredAd> light =
      inputs.ranker->rank(world, request.user_id, eligible, config.k_light);
  std::vector<AdId> light_ids;
  light_ids.reserve(light.size());
  for (const auto& s : light) light_ids.push_back(s.ad_id);

  CandidateSet blended =
      blend(light_ids, sources_for_user(inputs, request.user_id), config.blend);
  blended.request_id = request.request_id;
  blended.user_id = request.user_id;

  ServeOutcome out;
  out.candidates = serving_filter(blended, world, request.ts);

  auto heavy = heavy_rank(world, request, out.candidates.ad_ids,
                          config.noise_sigma);
  std::vector<ScoredBid> scored;
  scored.reserve(heavy.size());
  for (const auto& h : heavy) {
    double bid = world.ad(h.ad_id).bid;
    scored.push_back({h.ad_id, rankscore(bid, h.p_eng, h.p_neg, config.weights), bid});
  }
  out.auction = auction(scored, config.n_slots, config.weights);
  out.auction.request_id = request.request_id;

  for (const auto& slot : out.auction.slots) {
    Ad& ad = world.mutable_ad(slot.ad_id);
    ad.remaining_budget -= slot.price;
    EngagementDraw d = draw_engagement(world, request, slot.ad_id);
    ImpressionRecord imp;
    imp.ad_id = slot.ad_id;
    imp.advertiser_id = ad.advertiser_id;
    imp.campaign_id = ad.campaign_id;
    imp.objective = ad.objective;
    imp.bid = ad.bid;
    imp.price = slot.price;
    imp.rankscore = slot.rankscore;
    imp.engaged_pos = d.pos;
    imp.engaged_neg = d.neg;
    imp.converted = d.conv;
    out.impressions.push_back(imp);
  }
  return out;
}

}  // namespace

ServeOutcome serve_request(World& world, const Request& request,
                           const FunnelConfig& config, const ArmInputs& inputs) {
  config.validate();
  return serve_with_eligible(world, request, config, inputs,
                             target_filter(world, request.user_id));
}

UasLog uas_log(const World& world, const RequestLog& requests,
               double sample_rate, const FunnelConfig& config) {
  if (!(sample_rate > 0.0) || sample_rate > 1.0)
    throw ConfigError("sample_rate", "must be in (0, 1]");
  UasLog log;
  std::uint64_t seed = world.config.seed;
  for (const auto& req : requests) {
    if (hash_uniform(seed, req.request_id, kSaltUas, 0) >= sample_rate) continue;
    std::vector<AdId> eligible = target_filter(world, req.user_id);
    auto heavy = heavy_rank(world, req, eligible, config.noise_sigma);
    for (const auto& h : heavy) {
      UasRecord r;
      r.ts = req.ts;
      r.request_id = req.request_id;
      r.user_id = req.user_id;
      r.ad_id = h.ad_id;
      r.bid = world.ad(h.ad_id).bid;
      r.p_eng = h.p_eng;
      r.p_neg = h.p_neg;
      r.rankscore = rankscore(r.bid, r.p_eng, r.p_neg, config.weights);
      log.push_back(r);
    }
  }
  return log;
}

bool in_metric_bucket(const World& world, std::uint64_t request_id,
                      double bucket_rate) {
  return hash_uniform(world.config.seed, request_id, kSaltBucket, 0) <
         bucket_rate;
}

ArmRequestRecord run_arm_request(World& world, const Request& request,
                                 const FunnelConfig& config,
                                 const ArmInputs& inputs, bool evaluated) {
  ArmRequestRecord rec;
  rec.request_id = request.request_id;
  rec.ts = request.ts;
  rec.user_id = request.user_id;
  rec.evaluated = evaluated;

  std::vector<AdId> eligible = target_filter(world, request.user_id);
  ServeOutcome outcome =
      serve_with_eligible(world, request, config, inputs, eligible);
  rec.impressions = outcome.impressions;
  if (!evaluated) return rec;

  // Counterfactual scoring of the full eligible set; the hash-keyed noise
  // makes these the same numbers the serving path saw for its candidates.
  EvalComponents ev;
  auto heavy = heavy_rank(world, request, eligible, config.noise_sigma);
  std::vector<ScoredBid> scored;
  scored.reserve(heavy.size());
  std::map<AdId, double> rs_all;
  for (const auto& h : heavy) {
    double bid = world.ad(h.ad_id).bid;
    double rs = rankscore(bid, h.p_eng, h.p_neg, config.weights);
    rs_all[h.ad_id] = rs;
    scored.push_back({h.ad_id, rs, bid});
  }
  AuctionResult full = auction(scored, config.n_slots, config.weights);

  std::set<AdId> cand(outcome.candidates.ad_ids.begin(),
                      outcome.candidates.ad_ids.end());

  ev.winner_slots = full.slots.size();
  for (const auto& slot : full.slots) {
    bool hit = cand.count(slot.ad_id) > 0;
    ev.winner_hits += hit;
    auto& [s, h] = ev.ar_by_obj[world.ad(slot.ad_id).objective];
    ++s;
    h += hit;
  }

  std::vector<double> all_rs, cand_rs;
  std::map<std::uint32_t, std::vector<double>> all_rs_obj, cand_rs_obj;
  for (AdId ad : eligible) {
    // Negative estimated value carries no retrievable mass.
    double rs = std::max(rs_all[ad], 0.0);
    std::uint32_t obj = world.ad(ad).objective;
    all_rs.push_back(rs);
    all_rs_obj[obj].push_back(rs);
    if (cand.count(ad)) {
      cand_rs.push_back(rs);
      cand_rs_obj[obj].push_back(rs);
    }
    EngagementDraw d = draw_engagement(world, request, ad);
    if (d.pos) {
      bool hit = cand.count(ad) > 0;
      auto& [tp, fn] = ev.tp_fn_by_obj[obj];
      if (hit) {
        ++ev.tp;
        ++tp;
      } else {
        ++ev.fn;
        ++fn;
      }
    }
  }
  std::size_t m = config.k_light;
  ev.rncg_num = top_m_sum(cand_rs, m);
  ev.rncg_den = top_m_sum(all_rs, m);
  for (auto& [obj, rs] : all_rs_obj) {
    auto& [num, den] = ev.rncg_by_obj[obj];
    den = top_m_sum(rs, m);
    auto it = cand_rs_obj.find(obj);
    num = it == cand_rs_obj.end() ? 0.0 : top_m_sum(it->second, m);
  }
  rec.eval = std::move(ev);
  return rec;
}

ExperimentLog run_experiment(const World& world, const FunnelConfig& control,
                             const ArmInputs& control_inputs,
                             const FunnelConfig& treatment,
                             const ArmInputs& treatment_inputs,
                             const RequestLog& requests, double bucket_rate) {
  if (!(bucket_rate > 0.0) || !(bucket_rate < 1.0))
    throw ConfigError("bucket_rate", "must be in (0, 1)");
  control.validate();
  treatment.validate();

  ExperimentLog log;
  log.control.name = "control";
  log.treatment.name = "treatment";
  log.bucket_rate = bucket_rate;
  log.objective_count = static_cast<std::uint32_t>(world.config.objective_count);
  log.n_advertisers = world.config.n_advertisers;
  log.n_campaigns = world.campaigns.size();
  log.weights = control.weights;

  World control_world = world;
  World treatment_world = world;
  for (const auto& req : requests) {
    bool evaluated = in_metric_bucket(world, req.request_id, bucket_rate);
    ++log.n_requests;
    log.n_eval += evaluated;
    log.control.requests.push_back(
        run_arm_request(control_world, req, control, control_inputs, evaluated));
    log.treatment.requests.push_back(run_arm_request(
        treatment_world, req, treatment, treatment_inputs, evaluated));
  }
  return log;
}

namespace {

ordered_json pair_map_to_json(
    const std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m)
    j[std::to_string(k)] = {v.first, v.second};
  return j;
}

ordered_json dpair_map_to_json(
    const std::map<std::uint32_t, std::pair<double, double>>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m)
    j[std::to_string(k)] = {v.first, v.second};
  return j;
}

void arm_to_stream(const ArmLog& arm, std::ostream& out) {
  for (const auto& r : arm.requests) {
    ordered_json j;
    j["arm"] = arm.name;
    j["request_id"] = r.request_id;
    j["ts"] = r.ts;
    j["user_id"] = r.user_id;
    j["evaluated"] = r.evaluated;
    ordered_json imps = ordered_json::array();
    for (const auto& imp : r.impressions) {
      imps.push_back({imp.ad_id, imp.advertiser_id, imp.campaign_id,
                      imp.objective, imp.bid, imp.price, imp.rankscore,
                      imp.engaged_pos, imp.engaged_neg, imp.converted});
    }
    j["impressions"] = imps;
    if (r.eval) {
      const EvalComponents& ev = *r.eval;
      ordered_json e;
      e["tp"] = ev.tp;
      e["fn"] = ev.fn;
      e["tp_fn_by_obj"] = pair_map_to_json(ev.tp_fn_by_obj);
      e["winner_slots"] = ev.winner_slots;
      e["winner_hits"] = ev.winner_hits;
      e["ar_by_obj"] = pair_map_to_json(ev.ar_by_obj);
      e["rncg_num"] = ev.rncg_num;
      e["rncg_den"] = ev.rncg_den;
      e["rncg_by_obj"] = dpair_map_to_json(ev.rncg_by_obj);
      j["eval"] = e;
    }
    out << j.dump() << "\n";
  }
}

}  // namespace

void save_experiment_log(const ExperimentLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  ordered_json meta;
  meta["meta"] = {{"format_version", 1},
                  {"n_requests", log.n_requests},
                  {"n_eval", log.n_eval},
                  {"bucket_rate", log.bucket_rate},
                  {"objective_count", log.objective_count},
                  {"n_advertisers", log.n_advertisers},
                  {"n_campaigns", log.n_campaigns},
                  {"w_neg", log.weights.w_neg},
                  {"reserve_price", log.weights.reserve_price}};
  out << meta.dump() << "\n";
  arm_to_stream(log.control, out);
  arm_to_stream(log.treatment, out);
}

namespace {

std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>>
pair_map_from_json(const ordered_json& j) {
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>> m;
  for (auto it = j.begin(); it != j.end(); ++it)
    m[static_cast<std::uint32_t>(std::stoul(it.key()))] = {
        it.value().at(0).get<std::uint64_t>(),
        it.value().at(1).get<std::uint64_t>()};
  return m;
}

std::map<std::uint32_t, std::pair<double, double>> dpair_map_from_json(
    const ordered_json& j) {
  std::map<std::uint32_t, std::pair<double, double>> m;
  for (auto it = j.begin(); it != j.end(); ++it)
    m[static_cast<std::uint32_t>(std::stoul(it.key()))] = {
        it.value().at(0).get<double>(), it.value().at(1).get<double>()};
  return m;
}

}  // namespace

ExperimentLog load_experiment_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  ExperimentLog log;
  log.control.name = "control";
  log.treatment.name = "treatment";
  std::string line;
  bool have_meta = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError("bad experiment record in " + path);
    if (!have_meta) {
      if (!j.contains("meta") || j["meta"].value("format_version", -1) != 1)
        throw FormatError("unsupported experiment log version in " + path);
      const auto& m = j["meta"];
      log.n_requests = m.at("n_requests").get<std::uint64_t>();
      log.n_eval = m.at("n_eval").get<std::uint64_t>();
      log.bucket_rate = m.at("bucket_rate").get<double>();
      log.objective_count = m.at("objective_count").get<std::uint32_t>();
      log.n_advertisers = m.at("n_advertisers").get<std::uint64_t>();
      log.n_campaigns = m.at("n_campaigns").get<std::uint64_t>();
      log.weights.w_neg = m.at("w_neg").get<double>();
      log.weights.reserve_price = m.at("reserve_price").get<double>();
      have_meta = true;
      continue;
    }
    ArmRequestRecord r;
    std::string arm = j.at("arm").get<std::string>();
    r.request_id = j.at("request_id").get<std::uint64_t>();
    r.ts = j.at("ts").get<Timestamp>();
    r.user_id = j.at("user_id").get<UserId>();
    r.evaluated = j.at("evaluated").get<bool>();
    for (const auto& imp : j.at("impressions")) {
      ImpressionRecord rec;
      rec.ad_id = imp.at(0).get<AdId>();
      rec.advertiser_id = imp.at(1).get<AdvertiserId>();
      rec.campaign_id = imp.at(2).get<CampaignId>();
      rec.objective = imp.at(3).get<std::uint32_t>();
      rec.bid = imp.at(4).get<double>();
      rec.price = imp.at(5).get<double>();
      rec.rankscore = imp.at(6).get<double>();
      rec.engaged_pos = imp.at(7).get<bool>();
      rec.engaged_neg = imp.at(8).get<bool>();
      rec.converted = imp.at(9).get<bool>();
      r.impressions.push_back(rec);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      EvalComponents ev;
      ev.tp = e.at("tp").get<std::uint64_t>();
      ev.fn = e.at("fn").get<std::uint64_t>();
      ev.tp_fn_by_obj = pair_map_from_json(e.at("tp_fn_by_obj"));
      ev.winner_slots = e.at("winner_slots").get<std::uint64_t>();
      ev.winner_hits = e.at("winner_hits").get<std::uint64_t>();
      ev.ar_by_obj = pair_map_from_json(e.at("ar_by_obj"));
      ev.rncg_num = e.at("rncg_num").get<double>();
      ev.rncg_den = e.at("rncg_den").get<double>();
      ev.rncg_by_obj = dpair_map_from_json(e.at("rncg_by_obj"));
      r.eval = std::move(ev);
    }
    (arm == "control" ? log.control : log.treatment).requests.push_back(std::move(r));
  }
  if (!have_meta)
    throw FormatError("experiment log lacks a meta header: " + path);
  return log;
}

}  // namespace twerc
