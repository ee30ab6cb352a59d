#include "twerc/sourcing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "twerc/errors.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

double BlendConfig::fraction_of(const std::string& strategy) const {
  for (const auto& [name, frac] : strategies)
    if (name == strategy) return frac;
  return 0.0;
}

void BlendConfig::validate() const {
  if (tail_fraction < 0.0 || tail_fraction > 1.0)
    throw ConfigError("tail_fraction", "must be in [0, 1]");
  double sum = 0.0;
  std::set<std::string> seen;
  for (const auto& [name, frac] : strategies) {
    if (!seen.insert(name).second)
      throw ConfigError(name, "duplicate strategy");
    if (frac < 0.0 || frac > 1.0)
      throw ConfigError(name, "fraction must be in [0, 1]");
    if (frac > tail_fraction + 1e-12)
      throw ConfigError(name, "fraction exceeds tail_fraction");
    sum += frac;
  }
  if (sum > tail_fraction + 1e-12)
    throw ConfigError("tail_fraction",
                      "strategy fractions sum past the tail fraction");
}

QualityScores quality_scores(const UasLog& log, Timestamp t0,
                             Timestamp window_seconds, double time_scale_days) {
  if (!(time_scale_days > 0.0))
    throw ArgumentError("quality_scores: time scale must be > 0");
  for (const auto& r : log)
    if (r.ts > t0)
      throw ArgumentError("quality_scores: t0 precedes a log record");

  QualityScores out;
  out.t0 = t0;
  out.window = window_seconds;
  std::map<std::pair<UserId, AdId>, std::pair<double, double>> acc;  // (num, den)
  for (const auto& r : log) {
    if (t0 - r.ts > window_seconds) continue;
    double days = static_cast<double>(r.ts - t0) / kSecondsPerDay;
    double w = std::exp(days / time_scale_days);
    auto& slot = acc[{r.user_id, r.ad_id}];
    slot.first += r.rankscore * w;
    slot.second += w;
  }
  for (const auto& [key, nd] : acc) out.q[key] = nd.first / nd.second;
  return out;
}

SourcedAds topk_rankscore_candidates(const QualityScores& scores,
                                     std::size_t k_source) {
  if (k_source < 1) throw ArgumentError("k_source must be >= 1");
  SourcedAds out;
  out.strategy = "rankscore";
  out.generated_at = scores.t0;
  for (const auto& [key, q] : scores.q)
    out.by_user[key.first].push_back({key.second, q});
  for (auto& [user, ads] : out.by_user) {
    std::sort(ads.begin(), ads.end(), [](const ScoredAd& a, const ScoredAd& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.ad_id < b.ad_id;
    });
    if (ads.size() > k_source) ads.resize(k_source);
  }
  return out;
}

SourcedAds graph_candidates(
    const std::map<UserId, std::vector<double>>& user_vectors,
    const AnnIndex& ad_index, std::size_t k_source,
    const EligibilityFn& eligibility, Timestamp generated_at,
    unsigned threads) {
  if (k_source < 1) throw ArgumentError("k_source must be >= 1");
  SourcedAds out;
  out.strategy = "graph";
  out.generated_at = generated_at;

  std::vector<std::pair<UserId, const std::vector<double>*>> work;
  work.reserve(user_vectors.size());
  for (const auto& [user, vec] : user_vectors) work.emplace_back(user, &vec);
  std::vector<std::vector<ScoredAd>> results(work.size());

  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      UserId user = work[i].first;
      AnnFilter filter;
      if (eligibility)
        filter = [&, user](std::uint64_t ad) { return eligibility(user, ad); };
      auto found = ad_index.query(*work[i].second, k_source, filter);
      results[i].reserve(found.size());
      for (const auto& r : found) results[i].push_back({r.id, r.score});
    }
  };

  if (threads <= 1 || work.size() < 2) {
    run_range(0, work.size());
  } else {
    unsigned n = std::min<unsigned>(threads, work.size());
    std::vector<std::thread> pool;
    std::size_t chunk = (work.size() + n - 1) / n;
    for (unsigned t = 0; t < n; ++t) {
      std::size_t lo = t * chunk;
      std::size_t hi = std::min(work.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < work.size(); ++i)
    out.by_user[work[i].first] = std::move(results[i]);
  return out;
}

CandidateSet blend(const std::vector<AdId>& light_topk,
                   const std::map<std::string, std::vector<AdId>>& sources,
                   const BlendConfig& config) {
  config.validate();
  std::size_t k = light_topk.size();
  std::size_t tail_budget =
      static_cast<std::size_t>(std::floor(static_cast<double>(k) * config.tail_fraction));
  std::size_t head = k - tail_budget;

  CandidateSet out;
  std::set<AdId> placed;
  for (std::size_t i = 0; i < head; ++i) {
    if (placed.insert(light_topk[i]).second) out.ad_ids.push_back(light_topk[i]);
  }

  std::size_t remaining = tail_budget;
  for (const auto& [name, frac] : config.strategies) {
    std::size_t quota = std::min(
        remaining,
        static_cast<std::size_t>(std::floor(static_cast<double>(k) * frac)));
    auto it = sources.find(name);
    if (it == sources.end()) continue;
    for (AdId ad : it->second) {
      if (quota == 0) break;
      if (!placed.insert(ad).second) continue;
      out.ad_ids.push_back(ad);
      --quota;
      --remaining;
    }
  }

  // Unused tail budget restores the displaced light tail in order.
  for (std::size_t i = head; i < k && remaining > 0; ++i) {
    if (!placed.insert(light_topk[i]).second) continue;
    out.ad_ids.push_back(light_topk[i]);
    --remaining;
  }
  return out;
}

namespace {

bool contains(const std::vector<std::uint32_t>& set, std::uint32_t v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

}  // namespace

CandidateSet serving_filter(const CandidateSet& cands, const World& world,
                            Timestamp) {
  const User& user = world.user(cands.user_id);
  CandidateSet out;
  out.request_id = cands.request_id;
  out.user_id = cands.user_id;
  for (AdId id : cands.ad_ids) {
    const Ad& ad = world.ad(id);
    if (ad.remaining_budget <= 0.0) continue;
    const TargetingClause& hard = ad.hard_targeting;
    if (!hard.geo_set.empty() && !contains(hard.geo_set, user.geo)) continue;
    if (!hard.language_set.empty() && !contains(hard.language_set, user.language))
      continue;
    if (!hard.age_set.empty() && !contains(hard.age_set, user.age_band)) continue;
    out.ad_ids.push_back(id);
  }
  return out;
}

std::string blend_config_to_json(const BlendConfig& config) {
  ordered_json j;
  for (const auto& [name, frac] : config.strategies) j[name] = frac;
  j["tail_fraction"] = config.tail_fraction;
  return j.dump();
}

BlendConfig blend_config_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw FormatError("blend config is not a JSON object");
  BlendConfig config;
  bool have_tail = false;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number())
      throw ConfigError(it.key(), "must be a number");
    if (it.key() == "tail_fraction") {
      config.tail_fraction = it.value().get<double>();
      have_tail = true;
    } else {
      config.strategies.emplace_back(it.key(), it.value().get<double>());
    }
  }
  if (!have_tail)
    throw ConfigError("tail_fraction", "missing from blend config");
  config.validate();
  return config;
}

void save_blend_config(const BlendConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out << blend_config_to_json(config) << "\n";
}

BlendConfig load_blend_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return blend_config_from_json(text);
}

void save_uas_log(const UasLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  for (const auto& r : log) {
    ordered_json j;
    j["ts"] = r.ts;
    j["request_id"] = r.request_id;
    j["user_id"] = r.user_id;
    j["ad_id"] = r.ad_id;
    j["rankscore"] = r.rankscore;
    j["bid"] = r.bid;
    j["p_eng"] = r.p_eng;
    j["p_neg"] = r.p_neg;
    out << j.dump() << "\n";
  }
}

UasLog load_uas_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  UasLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError("bad UAS record in " + path + ": " + line);
    UasRecord r;
    r.ts = j.at("ts").get<Timestamp>();
    r.request_id = j.at("request_id").get<std::uint64_t>();
    r.user_id = j.at("user_id").get<UserId>();
    r.ad_id = j.at("ad_id").get<AdId>();
    r.rankscore = j.at("rankscore").get<double>();
    r.bid = j.at("bid").get<double>();
    r.p_eng = j.at("p_eng").get<double>();
    r.p_neg = j.at("p_neg").get<double>();
    log.push_back(r);
  }
  return log;
}

void save_sourced_ads(const SourcedAds& ads, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  for (const auto& [user, list] : ads.by_user) {
    ordered_json j;
    j["user_id"] = user;
    j["strategy"] = ads.strategy;
    j["generated_at"] = ads.generated_at;
    ordered_json arr = ordered_json::array();
    for (const auto& a : list) arr.push_back({a.ad_id, a.score});
    j["ads"] = arr;
    out << j.dump() << "\n";
  }
}

SourcedAds load_sourced_ads(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  SourcedAds ads;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError("bad sourced-ads record in " + path + ": " + line);
    UserId user = j.at("user_id").get<UserId>();
    ads.strategy = j.at("strategy").get<std::string>();
    ads.generated_at = j.at("generated_at").get<Timestamp>();
    auto& list = ads.by_user[user];
    for (const auto& pair : j.at("ads"))
      list.push_back({pair.at(0).get<AdId>(), pair.at(1).get<double>()});
  }
  return ads;
}

}  // namespace twerc
