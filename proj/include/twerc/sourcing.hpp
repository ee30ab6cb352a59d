#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "twerc/ann.hpp"
#include "twerc/world.hpp"

namespace twerc {

// One full-scoring record from unconstrained ad serving.
struct UasRecord {
  Timestamp ts = 0;
  std::uint64_t request_id = 0;
  UserId user_id = 0;
  AdId ad_id = 0;
  double rankscore = 0.0;
  double bid = 0.0;
  double p_eng = 0.0;
  double p_neg = 0.0;
};

using UasLog = std::vector<UasRecord>;

// Time-aware user-ad quality: a self-normalized, freshness-weighted mean
// of the pair's logged rankscores over the lookback window.
struct QualityScores {
  std::map<std::pair<UserId, AdId>, double> q;
  Timestamp t0 = 0;
  Timestamp window = 21 * 24 * 3600;  // lookback seconds
};

struct ScoredAd {
  AdId ad_id = 0;
  double score = 0.0;
};

struct SourcedAds {
  std::string strategy;
  std::map<UserId, std::vector<ScoredAd>> by_user;  // scores non-increasing
  Timestamp generated_at = 0;
};

// Capacity allocation per sourcing strategy, in declared order, plus the
// light-ranker tail fraction M the strategies may replace.
struct BlendConfig {
  std::vector<std::pair<std::string, double>> strategies;
  double tail_fraction = 0.4;

  double fraction_of(const std::string& strategy) const;
  void validate() const;
};

struct CandidateSet {
  std::uint64_t request_id = 0;
  UserId user_id = 0;
  std::vector<AdId> ad_ids;  // ranked, deduplicated
};

// q(u,a) = sum_t rs(u,a,t) e^{(t-t0)/tau} / sum_t e^{(t-t0)/tau}, t in
// days, over records with t0 - t <= window.
QualityScores quality_scores(const UasLog& log, Timestamp t0,
                             Timestamp window_seconds,
                             double time_scale_days = 1.0);

SourcedAds topk_rankscore_candidates(const QualityScores& scores,
                                     std::size_t k_source);

using EligibilityFn = std::function<bool(UserId, AdId)>;

// Per covered user, the top eligible ads by inner product between the
// user's query vector and the ad index. Per-user outputs are pure, so the
// batch may run on several threads without changing the result.
SourcedAds graph_candidates(
    const std::map<UserId, std::vector<double>>& user_vectors,
    const AnnIndex& ad_index, std::size_t k_source,
    const EligibilityFn& eligibility, Timestamp generated_at,
    unsigned threads = 1);

// Tail replacement: keep the head of the light ranker's list, hand the
// tail budget to the strategies in declared order (deduplicated against
// everything already placed), and backfill any unused budget from the
// displaced light tail in its original order.
CandidateSet blend(const std::vector<AdId>& light_topk,
                   const std::map<std::string, std::vector<AdId>>& sources,
                   const BlendConfig& config);

// Serving-time filter: drops ads with exhausted budget or whose hard
// targeting no longer matches the user. Order preserved.
CandidateSet serving_filter(const CandidateSet& cands, const World& world,
                            Timestamp t);

std::string blend_config_to_json(const BlendConfig& config);
BlendConfig blend_config_from_json(const std::string& text);
void save_blend_config(const BlendConfig& config, const std::string& path);
BlendConfig load_blend_config(const std::string& path);

void save_uas_log(const UasLog& log, const std::string& path);
UasLog load_uas_log(const std::string& path);

void save_sourced_ads(const SourcedAds& ads, const std::string& path);
SourcedAds load_sourced_ads(const std::string& path);

}  // namespace twerc
