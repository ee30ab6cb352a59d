#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twerc/sourcing.hpp"
#include "twerc/world.hpp"

namespace twerc {

struct RankWeights {
  double w_neg = 0.5;          // penalty weight on negative engagement
  double reserve_price = 0.0;  // rankscore floor for winning / pricing

  void validate() const;
};

struct LightParams {
  std::uint32_t dim = 16;  // tower output dim
  std::uint64_t epochs = 3;
  double learning_rate = 0.1;
  double reg = 1e-4;
  std::uint64_t seed = 11;
};

// Two-tower pClick model: each tower sums learned embedding rows for its
// side's categorical features (plus an id embedding), and
// pClick = sigmoid(user_vec . ad_vec).
class LightRanker {
public:
  LightRanker() = default;

  std::uint32_t dim() const { return dim_; }
  std::vector<double> user_vec(const World& world, UserId id) const;
  std::vector<double> ad_vec(const World& world, AdId id) const;
  double pclick(const World& world, UserId user, AdId ad) const;

  // Ranked (score desc, ad_id asc) top-K of the eligible list by
  // pClick x bid.
  std::vector<ScoredAd> rank(const World& world, UserId user,
                             const std::vector<AdId>& eligible,
                             std::size_t k) const;

  friend LightRanker init_light_ranker(const World& world,
                                       const LightParams& params);
  friend LightRanker train_light_ranker(const EventLog& impressions,
                                        const World& world,
                                        const LightParams& params);

private:
  std::span<const double> row(const std::vector<double>& table,
                              std::size_t idx) const;
  void rebuild_ad_cache(const World& world);

  std::uint32_t dim_ = 0;
  LightParams params_;
  std::vector<double> geo_table_, lang_table_, age_table_, topic_table_,
      user_table_;
  std::vector<double> obj_table_, adv_table_, ad_table_;
  std::vector<double> ad_cache_;  // n_ads x dim, rebuilt after training
};

LightRanker init_light_ranker(const World& world, const LightParams& params);

// Logistic regression of engaged-vs-not over the impression log.
LightRanker train_light_ranker(const EventLog& impressions, const World& world,
                               const LightParams& params);

bool hard_targeting_matches(const User& user, const Ad& ad);
bool targeting_matches(const User& user, const Ad& ad);  // hard AND soft

// All ads passing hard clauses, soft clauses, and budget > 0, in id order.
std::vector<AdId> target_filter(const World& world, UserId user_id);

struct HeavyScore {
  AdId ad_id = 0;
  double p_eng = 0.0;
  double p_neg = 0.0;
};

// Oracle-plus-noise heavy ranker: clamp01(true p + N(0, sigma)). The noise
// is keyed by (world seed, request, ad), so replays and counterfactual
// scoring agree with the serving path.
std::vector<HeavyScore> heavy_rank(const World& world, const Request& request,
                                   const std::vector<AdId>& cands,
                                   double noise_sigma);

double rankscore(double bid, double p_eng, double p_neg, const RankWeights& w);

struct ScoredBid {
  AdId ad_id = 0;
  double rankscore = 0.0;
  double bid = 0.0;
};

struct AuctionSlot {
  AdId ad_id = 0;
  double rankscore = 0.0;
  double price = 0.0;  // generalized second price
};

struct AuctionResult {
  std::uint64_t request_id = 0;
  std::vector<AuctionSlot> slots;                    // rankscore desc
  std::vector<std::pair<AdId, double>> losers;       // (ad, rankscore)
};

// Winners are the top n_slots by (rankscore desc, ad_id asc) at or above
// the reserve; slot i pays bid_i * rs_{i+1} / rs_i, the last winner priced
// against the best loser or the reserve. Pure: budgets are the caller's.
AuctionResult auction(const std::vector<ScoredBid>& scored,
                      std::size_t n_slots, const RankWeights& w);

struct FunnelConfig {
  std::size_t k_light = 100;  // light-ranker top-K sent to blending
  std::size_t n_slots = 2;
  double noise_sigma = 0.05;
  RankWeights weights;
  BlendConfig blend;  // empty strategies = light-ranker-only funnel

  void validate() const;
};

struct ArmInputs {
  const LightRanker* ranker = nullptr;
  std::map<std::string, const SourcedAds*> sources;
};

// The per-(request, ad) behavioral draw shared by serving, counterfactual
// evaluation and history simulation.
struct EngagementDraw {
  bool pos = false;
  bool neg = false;
  bool conv = false;
};

EngagementDraw draw_engagement(const World& world, const Request& request,
                               AdId ad_id);

struct ImpressionRecord {
  AdId ad_id = 0;
  AdvertiserId advertiser_id = 0;
  CampaignId campaign_id = 0;
  std::uint32_t objective = 1;
  double bid = 0.0;
  double price = 0.0;
  double rankscore = 0.0;
  bool engaged_pos = false;
  bool engaged_neg = false;
  bool converted = false;
};

struct ServeOutcome {
  CandidateSet candidates;  // post serving-filter, sent to heavy ranking
  AuctionResult auction;
  std::vector<ImpressionRecord> impressions;
};

// One request through targeting -> light ranker -> blend -> serving filter
// -> heavy ranking -> auction. Decrements the winners' budgets in `world`.
ServeOutcome serve_request(World& world, const Request& request,
                           const FunnelConfig& config, const ArmInputs& inputs);

// Full counterfactual scoring of the target-filtered set for a seeded
// sample of requests; no side effects on budgets.
UasLog uas_log(const World& world, const RequestLog& requests,
               double sample_rate, const FunnelConfig& config);

// Per-request components of the evaluation metrics, written only for
// requests in the metric bucket.
struct EvalComponents {
  std::uint64_t tp = 0, fn = 0;  // engagement recall
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>> tp_fn_by_obj;
  std::uint64_t winner_slots = 0, winner_hits = 0;  // auction recall
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>> ar_by_obj;
  double rncg_num = 0.0, rncg_den = 0.0;
  std::map<std::uint32_t, std::pair<double, double>> rncg_by_obj;
};

struct ArmRequestRecord {
  std::uint64_t request_id = 0;
  Timestamp ts = 0;
  UserId user_id = 0;
  bool evaluated = false;
  std::vector<ImpressionRecord> impressions;
  std::optional<EvalComponents> eval;
};

struct ArmLog {
  std::string name;
  std::vector<ArmRequestRecord> requests;
};

struct ExperimentLog {
  ArmLog control;
  ArmLog treatment;
  std::uint64_t n_requests = 0;
  std::uint64_t n_eval = 0;
  double bucket_rate = 0.0;
  std::uint32_t objective_count = 0;
  std::uint64_t n_advertisers = 0;
  std::uint64_t n_campaigns = 0;
  RankWeights weights;  // shared by utility reporting
};

// Hash-assigned metric bucket; the share of requests landing in it
// converges to bucket_rate.
bool in_metric_bucket(const World& world, std::uint64_t request_id,
                      double bucket_rate);

// Serves one request in one arm (mutating that arm's budget state) and,
// for bucketed requests, attaches the counterfactual metric components.
ArmRequestRecord run_arm_request(World& arm_world, const Request& request,
                                 const FunnelConfig& config,
                                 const ArmInputs& inputs, bool evaluated);

// Twin-universe experiment: both arms replay the same request stream on
// independent budget copies; metrics come from the hash-assigned bucket
// (share = bucket_rate). Identical arm configs + inputs reproduce
// identical logs exactly.
ExperimentLog run_experiment(const World& world, const FunnelConfig& control,
                             const ArmInputs& control_inputs,
                             const FunnelConfig& treatment,
                             const ArmInputs& treatment_inputs,
                             const RequestLog& requests, double bucket_rate);

void save_experiment_log(const ExperimentLog& log, const std::string& path);
ExperimentLog load_experiment_log(const std::string& path);

}  // namespace twerc
