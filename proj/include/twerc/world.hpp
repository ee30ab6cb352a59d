#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace twerc {

using UserId = std::uint64_t;
using AdId = std::uint64_t;
using AdvertiserId = std::uint64_t;
using CampaignId = std::uint64_t;
using Timestamp = std::int64_t;  // seconds

constexpr double kSecondsPerDay = 86400.0;

// Synthetic-universe generator parameters. Identical config + seed must
// produce a byte-identical serialized world.
struct WorldConfig {
  std::uint64_t n_users = 2000;
  std::uint64_t n_advertisers = 100;
  std::uint64_t n_ads = 5000;
  std::uint64_t latent_dim = 16;
  std::uint64_t n_geos = 8;
  std::uint64_t n_languages = 6;
  std::uint64_t n_age_bands = 5;
  std::uint64_t n_topics = 12;
  double bid_mean = 1.0;  // mean of the log-normal bid distribution
  double bid_sigma = 0.5;
  double budget_mean = 80.0;
  double budget_sigma = 0.5;
  std::uint64_t objective_count = 5;
  double base_engagement_rate = 0.08;
  std::uint64_t seed = 42;

  void validate() const;  // throws ConfigError naming the bad field
};

// geo/language/age sets are hard constraints (AND-combined); follow/topic
// sets are soft (OR-combined). An empty set is unconstrained.
struct TargetingClause {
  std::vector<std::uint32_t> geo_set;
  std::vector<std::uint32_t> language_set;
  std::vector<std::uint32_t> age_set;
  std::vector<UserId> follow_set;
  std::vector<std::uint32_t> topic_set;
};

struct User {
  UserId id = 0;
  std::vector<double> latent;  // unit norm
  std::uint32_t geo = 0;
  std::uint32_t language = 0;
  std::uint32_t age_band = 0;
  std::vector<std::uint32_t> topics;
  std::vector<UserId> followings;
};

struct Ad {
  AdId id = 0;
  AdvertiserId advertiser_id = 0;
  CampaignId campaign_id = 0;
  std::uint32_t objective = 1;  // 1..objective_count
  std::vector<double> latent;   // unit norm
  double bid = 0.0;
  double remaining_budget = 0.0;
  TargetingClause hard_targeting;  // hard sets only
  TargetingClause soft_targeting;  // soft sets only
};

struct Advertiser {
  AdvertiserId id = 0;
};

struct Campaign {
  CampaignId id = 0;
  AdvertiserId advertiser_id = 0;
  double conversion_rate = 0.0;
};

struct World {
  WorldConfig config;
  std::vector<User> users;
  std::vector<Ad> ads;
  std::vector<Advertiser> advertisers;
  std::vector<Campaign> campaigns;
  // Calibrated logistic offsets: the population mean of p_pos under the
  // shipped generator equals config.base_engagement_rate.
  double b_pos = 0.0;
  double b_neg = 0.0;
  // Per-objective additive offset on the positive logit, index objective-1.
  std::vector<double> objective_bias;

  const User& user(UserId id) const;  // throws LookupError
  const Ad& ad(AdId id) const;        // throws LookupError
  Ad& mutable_ad(AdId id);            // budget accounting
  const Campaign& campaign(CampaignId id) const;
  double pos_logit_offset(std::uint32_t objective) const;
};

enum class EventType : std::uint8_t {
  impression = 0,
  positive_engagement = 1,
  negative_engagement = 2,
  conversion = 3,
};

const char* event_type_name(EventType e);
std::optional<EventType> event_type_from_name(const std::string& name);

struct EventRecord {
  Timestamp ts = 0;
  UserId user_id = 0;
  AdId ad_id = 0;
  AdvertiserId advertiser_id = 0;
  EventType event = EventType::impression;
  std::uint32_t objective = 1;
};

struct EventLog {
  std::vector<EventRecord> records;  // non-decreasing ts
  std::uint64_t malformed_lines = 0;  // dropped while loading
};

struct Request {
  std::uint64_t request_id = 0;
  Timestamp ts = 0;
  UserId user_id = 0;
};

using RequestLog = std::vector<Request>;

struct EngagementProb {
  double p_pos = 0.0;
  double p_neg = 0.0;
};

World gen_world(const WorldConfig& config);

// p_pos = sigmoid(z_u . z_a + b_pos + objective bias),
// p_neg = sigmoid(-z_u . z_a + b_neg).
EngagementProb true_engagement_prob(const World& world, UserId user_id,
                                    AdId ad_id);

struct RequestGenParams {
  double zipf_exponent = 1.1;  // per-user activity tail
  std::uint64_t seed = 1;
};

RequestLog gen_requests(const World& world, std::uint64_t n_requests,
                        Timestamp time_span,
                        const RequestGenParams& params = {});

struct ImpressionEvent {
  Timestamp ts = 0;
  UserId user_id = 0;
  AdId ad_id = 0;
};

// Test hook: force the engagement probabilities instead of the oracle.
struct EngagementOverrides {
  std::optional<double> p_pos;
  std::optional<double> p_neg;
};

// Emits the impressions plus independently sampled engagement events, and
// conversions sampled from positives at the campaign conversion rate.
EventLog sample_engagements(const World& world,
                            const std::vector<ImpressionEvent>& impressions,
                            std::uint64_t seed,
                            const EngagementOverrides& overrides = {});

// JSON document for World, JSON-lines for the logs.
std::string world_to_json(const World& world);
void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);

void save_event_log(const EventLog& log, const std::string& path);
EventLog load_event_log(const std::string& path);

void save_request_log(const RequestLog& log, const std::string& path);
RequestLog load_request_log(const std::string& path);

}  // namespace twerc
