#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "twerc/funnel.hpp"

namespace twerc {

// TP = engaged ads present in the candidates, FN = engaged ads absent;
// returns TP / (TP + FN), or nullopt when no request had an engagement.
std::optional<double> recall(
    const std::vector<std::vector<AdId>>& candidates,
    const std::vector<std::vector<AdId>>& engaged);

// Fraction of winner slots (from full counterfactual scoring) whose ad
// appears in the candidate set.
double auction_recall(const std::vector<std::vector<AdId>>& candidates,
                      const std::vector<std::vector<AdId>>& winners);

// Sum of the top-min(m, |values|) values.
double top_m_sum(std::vector<double> values, std::size_t m);

// Rankscore normalized cumulative gain:
// sum_i top-m(C_i) / sum_i top-m(R_i). Each C_i must be a multiset subset
// of R_i, or a DataIntegrityError is thrown.
double rncg(const std::vector<std::vector<double>>& eligible_rankscores,
            const std::vector<std::vector<double>>& candidate_rankscores,
            std::size_t m);

// Share of serving captured by the top ceil(0.01 n) advertisers, ties
// broken by ascending id; 0 when nothing was served.
double t1ps(const std::map<AdvertiserId, std::uint64_t>& served_counts);

struct CampaignStats {
  double revenue = 0.0;
  std::uint64_t conversions = 0;
};

struct AdsValueResult {
  double value = 0.0;
  std::uint64_t skipped_campaigns = 0;  // campaigns with zero conversions
};

// sum_i (R_i / C_i) * C_ij over campaigns with C_i > 0.
AdsValueResult ads_value(
    const std::map<CampaignId, CampaignStats>& campaigns,
    const std::map<CampaignId, std::uint64_t>& bucket_conversions);

struct UtilityImpression {
  double bid = 0.0;
  bool engaged = false;
  bool negative = false;
};

// Observed-value rankscore per mille impressions:
// 1000 * sum(bid*eng - w_neg*bid*neg) / n.
double utility(std::span<const UtilityImpression> impressions,
               const RankWeights& w);

// Benjamini-Yekutieli step-up adjustment; output is in the input's order
// and pointwise >= the input.
std::vector<double> by_adjust(const std::vector<double>& p_values);

}  // namespace twerc
