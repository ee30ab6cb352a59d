#include "twerc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "twerc/errors.hpp"

namespace twerc {

std::optional<double> recall(const std::vector<std::vector<AdId>>& candidates,
                             const std::vector<std::vector<AdId>>& engaged) {
  if (candidates.size() != engaged.size())
    throw ArgumentError("recall: request count mismatch");
  std::uint64_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < engaged.size(); ++i) {
    std::set<AdId> cand(candidates[i].begin(), candidates[i].end());
    for (AdId a : engaged[i]) {
      if (cand.count(a))
        ++tp;
      else
        ++fn;
    }
  }
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double auction_recall(const std::vector<std::vector<AdId>>& candidates,
                      const std::vector<std::vector<AdId>>& winners) {
  if (candidates.size() != winners.size())
    throw ArgumentError("auction_recall: request count mismatch");
  std::uint64_t slots = 0, hits = 0;
  for (std::size_t i = 0; i < winners.size(); ++i) {
    std::set<AdId> cand(candidates[i].begin(), candidates[i].end());
    for (AdId w : winners[i]) {
      ++slots;
      hits += cand.count(w);
    }
  }
  return slots == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(slots);
}

double top_m_sum(std::vector<double> values, std::size_t m) {
  std::size_t take = std::min(m, values.size());
  std::partial_sort(values.begin(), values.begin() + take, values.end(),
                    std::greater<double>());
  double s = 0.0;
  for (std::size_t i = 0; i < take; ++i) s += values[i];
  return s;
}

double rncg(const std::vector<std::vector<double>>& eligible_rankscores,
            const std::vector<std::vector<double>>& candidate_rankscores,
            std::size_t m) {
  if (eligible_rankscores.size() != candidate_rankscores.size())
    throw ArgumentError("rncg: request count mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < eligible_rankscores.size(); ++i) {
    std::vector<double> r = eligible_rankscores[i];
    std::vector<double> c = candidate_rankscores[i];
    std::sort(r.begin(), r.end());
    std::sort(c.begin(), c.end());
    // multiset inclusion C_i within R_i
    std::size_t ri = 0;
    for (double cv : c) {
      while (ri < r.size() && r[ri] < cv) ++ri;
      if (ri >= r.size() || r[ri] != cv)
        throw DataIntegrityError(
            "rncg: candidate rankscore not in the eligible multiset");
      ++ri;
    }
    num += top_m_sum(candidate_rankscores[i], m);
    den += top_m_sum(eligible_rankscores[i], m);
  }
  return den == 0.0 ? 0.0 : num / den;
}

double t1ps(const std::map<AdvertiserId, std::uint64_t>& served_counts) {
  if (served_counts.empty())
    throw ArgumentError("t1ps: need at least one advertiser");
  double total = 0.0;
  std::vector<std::pair<std::uint64_t, AdvertiserId>> by_count;
  by_count.reserve(served_counts.size());
  for (const auto& [adv, count] : served_counts) {
    total += static_cast<double>(count);
    by_count.emplace_back(count, adv);
  }
  if (total == 0.0) return 0.0;
  std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::size_t top = static_cast<std::size_t>(
      std::ceil(0.01 * static_cast<double>(served_counts.size())));
  double head = 0.0;
  for (std::size_t i = 0; i < top && i < by_count.size(); ++i)
    head += static_cast<double>(by_count[i].first);
  return head / total;
}

AdsValueResult ads_value(
    const std::map<CampaignId, CampaignStats>& campaigns,
    const std::map<CampaignId, std::uint64_t>& bucket_conversions) {
  AdsValueResult out;
  for (const auto& [campaign, stats] : campaigns) {
    if (stats.conversions == 0) {
      ++out.skipped_campaigns;
      continue;
    }
    auto it = bucket_conversions.find(campaign);
    if (it == bucket_conversions.end()) continue;
    out.value += stats.revenue / static_cast<double>(stats.conversions) *
                 static_cast<double>(it->second);
  }
  return out;
}

double utility(std::span<const UtilityImpression> impressions,
               const RankWeights& w) {
  if (impressions.empty()) return 0.0;
  double total = 0.0;
  for (const auto& imp : impressions) {
    total += imp.bid * (imp.engaged ? 1.0 : 0.0) -
             w.w_neg * imp.bid * (imp.negative ? 1.0 : 0.0);
  }
  return 1000.0 * total / static_cast<double>(impressions.size());
}

std::vector<double> by_adjust(const std::vector<double>& p_values) {
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      throw ArgumentError("by_adjust: p-value outside [0, 1]");
  std::size_t m = p_values.size();
  if (m == 0) return {};

  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p_values[a] < p_values[b];
  });

  double c_m = 0.0;
  for (std::size_t k = 1; k <= m; ++k) c_m += 1.0 / static_cast<double>(k);

  // Step-up: adj_(i) = min(1, p_(i) m c(m) / i), then cumulative min from
  // the largest rank down.
  std::vector<double> sorted_adj(m);
  for (std::size_t i = 0; i < m; ++i) {
    sorted_adj[i] = std::min(1.0, p_values[order[i]] * static_cast<double>(m) *
                                      c_m / static_cast<double>(i + 1));
  }
  for (std::size_t i = m; i-- > 1;)
    sorted_adj[i - 1] = std::min(sorted_adj[i - 1], sorted_adj[i]);

  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[order[i]] = sorted_adj[i];
  return out;
}

}  // namespace twerc
