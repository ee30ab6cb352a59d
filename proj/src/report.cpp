#include "twerc/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "twerc/errors.hpp"
#include "twerc/rng.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

const MetricDelta& MetricsReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw LookupError("no report row named " + name);
}

namespace {

// Everything a resample needs, flattened per evaluated request.
struct ArmComponents {
  std::vector<EvalComponents> eval;              // aligned with request index
  std::vector<double> util_sum;                  // sum(bid*eng - w bid*neg)
  std::vector<std::uint64_t> imps;
  std::vector<double> revenue;
  std::vector<std::vector<AdvertiserId>> served;  // advertisers per request
  std::vector<std::vector<std::pair<CampaignId, std::uint64_t>>> convs;
};

ArmComponents collect(const ArmLog& arm, const RankWeights& w) {
  ArmComponents out;
  for (const auto& r : arm.requests) {
    if (!r.evaluated) continue;
    out.eval.push_back(r.eval.value_or(EvalComponents{}));
    double util = 0.0, rev = 0.0;
    std::vector<AdvertiserId> served;
    std::vector<std::pair<CampaignId, std::uint64_t>> convs;
    for (const auto& imp : r.impressions) {
      util += imp.bid * (imp.engaged_pos ? 1.0 : 0.0) -
              w.w_neg * imp.bid * (imp.engaged_neg ? 1.0 : 0.0);
      rev += imp.price;
      served.push_back(imp.advertiser_id);
      if (imp.converted) convs.emplace_back(imp.campaign_id, 1);
    }
    out.util_sum.push_back(util);
    out.imps.push_back(r.impressions.size());
    out.revenue.push_back(rev);
    out.served.push_back(std::move(served));
    out.convs.push_back(std::move(convs));
  }
  return out;
}

struct MetricSpec {
  std::string name;
  // Evaluates the metric for one arm over the given request indices;
  // nullopt when undefined (e.g. no engagements in the sample).
  std::function<std::optional<double>(const ArmComponents&,
                                      const std::vector<std::size_t>&)>
      eval;
};

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

std::vector<MetricSpec> make_specs(const ExperimentLog& log,
                                   const std::map<CampaignId, CampaignStats>& pooled) {
  std::vector<MetricSpec> specs;

  specs.push_back({"recall", [](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    std::uint64_t tp = 0, fn = 0;
    for (std::size_t i : idx) {
      tp += a.eval[i].tp;
      fn += a.eval[i].fn;
    }
    return ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
  }});
  specs.push_back({"auction_recall", [](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    std::uint64_t hits = 0, slots = 0;
    for (std::size_t i : idx) {
      hits += a.eval[i].winner_hits;
      slots += a.eval[i].winner_slots;
    }
    return ratio(static_cast<double>(hits), static_cast<double>(slots));
  }});
  specs.push_back({"rncg", [](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    double num = 0.0, den = 0.0;
    for (std::size_t i : idx) {
      num += a.eval[i].rncg_num;
      den += a.eval[i].rncg_den;
    }
    return ratio(num, den);
  }});
  specs.push_back({"utility", [](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    double util = 0.0;
    std::uint64_t n = 0;
    for (std::size_t i : idx) {
      util += a.util_sum[i];
      n += a.imps[i];
    }
    if (n == 0) return std::optional<double>(0.0);
    return std::optional<double>(1000.0 * util / static_cast<double>(n));
  }});
  specs.push_back({"revenue", [](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    double rev = 0.0;
    for (std::size_t i : idx) rev += a.revenue[i];
    return std::optional<double>(rev);
  }});

  std::uint64_t n_adv = log.n_advertisers;
  specs.push_back({"t1ps", [n_adv](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    std::map<AdvertiserId, std::uint64_t> counts;
    for (std::uint64_t adv = 0; adv < n_adv; ++adv) counts[adv] = 0;
    for (std::size_t i : idx)
      for (AdvertiserId adv : a.served[i]) ++counts[adv];
    return std::optional<double>(t1ps(counts));
  }});

  specs.push_back({"ads_value", [pooled](const ArmComponents& a, const std::vector<std::size_t>& idx) {
    std::map<CampaignId, std::uint64_t> bucket;
    for (std::size_t i : idx)
      for (const auto& [c, n] : a.convs[i]) bucket[c] += n;
    return std::optional<double>(ads_value(pooled, bucket).value);
  }});

  for (std::uint32_t obj = 1; obj <= log.objective_count; ++obj) {
    std::string suffix = "[obj=" + std::to_string(obj) + "]";
    specs.push_back({"recall" + suffix, [obj](const ArmComponents& a, const std::vector<std::size_t>& idx) {
      std::uint64_t tp = 0, fn = 0;
      for (std::size_t i : idx) {
        auto it = a.eval[i].tp_fn_by_obj.find(obj);
        if (it == a.eval[i].tp_fn_by_obj.end()) continue;
        tp += it->second.first;
        fn += it->second.second;
      }
      return ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    }});
    specs.push_back({"auction_recall" + suffix, [obj](const ArmComponents& a, const std::vector<std::size_t>& idx) {
      std::uint64_t slots = 0, hits = 0;
      for (std::size_t i : idx) {
        auto it = a.eval[i].ar_by_obj.find(obj);
        if (it == a.eval[i].ar_by_obj.end()) continue;
        slots += it->second.first;
        hits += it->second.second;
      }
      return ratio(static_cast<double>(hits), static_cast<double>(slots));
    }});
    specs.push_back({"rncg" + suffix, [obj](const ArmComponents& a, const std::vector<std::size_t>& idx) {
      double num = 0.0, den = 0.0;
      for (std::size_t i : idx) {
        auto it = a.eval[i].rncg_by_obj.find(obj);
        if (it == a.eval[i].rncg_by_obj.end()) continue;
        num += it->second.first;
        den += it->second.second;
      }
      return ratio(num, den);
    }});
  }
  return specs;
}

std::optional<double> delta_pct(std::optional<double> c, std::optional<double> t) {
  if (!c || !t) return std::nullopt;
  if (*c == 0.0) {
    if (*t == 0.0) return 0.0;
    return std::nullopt;
  }
  return 100.0 * (*t - *c) / std::abs(*c);
}

}  // namespace

MetricsReport compute_metrics(const ExperimentLog& log,
                              const BootstrapParams& params) {
  MetricsReport report;
  report.n_requests = log.n_requests;
  report.n_eval = log.n_eval;
  report.bucket_rate = log.bucket_rate;

  ArmComponents control = collect(log.control, log.weights);
  ArmComponents treatment = collect(log.treatment, log.weights);
  if (control.eval.size() != treatment.eval.size())
    throw DataIntegrityError("experiment arms disagree on evaluated requests");
  std::size_t n = control.eval.size();

  // Campaign revenue / conversion totals pooled over both arms stand in
  // for the platform-level cost-per-conversion ratios.
  std::map<CampaignId, CampaignStats> pooled;
  std::uint64_t pooled_convs = 0;
  for (const ArmComponents* a : {&control, &treatment}) {
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [c, cnt] : a->convs[i]) {
        pooled[c].conversions += cnt;
        pooled_convs += cnt;
      }
    }
  }
  (void)pooled_convs;
  for (const ArmLog* arm : {&log.control, &log.treatment}) {
    for (const auto& r : arm->requests) {
      if (!r.evaluated) continue;
      for (const auto& imp : r.impressions) pooled[imp.campaign_id].revenue += imp.price;
    }
  }
  {
    std::map<CampaignId, std::uint64_t> empty_bucket;
    report.ads_value_skipped_campaigns =
        ads_value(pooled, empty_bucket).skipped_campaigns;
  }

  auto specs = make_specs(log, pooled);

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;

  std::vector<std::optional<double>> c_point(specs.size()), t_point(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    c_point[s] = specs[s].eval(control, all);
    t_point[s] = specs[s].eval(treatment, all);
  }

  // Paired bootstrap: the same resampled request indices feed both arms.
  std::vector<std::optional<double>> p_raw(specs.size());
  if (params.resamples > 0 && n > 0) {
    std::vector<std::uint64_t> le(specs.size(), 0), ge(specs.size(), 0),
        valid(specs.size(), 0);
    Rng rng(params.seed);
    std::vector<std::size_t> idx(n);
    for (std::uint64_t b = 0; b < params.resamples; ++b) {
      for (std::size_t i = 0; i < n; ++i)
        idx[i] = static_cast<std::size_t>(rng.uniform_index(n));
      for (std::size_t s = 0; s < specs.size(); ++s) {
        auto c = specs[s].eval(control, idx);
        auto t = specs[s].eval(treatment, idx);
        if (!c || !t) continue;
        double d = *t - *c;
        ++valid[s];
        le[s] += d <= 0.0;
        ge[s] += d >= 0.0;
      }
    }
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (!c_point[s] || !t_point[s] || valid[s] == 0) continue;
      double lo = static_cast<double>(std::min(le[s], ge[s]) + 1) /
                  static_cast<double>(valid[s] + 1);
      p_raw[s] = std::min(1.0, 2.0 * lo);
    }
  }

  std::vector<double> family;
  std::vector<std::size_t> family_idx;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (p_raw[s]) {
      family.push_back(*p_raw[s]);
      family_idx.push_back(s);
    }
  }
  std::vector<double> adjusted = by_adjust(family);

  report.rows.resize(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    MetricDelta& row = report.rows[s];
    row.name = specs[s].name;
    row.control = c_point[s];
    row.treatment = t_point[s];
    row.delta_pct = delta_pct(c_point[s], t_point[s]);
    row.p_raw = p_raw[s];
  }
  for (std::size_t i = 0; i < family_idx.size(); ++i)
    report.rows[family_idx[i]].p_adj = adjusted[i];
  return report;
}

namespace {

ordered_json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> opt_from_json(const ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  ordered_json j;
  j["format_version"] = 1;
  j["n_requests"] = report.n_requests;
  j["n_eval"] = report.n_eval;
  j["bucket_rate"] = report.bucket_rate;
  j["ads_value_skipped_campaigns"] = report.ads_value_skipped_campaigns;
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) {
    ordered_json row;
    row["metric"] = r.name;
    row["control"] = opt_to_json(r.control);
    row["treatment"] = opt_to_json(r.treatment);
    row["delta_pct"] = opt_to_json(r.delta_pct);
    row["p_raw"] = opt_to_json(r.p_raw);
    row["p_adj"] = opt_to_json(r.p_adj);
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("report is not valid JSON");
  if (j.value("format_version", -1) != 1)
    throw FormatError("unsupported report format version");
  MetricsReport report;
  report.n_requests = j.at("n_requests").get<std::uint64_t>();
  report.n_eval = j.at("n_eval").get<std::uint64_t>();
  report.bucket_rate = j.at("bucket_rate").get<double>();
  report.ads_value_skipped_campaigns =
      j.at("ads_value_skipped_campaigns").get<std::uint64_t>();
  for (const auto& row : j.at("rows")) {
    MetricDelta d;
    d.name = row.at("metric").get<std::string>();
    d.control = opt_from_json(row.at("control"));
    d.treatment = opt_from_json(row.at("treatment"));
    d.delta_pct = opt_from_json(row.at("delta_pct"));
    d.p_raw = opt_from_json(row.at("p_raw"));
    d.p_adj = opt_from_json(row.at("p_adj"));
    report.rows.push_back(d);
  }
  return report;
}

void save_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out << report_to_json(report) << "\n";
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return report_from_json(text);
}

std::string render_report_table(const MetricsReport& report) {
  auto fmt = [](const std::optional<double>& v, bool pct) {
    if (!v) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(pct ? 2 : 4) << *v;
    if (pct) os << "%";
    return os.str();
  };
  std::vector<std::array<std::string, 6>> lines;
  lines.push_back({"metric", "control", "treatment", "delta", "p_raw", "p_adj"});
  for (const auto& r : report.rows) {
    lines.push_back({r.name, fmt(r.control, false), fmt(r.treatment, false),
                     fmt(r.delta_pct, true), fmt(r.p_raw, false),
                     fmt(r.p_adj, false)});
  }
  std::array<std::size_t, 6> width{};
  for (const auto& l : lines)
    for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], l[c].size());

  std::ostringstream os;
  os << "evaluated " << report.n_eval << " of " << report.n_requests
     << " requests (bucket rate " << report.bucket_rate << ")\n";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t c = 0; c < 6; ++c) {
      os << std::left << std::setw(static_cast<int>(width[c]) + 2) << lines[i][c];
    }
    os << "\n";
    if (i == 0) {
      os << std::string(std::accumulate(width.begin(), width.end(), std::size_t{0}) + 12,
                        '-')
         << "\n";
    }
  }
  return os.str();
}

}  // namespace twerc
