#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twerc/funnel.hpp"
#include "twerc/metrics.hpp"

namespace twerc {

struct BootstrapParams {
  std::uint64_t resamples = 10000;  // 0 skips significance testing
  std::uint64_t seed = 123;
};

struct MetricDelta {
  std::string name;
  std::optional<double> control;
  std::optional<double> treatment;
  std::optional<double> delta_pct;  // 100 (t - c) / |c|
  std::optional<double> p_raw;
  std::optional<double> p_adj;  // Benjamini-Yekutieli over the report family
};

struct MetricsReport {
  std::uint64_t n_requests = 0;
  std::uint64_t n_eval = 0;
  double bucket_rate = 0.0;
  std::uint64_t ads_value_skipped_campaigns = 0;
  std::vector<MetricDelta> rows;

  const MetricDelta& row(const std::string& name) const;  // LookupError
};

// Point estimates for both arms plus paired-bootstrap p-values over the
// evaluated requests, BY-adjusted across every reported delta.
MetricsReport compute_metrics(const ExperimentLog& log,
                              const BootstrapParams& params = {});

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
void save_report(const MetricsReport& report, const std::string& path);
MetricsReport load_report(const std::string& path);

// Aligned-column text table, one metric per row.
std::string render_report_table(const MetricsReport& report);

}  // namespace twerc
