#pragma once

#include <string>

#include "twerc/ann.hpp"
#include "twerc/embed.hpp"
#include "twerc/funnel.hpp"
#include "twerc/report.hpp"
#include "twerc/world.hpp"

namespace twerc {

// Simulated-clock refresh periods, in hours. Pipelines fire at integer
// multiples of their period on the event clock.
struct Cadences {
  double rankscore_refresh_hours = 3.0;
  double graph_refresh_hours = 6.0;
  double tic_hours = 12.0;
  double toc_hours = 168.0;

  void validate() const;
};

struct PipelinePaths {
  std::string world = "world.json";
  std::string requests = "requests.jsonl";
  std::string events = "events.jsonl";
  std::string graph_vertices = "vertices.jsonl";
  std::string graph_edges = "edges.jsonl";
  std::string embeddings = "embeddings.bin";
  std::string index = "index.twan";
  std::string sourced_rankscore = "sourced_rankscore.jsonl";
  std::string sourced_graph = "sourced_graph.jsonl";
  std::string uas = "uas.jsonl";
  std::string experiment_log = "experiment.jsonl";
  std::string report_json = "report.json";
  std::string report_table = "report.txt";
};

struct PipelineConfig {
  PipelinePaths paths;
  WorldConfig world;
  std::uint64_t n_requests = 50000;
  Timestamp time_span = 21 * 24 * 3600;
  double zipf_exponent = 1.1;
  std::uint64_t request_seed = 1;

  TrainParams train;
  HnswParams hnsw;
  std::uint64_t index_seed = 5;
  bool exact_index = false;
  LightParams light;

  FunnelConfig control;
  FunnelConfig treatment;
  double uas_sample_rate = 0.05;
  double bucket_rate = 0.2;
  Timestamp eval_start = 14 * 24 * 3600;
  Cadences cadences;
  bool stale_sourcing = false;  // freeze sourcing at the eval boundary

  std::size_t k_source = 200;
  Timestamp uas_window = 21 * 24 * 3600;
  double quality_time_scale_days = 1.0;
  DecayParams decay;
  bool use_decay = false;
  bool use_propagation = true;
  std::uint64_t propagate_cap = 100;
  std::uint64_t propagate_seed = 17;

  std::uint64_t bootstrap_resamples = 10000;
  std::uint64_t bootstrap_seed = 123;
  unsigned threads = 1;

  void validate() const;
};

std::string pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
void save_pipeline_config(const PipelineConfig& config, const std::string& path);

struct HistoryResult {
  EventLog events;  // ts-sorted impressions, engagements and conversions
  UasLog uas;
};

// Runs the funnel over a request stream with no sourcing strategies,
// recording event data and UAS full scores. Mutates the world's budgets.
HistoryResult run_history_sim(World& world, const RequestLog& requests,
                              const FunnelConfig& config,
                              const LightRanker& ranker,
                              double uas_sample_rate);

std::map<UserId, std::vector<UserId>> follow_graph(const World& world);

// Query vectors for every embedded user: the base entity vector, or the
// time-decayed engagement mean when decay is enabled and history exists.
std::map<UserId, std::vector<double>> build_user_query_vectors(
    const PipelineConfig& config, const EmbeddingModel& model,
    const EventLog& events, Timestamp now);

struct FullExperimentResult {
  EventLog events;
  UasLog uas;
  HetGraph graph;               // final snapshot
  EmbeddingModel embeddings;    // final model
  AnnIndex index;               // final ad index
  SourcedAds sourced_rankscore;
  SourcedAds sourced_graph;
  ExperimentLog log;
  MetricsReport report;
};

// The full chained loop: history simulation, light-ranker training,
// graph/embedding builds, cadence-driven sourcing refreshes on the
// simulated clock, twin-arm evaluation, metrics.
FullExperimentResult run_full_experiment(const PipelineConfig& config,
                                         const World& world,
                                         const RequestLog& requests);

}  // namespace twerc
