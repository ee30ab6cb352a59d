#include "twerc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "twerc/errors.hpp"
#include "twerc/graph.hpp"
#include "twerc/rng.hpp"
#include "twerc/sourcing.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

void Cadences::validate() const {
  if (!(rankscore_refresh_hours > 0.0))
    throw ConfigError("rankscore_refresh_hours", "must be > 0");
  if (!(graph_refresh_hours > 0.0))
    throw ConfigError("graph_refresh_hours", "must be > 0");
  if (!(tic_hours > 0.0)) throw ConfigError("tic_hours", "must be > 0");
  if (!(toc_hours > 0.0)) throw ConfigError("toc_hours", "must be > 0");
}

void PipelineConfig::validate() const {
  world.validate();
  if (n_requests < 1) throw ConfigError("n_requests", "count must be >= 1");
  if (time_span < 1) throw ConfigError("time_span", "must be >= 1 second");
  if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent", "must be > 0");
  train.validate();
  hnsw.validate();
  control.validate();
  treatment.validate();
  if (!(uas_sample_rate > 0.0) || uas_sample_rate > 1.0)
    throw ConfigError("uas_sample_rate", "must be in (0, 1]");
  if (!(bucket_rate > 0.0) || !(bucket_rate < 1.0))
    throw ConfigError("bucket_rate", "must be in (0, 1)");
  if (eval_start < 1 || eval_start >= time_span)
    throw ConfigError("eval_start", "must be inside (0, time_span)");
  cadences.validate();
  if (k_source < 1) throw ConfigError("k_source", "must be >= 1");
  if (uas_window < 1) throw ConfigError("uas_window", "must be >= 1 second");
  if (!(quality_time_scale_days > 0.0))
    throw ConfigError("quality_time_scale_days", "must be > 0");
  decay.validate();
  if (propagate_cap < 1) throw ConfigError("propagate_cap", "must be >= 1");
  if (threads < 1) throw ConfigError("threads", "must be >= 1");
}

namespace {

ordered_json blend_json(const BlendConfig& b) {
  return ordered_json::parse(blend_config_to_json(b));
}

ordered_json funnel_json(const FunnelConfig& f) {
  ordered_json j;
  j["k_light"] = f.k_light;
  j["n_slots"] = f.n_slots;
  j["noise_sigma"] = f.noise_sigma;
  j["w_neg"] = f.weights.w_neg;
  j["reserve_price"] = f.weights.reserve_price;
  j["blend"] = blend_json(f.blend);
  return j;
}

FunnelConfig funnel_from_json(const ordered_json& j) {
  FunnelConfig f;
  f.k_light = j.at("k_light").get<std::size_t>();
  f.n_slots = j.at("n_slots").get<std::size_t>();
  f.noise_sigma = j.at("noise_sigma").get<double>();
  f.weights.w_neg = j.at("w_neg").get<double>();
  f.weights.reserve_price = j.at("reserve_price").get<double>();
  f.blend = blend_config_from_json(j.at("blend").dump());
  return f;
}

}  // namespace

std::string pipeline_config_to_json(const PipelineConfig& c) {
  ordered_json j;
  j["format_version"] = 1;
  ordered_json paths;
  paths["world"] = c.paths.world;
  paths["requests"] = c.paths.requests;
  paths["events"] = c.paths.events;
  paths["graph_vertices"] = c.paths.graph_vertices;
  paths["graph_edges"] = c.paths.graph_edges;
  paths["embeddings"] = c.paths.embeddings;
  paths["index"] = c.paths.index;
  paths["sourced_rankscore"] = c.paths.sourced_rankscore;
  paths["sourced_graph"] = c.paths.sourced_graph;
  paths["uas"] = c.paths.uas;
  paths["experiment_log"] = c.paths.experiment_log;
  paths["report_json"] = c.paths.report_json;
  paths["report_table"] = c.paths.report_table;
  j["paths"] = paths;

  ordered_json w;
  w["n_users"] = c.world.n_users;
  w["n_advertisers"] = c.world.n_advertisers;
  w["n_ads"] = c.world.n_ads;
  w["latent_dim"] = c.world.latent_dim;
  w["n_geos"] = c.world.n_geos;
  w["n_languages"] = c.world.n_languages;
  w["n_age_bands"] = c.world.n_age_bands;
  w["n_topics"] = c.world.n_topics;
  w["bid_mean"] = c.world.bid_mean;
  w["bid_sigma"] = c.world.bid_sigma;
  w["budget_mean"] = c.world.budget_mean;
  w["budget_sigma"] = c.world.budget_sigma;
  w["objective_count"] = c.world.objective_count;
  w["base_engagement_rate"] = c.world.base_engagement_rate;
  w["seed"] = c.world.seed;
  j["world"] = w;

  j["n_requests"] = c.n_requests;
  j["time_span"] = c.time_span;
  j["zipf_exponent"] = c.zipf_exponent;
  j["request_seed"] = c.request_seed;

  ordered_json t;
  t["dim"] = c.train.dim;
  t["reg"] = c.train.reg;
  t["negatives_batch"] = c.train.negatives_batch;
  t["negatives_uniform"] = c.train.negatives_uniform;
  t["epochs"] = c.train.epochs;
  t["learning_rate"] = c.train.learning_rate;
  t["batch_size"] = c.train.batch_size;
  t["optimizer"] =
      c.train.optimizer == TrainParams::Optimizer::adagrad ? "adagrad" : "sgd";
  t["loss_delta_stop"] = c.train.loss_delta_stop;
  t["seed"] = c.train.seed;
  j["train"] = t;

  ordered_json h;
  h["max_links"] = c.hnsw.max_links;
  h["ef_construction"] = c.hnsw.ef_construction;
  h["ef_search"] = c.hnsw.ef_search;
  j["hnsw"] = h;
  j["index_seed"] = c.index_seed;
  j["exact_index"] = c.exact_index;

  ordered_json l;
  l["dim"] = c.light.dim;
  l["epochs"] = c.light.epochs;
  l["learning_rate"] = c.light.learning_rate;
  l["reg"] = c.light.reg;
  l["seed"] = c.light.seed;
  j["light"] = l;

  j["control"] = funnel_json(c.control);
  j["treatment"] = funnel_json(c.treatment);
  j["uas_sample_rate"] = c.uas_sample_rate;
  j["bucket_rate"] = c.bucket_rate;
  j["eval_start"] = c.eval_start;

  ordered_json cad;
  cad["rankscore_refresh_hours"] = c.cadences.rankscore_refresh_hours;
  cad["graph_refresh_hours"] = c.cadences.graph_refresh_hours;
  cad["tic_hours"] = c.cadences.tic_hours;
  cad["toc_hours"] = c.cadences.toc_hours;
  j["cadences"] = cad;
  j["stale_sourcing"] = c.stale_sourcing;

  j["k_source"] = c.k_source;
  j["uas_window"] = c.uas_window;
  j["quality_time_scale_days"] = c.quality_time_scale_days;
  ordered_json d;
  d["lambda"] = c.decay.lambda;
  d["last_n"] = c.decay.last_n;
  j["decay"] = d;
  j["use_decay"] = c.use_decay;
  j["use_propagation"] = c.use_propagation;
  j["propagate_cap"] = c.propagate_cap;
  j["propagate_seed"] = c.propagate_seed;

  j["bootstrap_resamples"] = c.bootstrap_resamples;
  j["bootstrap_seed"] = c.bootstrap_seed;
  j["threads"] = c.threads;
  return j.dump(2);
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("pipeline config is not valid JSON");
  if (j.value("format_version", -1) != 1)
    throw FormatError("unsupported pipeline config format version");
  PipelineConfig c;

  if (j.contains("paths")) {
    const auto& p = j["paths"];
    auto get = [&](const char* key, std::string& dst) {
      if (p.contains(key)) dst = p[key].get<std::string>();
    };
    get("world", c.paths.world);
    get("requests", c.paths.requests);
    get("events", c.paths.events);
    get("graph_vertices", c.paths.graph_vertices);
    get("graph_edges", c.paths.graph_edges);
    get("embeddings", c.paths.embeddings);
    get("index", c.paths.index);
    get("sourced_rankscore", c.paths.sourced_rankscore);
    get("sourced_graph", c.paths.sourced_graph);
    get("uas", c.paths.uas);
    get("experiment_log", c.paths.experiment_log);
    get("report_json", c.paths.report_json);
    get("report_table", c.paths.report_table);
  }

  if (j.contains("world")) {
    const auto& w = j["world"];
    auto num = [&](const char* key, auto& dst) {
      if (w.contains(key)) dst = w[key].get<std::decay_t<decltype(dst)>>();
    };
    num("n_users", c.world.n_users);
    num("n_advertisers", c.world.n_advertisers);
    num("n_ads", c.world.n_ads);
    num("latent_dim", c.world.latent_dim);
    num("n_geos", c.world.n_geos);
    num("n_languages", c.world.n_languages);
    num("n_age_bands", c.world.n_age_bands);
    num("n_topics", c.world.n_topics);
    num("bid_mean", c.world.bid_mean);
    num("bid_sigma", c.world.bid_sigma);
    num("budget_mean", c.world.budget_mean);
    num("budget_sigma", c.world.budget_sigma);
    num("objective_count", c.world.objective_count);
    num("base_engagement_rate", c.world.base_engagement_rate);
    num("seed", c.world.seed);
  }

  auto top = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
  };
  top("n_requests", c.n_requests);
  top("time_span", c.time_span);
  top("zipf_exponent", c.zipf_exponent);
  top("request_seed", c.request_seed);

  if (j.contains("train")) {
    const auto& t = j["train"];
    auto num = [&](const char* key, auto& dst) {
      if (t.contains(key)) dst = t[key].get<std::decay_t<decltype(dst)>>();
    };
    num("dim", c.train.dim);
    num("reg", c.train.reg);
    num("negatives_batch", c.train.negatives_batch);
    num("negatives_uniform", c.train.negatives_uniform);
    num("epochs", c.train.epochs);
    num("learning_rate", c.train.learning_rate);
    num("batch_size", c.train.batch_size);
    num("loss_delta_stop", c.train.loss_delta_stop);
    num("seed", c.train.seed);
    if (t.contains("optimizer")) {
      std::string o = t["optimizer"].get<std::string>();
      if (o == "adagrad")
        c.train.optimizer = TrainParams::Optimizer::adagrad;
      else if (o == "sgd")
        c.train.optimizer = TrainParams::Optimizer::sgd;
      else
        throw ConfigError("optimizer", "must be 'adagrad' or 'sgd'");
    }
  }

  if (j.contains("hnsw")) {
    const auto& h = j["hnsw"];
    if (h.contains("max_links")) c.hnsw.max_links = h["max_links"].get<std::uint32_t>();
    if (h.contains("ef_construction"))
      c.hnsw.ef_construction = h["ef_construction"].get<std::uint32_t>();
    if (h.contains("ef_search")) c.hnsw.ef_search = h["ef_search"].get<std::uint32_t>();
  }
  top("index_seed", c.index_seed);
  top("exact_index", c.exact_index);

  if (j.contains("light")) {
    const auto& l = j["light"];
    if (l.contains("dim")) c.light.dim = l["dim"].get<std::uint32_t>();
    if (l.contains("epochs")) c.light.epochs = l["epochs"].get<std::uint64_t>();
    if (l.contains("learning_rate"))
      c.light.learning_rate = l["learning_rate"].get<double>();
    if (l.contains("reg")) c.light.reg = l["reg"].get<double>();
    if (l.contains("seed")) c.light.seed = l["seed"].get<std::uint64_t>();
  }

  if (j.contains("control")) c.control = funnel_from_json(j["control"]);
  if (j.contains("treatment")) c.treatment = funnel_from_json(j["treatment"]);
  top("uas_sample_rate", c.uas_sample_rate);
  top("bucket_rate", c.bucket_rate);
  top("eval_start", c.eval_start);

  if (j.contains("cadences")) {
    const auto& cad = j["cadences"];
    auto num = [&](const char* key, double& dst) {
      if (cad.contains(key)) dst = cad[key].get<double>();
    };
    num("rankscore_refresh_hours", c.cadences.rankscore_refresh_hours);
    num("graph_refresh_hours", c.cadences.graph_refresh_hours);
    num("tic_hours", c.cadences.tic_hours);
    num("toc_hours", c.cadences.toc_hours);
  }
  top("stale_sourcing", c.stale_sourcing);

  top("k_source", c.k_source);
  top("uas_window", c.uas_window);
  top("quality_time_scale_days", c.quality_time_scale_days);
  if (j.contains("decay")) {
    const auto& d = j["decay"];
    if (d.contains("lambda")) c.decay.lambda = d["lambda"].get<double>();
    if (d.contains("last_n")) c.decay.last_n = d["last_n"].get<std::uint64_t>();
  }
  top("use_decay", c.use_decay);
  top("use_propagation", c.use_propagation);
  top("propagate_cap", c.propagate_cap);
  top("propagate_seed", c.propagate_seed);
  top("bootstrap_resamples", c.bootstrap_resamples);
  top("bootstrap_seed", c.bootstrap_seed);
  top("threads", c.threads);

  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return pipeline_config_from_json(text);
}

void save_pipeline_config(const PipelineConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out << pipeline_config_to_json(config) << "\n";
}

namespace {

// Impressions become event records with small fixed engagement offsets.
void append_events(EventLog& log, const World& world, const Request& req,
                   const std::vector<ImpressionRecord>& impressions) {
  for (const auto& imp : impressions) {
    EventRecord base;
    base.ts = req.ts;
    base.user_id = req.user_id;
    base.ad_id = imp.ad_id;
    base.advertiser_id = imp.advertiser_id;
    base.objective = imp.objective;
    base.event = EventType::impression;
    log.records.push_back(base);
    if (imp.engaged_pos) {
      EventRecord e = base;
      e.event = EventType::positive_engagement;
      e.ts = req.ts + 1;
      log.records.push_back(e);
    }
    if (imp.engaged_neg) {
      EventRecord e = base;
      e.event = EventType::negative_engagement;
      e.ts = req.ts + 2;
      log.records.push_back(e);
    }
    if (imp.converted) {
      EventRecord e = base;
      e.event = EventType::conversion;
      e.ts = req.ts + 3;
      log.records.push_back(e);
    }
  }
  (void)world;
}

void sort_events(EventLog& log) {
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const EventRecord& a, const EventRecord& b) {
                     return a.ts < b.ts;
                   });
}

}  // namespace

std::map<UserId, std::vector<UserId>> follow_graph(const World& world) {
  std::map<UserId, std::vector<UserId>> g;
  for (const auto& u : world.users) g[u.id] = u.followings;
  return g;
}

HistoryResult run_history_sim(World& world, const RequestLog& requests,
                              const FunnelConfig& config,
                              const LightRanker& ranker,
                              double uas_sample_rate) {
  HistoryResult out;
  ArmInputs inputs;
  inputs.ranker = &ranker;
  RequestLog one(1);
  for (const auto& req : requests) {
    ServeOutcome outcome = serve_request(world, req, config, inputs);
    append_events(out.events, world, req, outcome.impressions);
    one[0] = req;
    UasLog sampled = uas_log(world, one, uas_sample_rate, config);
    out.uas.insert(out.uas.end(), sampled.begin(), sampled.end());
  }
  sort_events(out.events);
  return out;
}

namespace {

// State shared by the cadence-driven sourcing refreshes.
struct SourcingState {
  HetGraph snapshot;
  EmbeddingModel model;
  AnnIndex index;
  SourcedAds rankscore;
  SourcedAds graph;
  std::map<std::string, const SourcedAds*> as_inputs() const {
    return {{"rankscore", &rankscore}, {"graph", &graph}};
  }
};

std::vector<AnnItem> ad_items(const EmbeddingModel& model) {
  std::vector<AnnItem> items;
  for (const auto& k : model.keys()) {
    if (k.type != VertexType::ad) continue;
    auto v = model.vector_of(k);
    items.push_back({k.id, {v.begin(), v.end()}});
  }
  std::sort(items.begin(), items.end(),
            [](const AnnItem& a, const AnnItem& b) { return a.id < b.id; });
  return items;
}

}  // namespace

std::map<UserId, std::vector<double>> build_user_query_vectors(
    const PipelineConfig& cfg, const EmbeddingModel& model,
    const EventLog& events, Timestamp now) {
  std::map<UserId, std::vector<double>> out;
  std::map<UserId, std::vector<TimedVector>> history;
  if (cfg.use_decay) {
    for (const auto& e : events.records) {
      if (e.event != EventType::positive_engagement || e.ts > now) continue;
      EntityKey ad{VertexType::ad, e.ad_id};
      if (!model.has_entity(ad)) continue;
      auto v = model.vector_of(ad);
      history[e.user_id].push_back({{v.begin(), v.end()}, e.ts});
    }
  }
  for (const auto& k : model.keys()) {
    if (k.type != VertexType::user) continue;
    auto base = model.vector_of(k);
    if (cfg.use_decay) {
      auto it = history.find(k.id);
      if (it != history.end()) {
        auto decayed = decay_user_embedding(it->second, now, cfg.decay);
        if (decayed) {
          out[k.id] = std::move(*decayed);
          continue;
        }
      }
    }
    out[k.id] = {base.begin(), base.end()};
  }
  return out;
}

namespace {

void refresh_graph_sourcing(const PipelineConfig& cfg, const World& state_world,
                            const EventLog& events, Timestamp now,
                            SourcingState& s) {
  auto items = ad_items(s.model);
  if (items.empty()) return;
  s.index = cfg.exact_index ? build_exact(items)
                            : build_hnsw(items, cfg.hnsw, cfg.index_seed);
  auto vectors = build_user_query_vectors(cfg, s.model, events, now);
  EligibilityFn eligible = [&state_world](UserId user, AdId ad) {
    const Ad& a = state_world.ad(ad);
    return a.remaining_budget > 0.0 &&
           targeting_matches(state_world.user(user), a);
  };
  s.graph = graph_candidates(vectors, s.index, cfg.k_source, eligible, now,
                             cfg.threads);
}

void refresh_rankscore_sourcing(const PipelineConfig& cfg, const UasLog& uas,
                                Timestamp now, SourcingState& s) {
  QualityScores q =
      quality_scores(uas, now, cfg.uas_window, cfg.quality_time_scale_days);
  s.rankscore = topk_rankscore_candidates(q, cfg.k_source);
}

void run_tic(const PipelineConfig& cfg, const EventLog& events, Timestamp now,
             SourcingState& s) {
  HetGraph curr = build_graph(events, 0, now).graph;
  EdgeDelta delta = delta_edges(s.snapshot, curr);
  s.model = tic_update(s.model, delta, cfg.train);
  s.snapshot = std::move(curr);
}

void run_toc(const PipelineConfig& cfg, const World& world,
             const EventLog& events, Timestamp now, SourcingState& s) {
  HetGraph curr = build_graph(events, 0, now).graph;
  EdgeDelta delta = delta_edges(s.snapshot, curr);
  std::vector<GraphEdge> merged = merge_edges(s.snapshot.edges, delta);
  s.model = toc_update(s.model, merged, cfg.train);
  s.snapshot = std::move(curr);
  if (cfg.use_propagation)
    s.model = propagate_embeddings(follow_graph(world), s.model,
                                   cfg.propagate_cap, cfg.propagate_seed);
}

}  // namespace

FullExperimentResult run_full_experiment(const PipelineConfig& cfg,
                                         const World& world,
                                         const RequestLog& requests) {
  cfg.validate();
  FullExperimentResult out;

  // History phase: light-only serving builds the event and UAS logs. The
  // ranker starts untrained and is fit halfway through the window, once
  // impression data exists.
  World history_world = world;
  LightRanker ranker = init_light_ranker(world, cfg.light);
  bool ranker_trained = false;
  Timestamp t_train_light = cfg.eval_start / 2;

  ArmInputs history_inputs;
  history_inputs.ranker = &ranker;
  FunnelConfig history_cfg = cfg.control;
  history_cfg.blend.strategies.clear();  // no sourcing before the pipelines exist

  RequestLog one(1);
  std::size_t i = 0;
  for (; i < requests.size() && requests[i].ts < cfg.eval_start; ++i) {
    const Request& req = requests[i];
    if (!ranker_trained && req.ts >= t_train_light) {
      ranker = train_light_ranker(out.events, world, cfg.light);
      ranker_trained = true;
    }
    ServeOutcome outcome =
        serve_request(history_world, req, history_cfg, history_inputs);
    append_events(out.events, world, req, outcome.impressions);
    one[0] = req;
    UasLog sampled =
        uas_log(history_world, one, cfg.uas_sample_rate, history_cfg);
    out.uas.insert(out.uas.end(), sampled.begin(), sampled.end());
  }
  if (!ranker_trained) {
    ranker = train_light_ranker(out.events, world, cfg.light);
    ranker_trained = true;
  }
  sort_events(out.events);

  // Bootstrap the sourcing state at the evaluation boundary.
  SourcingState state;
  state.snapshot = build_graph(out.events, 0, cfg.eval_start).graph;
  state.model = train(state.snapshot, cfg.train);
  if (cfg.use_propagation)
    state.model = propagate_embeddings(follow_graph(world), state.model,
                                       cfg.propagate_cap, cfg.propagate_seed);

  World control_world = history_world;
  World treatment_world = history_world;
  refresh_graph_sourcing(cfg, control_world, out.events, cfg.eval_start, state);
  refresh_rankscore_sourcing(cfg, out.uas, cfg.eval_start, state);

  ExperimentLog& log = out.log;
  log.control.name = "control";
  log.treatment.name = "treatment";
  log.bucket_rate = cfg.bucket_rate;
  log.objective_count = static_cast<std::uint32_t>(world.config.objective_count);
  log.n_advertisers = world.config.n_advertisers;
  log.n_campaigns = world.campaigns.size();
  log.weights = cfg.control.weights;

  // Cadence schedule on the simulated clock, anchored at t = 0; the
  // boundary build above covers everything due at eval_start.
  auto next_after = [](double hours, Timestamp t) {
    Timestamp period = static_cast<Timestamp>(hours * 3600.0);
    if (period < 1) period = 1;
    return (t / period + 1) * period;
  };
  Timestamp next_rankscore =
      next_after(cfg.cadences.rankscore_refresh_hours, cfg.eval_start);
  Timestamp next_graph = next_after(cfg.cadences.graph_refresh_hours, cfg.eval_start);
  Timestamp next_tic = next_after(cfg.cadences.tic_hours, cfg.eval_start);
  Timestamp next_toc = next_after(cfg.cadences.toc_hours, cfg.eval_start);

  ArmInputs control_inputs{&ranker, state.as_inputs()};
  ArmInputs treatment_inputs{&ranker, state.as_inputs()};

  for (; i < requests.size(); ++i) {
    const Request& req = requests[i];
    if (!cfg.stale_sourcing) {
      // Refreshes due before this request, in clock order. A toc at the
      // same instant supersedes a tic.
      while (true) {
        Timestamp due = std::min(std::min(next_rankscore, next_graph),
                                 std::min(next_tic, next_toc));
        if (due > req.ts) break;
        if (next_toc == due) {
          run_toc(cfg, world, out.events, due, state);
          next_toc = next_after(cfg.cadences.toc_hours, due);
          if (next_tic == due) next_tic = next_after(cfg.cadences.tic_hours, due);
        } else if (next_tic == due) {
          run_tic(cfg, out.events, due, state);
          next_tic = next_after(cfg.cadences.tic_hours, due);
        }
        if (next_graph == due) {
          refresh_graph_sourcing(cfg, control_world, out.events, due, state);
          next_graph = next_after(cfg.cadences.graph_refresh_hours, due);
        }
        if (next_rankscore == due) {
          refresh_rankscore_sourcing(cfg, out.uas, due, state);
          next_rankscore = next_after(cfg.cadences.rankscore_refresh_hours, due);
        }
      }
      control_inputs.sources = state.as_inputs();
      treatment_inputs.sources = state.as_inputs();
    }

    bool evaluated = in_metric_bucket(world, req.request_id, cfg.bucket_rate);
    ++log.n_requests;
    log.n_eval += evaluated;
    ArmRequestRecord crec =
        run_arm_request(control_world, req, cfg.control, control_inputs, evaluated);
    ArmRequestRecord trec = run_arm_request(treatment_world, req, cfg.treatment,
                                            treatment_inputs, evaluated);
    // The control universe is the production stand-in: its events and UAS
    // scores keep feeding the pipelines.
    append_events(out.events, world, req, crec.impressions);
    one[0] = req;
    UasLog sampled = uas_log(control_world, one, cfg.uas_sample_rate, cfg.control);
    out.uas.insert(out.uas.end(), sampled.begin(), sampled.end());

    log.control.requests.push_back(std::move(crec));
    log.treatment.requests.push_back(std::move(trec));
  }
  sort_events(out.events);

  out.report = compute_metrics(log, {cfg.bootstrap_resamples, cfg.bootstrap_seed});
  out.graph = std::move(state.snapshot);
  out.embeddings = std::move(state.model);
  out.index = std::move(state.index);
  out.sourced_rankscore = std::move(state.rankscore);
  out.sourced_graph = std::move(state.graph);
  return out;
}

}  // namespace twerc
