#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twerc/ann.hpp"
#include "twerc/embed.hpp"
#include "twerc/errors.hpp"
#include "twerc/funnel.hpp"
#include "twerc/graph.hpp"
#include "twerc/metrics.hpp"
#include "twerc/pipeline.hpp"
#include "twerc/report.hpp"
#include "twerc/sourcing.hpp"
#include "twerc/world.hpp"

namespace {

using namespace twerc;
using ordered_json = nlohmann::ordered_json;

PipelineConfig config_or_default(const std::string& path) {
  if (path.empty()) return PipelineConfig{};
  return load_pipeline_config(path);
}

std::vector<AnnItem> ad_items_of(const EmbeddingModel& model) {
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

EligibilityFn world_eligibility(const World& world) {
  return [&world](UserId user, AdId ad) {
    const Ad& a = world.ad(ad);
    return a.remaining_budget > 0.0 && targeting_matches(world.user(user), a);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TwERC: ensembled ad candidate generation pipelines"};
  app.require_subcommand(1);
  std::function<void()> action;

  std::string config_path, world_path, requests_path, events_path;
  std::string model_path, init_path, index_path, out_path;
  std::string vertices_path, edges_path;
  std::string prev_vertices, prev_edges, curr_vertices, curr_edges;
  std::string uas_path, light_path, blend_path, log_path, report_path;
  std::string train_events_path;
  std::vector<std::string> source_specs;
  std::int64_t t_start = 0, t_end = 0, t0 = 0;
  std::uint64_t seed_override = 0;
  bool has_seed = false, exact = false, use_decay = false;
  double rate = 0.0;
  std::uint64_t resamples = 10000, bseed = 123, cap = 100, pseed = 17;
  std::uint64_t threads = 0;
  std::string out_world, out_requests, out_events, out_uas;

  // datagen
  {
    auto* sc = app.add_subcommand("datagen", "generate the synthetic world and request log");
    sc->add_option("--config", config_path, "pipeline config JSON");
    sc->add_option("--seed", seed_override, "world seed override")
        ->each([&](const std::string&) { has_seed = true; });
    sc->add_option("--out-world", out_world, "world output path");
    sc->add_option("--out-requests", out_requests, "request log output path");
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        if (has_seed) cfg.world.seed = seed_override;
        World w = gen_world(cfg.world);
        save_world(w, out_world.empty() ? cfg.paths.world : out_world);
        RequestLog reqs = gen_requests(w, cfg.n_requests, cfg.time_span,
                                       {cfg.zipf_exponent, cfg.request_seed});
        save_request_log(reqs, out_requests.empty() ? cfg.paths.requests : out_requests);
        std::cout << "world: " << w.users.size() << " users, " << w.ads.size()
                  << " ads; requests: " << reqs.size() << "\n";
      };
    });
  }

  // build-graph
  {
    auto* sc = app.add_subcommand("build-graph", "build the engagement graph from an event log");
    sc->add_option("--events", events_path, "event log JSONL")->required();
    sc->add_option("--t-start", t_start, "window start (s)")->required();
    sc->add_option("--t-end", t_end, "window end (s)")->required();
    sc->add_option("--out-vertices", vertices_path, "vertices output")->required();
    sc->add_option("--out-edges", edges_path, "edges output")->required();
    sc->callback([&] {
      action = [&] {
        EventLog events = load_event_log(events_path);
        GraphBuild built = build_graph(events, t_start, t_end);
        save_graph(built.graph, vertices_path, edges_path);
        std::cout << "vertices: " << built.graph.vertices.size()
                  << ", edges: " << built.graph.edges.size()
                  << ", dropped malformed: " << built.report.malformed
                  << ", out of window: " << built.report.out_of_window << "\n";
      };
    });
  }

  // train
  {
    auto* sc = app.add_subcommand("train", "train entity embeddings on a graph snapshot");
    sc->add_option("--config", config_path, "pipeline config JSON");
    sc->add_option("--vertices", vertices_path)->required();
    sc->add_option("--edges", edges_path)->required();
    sc->add_option("--init", init_path, "warm-start embedding table");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        HetGraph g = load_graph(vertices_path, edges_path);
        EmbeddingModel init;
        bool has_init = !init_path.empty();
        if (has_init) init = load_embeddings(init_path);
        EmbeddingModel m = train(g, cfg.train, has_init ? &init : nullptr);
        save_embeddings(m, out_path);
        std::cout << "entities: " << m.entity_count() << ", dim: " << m.dim() << "\n";
      };
    });
  }

  // tic
  {
    auto* sc = app.add_subcommand("tic", "fit new vertices on the delta edges, old vertices frozen");
    sc->add_option("--config", config_path);
    sc->add_option("--model", model_path)->required();
    sc->add_option("--prev-vertices", prev_vertices)->required();
    sc->add_option("--prev-edges", prev_edges)->required();
    sc->add_option("--curr-vertices", curr_vertices)->required();
    sc->add_option("--curr-edges", curr_edges)->required();
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        EmbeddingModel m = load_embeddings(model_path);
        HetGraph prev = load_graph(prev_vertices, prev_edges);
        HetGraph curr = load_graph(curr_vertices, curr_edges);
        EdgeDelta delta = delta_edges(prev, curr);
        EmbeddingModel out = tic_update(m, delta, cfg.train);
        save_embeddings(out, out_path);
        std::cout << "new vertices: " << delta.new_vertices.size()
                  << ", delta edges: " << delta.delta_edges.size() << "\n";
      };
    });
  }

  // toc
  {
    auto* sc = app.add_subcommand("toc", "full warm-started retrain on the merged edge list");
    sc->add_option("--config", config_path);
    sc->add_option("--model", model_path)->required();
    sc->add_option("--prev-vertices", prev_vertices)->required();
    sc->add_option("--prev-edges", prev_edges)->required();
    sc->add_option("--curr-vertices", curr_vertices)->required();
    sc->add_option("--curr-edges", curr_edges)->required();
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        EmbeddingModel m = load_embeddings(model_path);
        HetGraph prev = load_graph(prev_vertices, prev_edges);
        HetGraph curr = load_graph(curr_vertices, curr_edges);
        std::vector<GraphEdge> merged =
            merge_edges(prev.edges, delta_edges(prev, curr));
        EmbeddingModel out = toc_update(m, merged, cfg.train);
        save_embeddings(out, out_path);
        std::cout << "merged edges: " << merged.size() << "\n";
      };
    });
  }

  // index
  {
    auto* sc = app.add_subcommand("index", "build the ad ANN index from an embedding table");
    sc->add_option("--config", config_path);
    sc->add_option("--model", model_path)->required();
    sc->add_option("--out", out_path)->required();
    sc->add_flag("--exact", exact, "build the exhaustive index instead of HNSW");
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        EmbeddingModel m = load_embeddings(model_path);
        auto items = ad_items_of(m);
        AnnIndex idx = exact || cfg.exact_index
                           ? build_exact(items)
                           : build_hnsw(items, cfg.hnsw, cfg.index_seed);
        idx.save(out_path);
        std::cout << "indexed " << idx.size() << " ads, dim " << idx.dim() << "\n";
      };
    });
  }

  // source-rankscore
  {
    auto* sc = app.add_subcommand("source-rankscore", "aggregate UAS logs into top-K quality-score candidates");
    sc->add_option("--config", config_path);
    sc->add_option("--uas", uas_path)->required();
    sc->add_option("--t0", t0, "aggregation time (s)")->required();
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        UasLog log = load_uas_log(uas_path);
        QualityScores q = quality_scores(log, t0, cfg.uas_window,
                                         cfg.quality_time_scale_days);
        SourcedAds ads = topk_rankscore_candidates(q, cfg.k_source);
        save_sourced_ads(ads, out_path);
        std::cout << "covered users: " << ads.by_user.size() << "\n";
      };
    });
  }

  // source-graph
  {
    auto* sc = app.add_subcommand("source-graph", "ANN-retrieve per-user ad candidates from embeddings");
    sc->add_option("--config", config_path);
    sc->add_option("--model", model_path)->required();
    sc->add_option("--index", index_path)->required();
    sc->add_option("--world", world_path)->required();
    sc->add_option("--t0", t0, "generation time (s)");
    sc->add_flag("--decay", use_decay, "use time-decayed user vectors");
    sc->add_option("--events", events_path, "event log for decay history");
    sc->add_option("--threads", threads, "query threads (1 = deterministic default)");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        if (use_decay) cfg.use_decay = true;
        if (threads > 0) cfg.threads = static_cast<unsigned>(threads);
        EmbeddingModel m = load_embeddings(model_path);
        AnnIndex idx = AnnIndex::load(index_path);
        World w = load_world(world_path);
        EventLog events;
        if (!events_path.empty()) events = load_event_log(events_path);
        auto vectors = build_user_query_vectors(cfg, m, events, t0);
        SourcedAds ads = graph_candidates(vectors, idx, cfg.k_source,
                                          world_eligibility(w), t0, cfg.threads);
        save_sourced_ads(ads, out_path);
        std::cout << "covered users: " << ads.by_user.size() << "\n";
      };
    });
  }

  // propagate
  {
    auto* sc = app.add_subcommand("propagate", "induce embeddings for missing users from their followings");
    sc->add_option("--model", model_path)->required();
    sc->add_option("--world", world_path)->required();
    sc->add_option("--cap", cap, "following sample cap");
    sc->add_option("--seed", pseed, "sampling seed");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        EmbeddingModel m = load_embeddings(model_path);
        World w = load_world(world_path);
        EmbeddingModel out = propagate_embeddings(follow_graph(w), m, cap, pseed);
        save_embeddings(out, out_path);
        std::cout << "entities: " << m.entity_count() << " -> "
                  << out.entity_count() << "\n";
      };
    });
  }

  // blend
  {
    auto* sc = app.add_subcommand("blend", "tail-replace light-ranker lists with sourced candidates");
    sc->add_option("--blend-config", blend_path, "blend config JSON")->required();
    sc->add_option("--light", light_path, "light top-K JSONL (request_id, user_id, ads)")->required();
    sc->add_option("--source", source_specs, "strategy=sourced_ads.jsonl (repeatable)");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        BlendConfig bc = load_blend_config(blend_path);
        std::map<std::string, SourcedAds> sources;
        for (const auto& spec : source_specs) {
          auto eq = spec.find('=');
          if (eq == std::string::npos)
            throw ConfigError("source", "expected strategy=path");
          sources[spec.substr(0, eq)] = load_sourced_ads(spec.substr(eq + 1));
        }
        std::ifstream in(light_path, std::ios::binary);
        if (!in) throw MissingInputError(light_path);
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw MissingInputError(out_path);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          ordered_json j = ordered_json::parse(line, nullptr, false);
          if (j.is_discarded())
            throw FormatError("bad light record: " + line);
          UserId user = j.at("user_id").get<UserId>();
          std::vector<AdId> light = j.at("ads").get<std::vector<AdId>>();
          std::map<std::string, std::vector<AdId>> per_user;
          for (const auto& [name, ads] : sources) {
            auto it = ads.by_user.find(user);
            if (it == ads.by_user.end()) continue;
            auto& list = per_user[name];
            for (const auto& a : it->second) list.push_back(a.ad_id);
          }
          CandidateSet cs = blend(light, per_user, bc);
          ordered_json o;
          o["request_id"] = j.at("request_id");
          o["user_id"] = user;
          o["ads"] = cs.ad_ids;
          out << o.dump() << "\n";
        }
      };
    });
  }

  // simulate
  {
    auto* sc = app.add_subcommand("simulate", "run the serving funnel over a request log");
    sc->add_option("--config", config_path);
    sc->add_option("--world", world_path)->required();
    sc->add_option("--requests", requests_path)->required();
    sc->add_option("--train-events", train_events_path,
                   "pre-train the light ranker on this event log");
    sc->add_option("--out-events", out_events)->required();
    sc->add_option("--out-uas", out_uas, "also write UAS full-scoring records");
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        World w = load_world(world_path);
        RequestLog reqs = load_request_log(requests_path);
        LightRanker ranker = init_light_ranker(w, cfg.light);
        if (!train_events_path.empty())
          ranker = train_light_ranker(load_event_log(train_events_path), w, cfg.light);
        FunnelConfig fc = cfg.control;
        fc.blend.strategies.clear();
        HistoryResult r = run_history_sim(w, reqs, fc, ranker, cfg.uas_sample_rate);
        save_event_log(r.events, out_events);
        if (!out_uas.empty()) save_uas_log(r.uas, out_uas);
        std::cout << "events: " << r.events.records.size()
                  << ", uas records: " << r.uas.size() << "\n";
      };
    });
  }

  // uas
  {
    auto* sc = app.add_subcommand("uas", "counterfactual full scoring of sampled requests");
    sc->add_option("--config", config_path);
    sc->add_option("--world", world_path)->required();
    sc->add_option("--requests", requests_path)->required();
    sc->add_option("--rate", rate, "request sample rate");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = config_or_default(config_path);
        World w = load_world(world_path);
        RequestLog reqs = load_request_log(requests_path);
        double r = rate > 0.0 ? rate : cfg.uas_sample_rate;
        UasLog log = uas_log(w, reqs, r, cfg.control);
        save_uas_log(log, out_path);
        std::cout << "uas records: " << log.size() << "\n";
      };
    });
  }

  // experiment
  {
    auto* sc = app.add_subcommand("experiment", "chained history + sourcing + twin-arm evaluation");
    sc->add_option("--config", config_path)->required();
    sc->callback([&] {
      action = [&] {
        PipelineConfig cfg = load_pipeline_config(config_path);
        World w = load_world(cfg.paths.world);
        RequestLog reqs = load_request_log(cfg.paths.requests);
        FullExperimentResult r = run_full_experiment(cfg, w, reqs);
        save_event_log(r.events, cfg.paths.events);
        save_uas_log(r.uas, cfg.paths.uas);
        save_graph(r.graph, cfg.paths.graph_vertices, cfg.paths.graph_edges);
        save_embeddings(r.embeddings, cfg.paths.embeddings);
        if (r.index.size() > 0) r.index.save(cfg.paths.index);
        save_sourced_ads(r.sourced_rankscore, cfg.paths.sourced_rankscore);
        save_sourced_ads(r.sourced_graph, cfg.paths.sourced_graph);
        save_experiment_log(r.log, cfg.paths.experiment_log);
        save_report(r.report, cfg.paths.report_json);
        std::string table = render_report_table(r.report);
        std::ofstream tout(cfg.paths.report_table, std::ios::binary);
        if (!tout) throw MissingInputError(cfg.paths.report_table);
        tout << table;
        std::cout << table;
      };
    });
  }

  // metrics
  {
    auto* sc = app.add_subcommand("metrics", "compute the metrics report from an experiment log");
    sc->add_option("--log", log_path)->required();
    sc->add_option("--resamples", resamples, "bootstrap resamples");
    sc->add_option("--seed", bseed, "bootstrap seed");
    sc->add_option("--out", out_path)->required();
    sc->callback([&] {
      action = [&] {
        ExperimentLog log = load_experiment_log(log_path);
        MetricsReport rep = compute_metrics(log, {resamples, bseed});
        save_report(rep, out_path);
        std::cout << render_report_table(rep);
      };
    });
  }

  // report
  {
    auto* sc = app.add_subcommand("report", "render a metrics report as a text table");
    sc->add_option("--report", report_path)->required();
    sc->add_option("--out", out_path, "also write the table to a file");
    sc->callback([&] {
      action = [&] {
        MetricsReport rep = load_report(report_path);
        std::string table = render_report_table(rep);
        if (!out_path.empty()) {
          std::ofstream out(out_path, std::ios::binary);
          if (!out) throw MissingInputError(out_path);
          out << table;
        }
        std::cout << table;
      };
    });
  }

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
