#include "twerc/embed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "twerc/binio.hpp"
#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

namespace twerc {

std::size_t EntityKeyHash::operator()(const EntityKey& k) const {
  return static_cast<std::size_t>(
      hash_key(static_cast<std::uint64_t>(k.type), k.id));
}

void TrainParams::validate() const {
  if (dim < 2) throw ConfigError("dim", "must be >= 2");
  if (reg < 0.0) throw ConfigError("reg", "must be >= 0");
  if (negatives_batch < 1) throw ConfigError("negatives_batch", "must be >= 1");
  if (negatives_uniform < 1)
    throw ConfigError("negatives_uniform", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
}

void DecayParams::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("lambda", "must be > 0");
  if (last_n < 1) throw ConfigError("last_n", "must be >= 1");
}

std::span<const double> EmbeddingModel::vector_of(const EntityKey& k) const {
  auto it = index_.find(k);
  if (it == index_.end())
    throw LookupError("unknown entity (" +
                      std::string(vertex_type_name(k.type)) + ", " +
                      std::to_string(k.id) + ")");
  return {data_.data() + it->second * dim_, dim_};
}

std::span<double> EmbeddingModel::mutable_vector(const EntityKey& k) {
  auto it = index_.find(k);
  if (it == index_.end())
    throw LookupError("unknown entity (" +
                      std::string(vertex_type_name(k.type)) + ", " +
                      std::to_string(k.id) + ")");
  return {data_.data() + it->second * dim_, dim_};
}

void EmbeddingModel::add_entity(const EntityKey& k, std::span<const double> v) {
  if (v.size() != dim_)
    throw ArgumentError("entity vector dim mismatch");
  if (index_.count(k)) throw ArgumentError("entity already present");
  index_[k] = keys_.size();
  keys_.push_back(k);
  data_.insert(data_.end(), v.begin(), v.end());
}

std::span<const double> EmbeddingModel::relation_vector(Relation r) const {
  auto it = relations_.find(r);
  if (it == relations_.end())
    throw LookupError(std::string("unknown relation ") + relation_name(r));
  return it->second;
}

std::span<double> EmbeddingModel::mutable_relation(Relation r) {
  auto it = relations_.find(r);
  if (it == relations_.end())
    throw LookupError(std::string("unknown relation ") + relation_name(r));
  return it->second;
}

void EmbeddingModel::set_relation(Relation r, std::span<const double> v) {
  if (v.size() != dim_) throw ArgumentError("relation vector dim mismatch");
  relations_[r] = std::vector<double>(v.begin(), v.end());
}

double score_edge(const EmbeddingModel& model, const EntityKey& head,
                  Relation rel, const EntityKey& tail) {
  auto h = model.vector_of(head);
  auto r = model.relation_vector(rel);
  auto t = model.vector_of(tail);
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += (h[i] + r[i]) * t[i];
  return s;
}

std::vector<double> random_entity_vector(Rng& rng, std::uint32_t dim) {
  double s = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-s, s);
  return v;
}

LossGrad softmax_translation_loss(const EmbeddingModel& model,
                                  std::span<const TrainSample> batch,
                                  double reg) {
  LossGrad out;
  std::uint32_t dim = model.dim();
  std::set<EntityKey> touched_entities;
  std::set<Relation> touched_relations;

  std::vector<double> hr(dim), logits, probs;
  for (const auto& s : batch) {
    auto h = model.vector_of(s.head);
    auto r = model.relation_vector(s.rel);
    auto t = model.vector_of(s.tail);
    touched_entities.insert(s.head);
    touched_entities.insert(s.tail);
    touched_relations.insert(s.rel);
    for (std::uint32_t i = 0; i < dim; ++i) hr[i] = h[i] + r[i];

    logits.assign(1 + s.neg_tails.size(), 0.0);
    logits[0] = dot(hr, t);
    for (std::size_t k = 0; k < s.neg_tails.size(); ++k) {
      touched_entities.insert(s.neg_tails[k]);
      logits[k + 1] = dot(hr, model.vector_of(s.neg_tails[k]));
    }

    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    probs.assign(logits.size(), 0.0);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      probs[k] = std::exp(logits[k] - m);
      z += probs[k];
    }
    for (double& p : probs) p /= z;
    out.loss += -(logits[0] - m - std::log(z));

    auto grad_of = [&](const EntityKey& k) -> std::vector<double>& {
      auto [it, fresh] = out.entity_grad.try_emplace(k);
      if (fresh) it->second.assign(dim, 0.0);
      return it->second;
    };
    auto& gh = grad_of(s.head);
    auto [rit, rfresh] = out.relation_grad.try_emplace(s.rel);
    if (rfresh) rit->second.assign(dim, 0.0);
    auto& gr = rit->second;

    // d loss / d logit_k = p_k - [k == 0]; logit_k = (h + r) . t_k
    for (std::size_t k = 0; k < logits.size(); ++k) {
      double coef = probs[k] - (k == 0 ? 1.0 : 0.0);
      std::span<const double> tk =
          k == 0 ? t : model.vector_of(s.neg_tails[k - 1]);
      auto& gt = grad_of(k == 0 ? s.tail : s.neg_tails[k - 1]);
      for (std::uint32_t i = 0; i < dim; ++i) {
        gh[i] += coef * tk[i];
        gr[i] += coef * tk[i];
        gt[i] += coef * hr[i];
      }
    }
  }

  if (reg > 0.0) {
    for (const auto& k : touched_entities) {
      auto v = model.vector_of(k);
      auto& g = out.entity_grad[k];
      if (g.empty()) g.assign(dim, 0.0);
      for (std::uint32_t i = 0; i < dim; ++i) {
        out.loss += reg * v[i] * v[i];
        g[i] += 2.0 * reg * v[i];
      }
    }
    for (Relation rel : touched_relations) {
      auto v = model.relation_vector(rel);
      auto& g = out.relation_grad[rel];
      if (g.empty()) g.assign(dim, 0.0);
      for (std::uint32_t i = 0; i < dim; ++i) {
        out.loss += reg * v[i] * v[i];
        g[i] += 2.0 * reg * v[i];
      }
    }
  }
  return out;
}

namespace {

constexpr std::array<Relation, 3> kAllRelations = {
    Relation::engaged_pos, Relation::engaged_neg, Relation::authored_by};

EntityKey key_of(const Vertex& v) { return {v.type, v.id}; }

// Cumulative edge weights; sampling probability proportional to weight.
struct WeightedEdgeSampler {
  std::vector<double> cum;
  explicit WeightedEdgeSampler(const std::vector<GraphEdge>& edges) {
    cum.reserve(edges.size());
    double acc = 0.0;
    for (const auto& e : edges) {
      acc += static_cast<double>(e.weight);
      cum.push_back(acc);
    }
  }
  std::size_t draw(Rng& rng) const {
    double x = rng.uniform() * cum.back();
    return std::lower_bound(cum.begin(), cum.end(), x) - cum.begin();
  }
};

struct TypeUniverse {
  std::array<std::vector<EntityKey>, 3> by_type;
  explicit TypeUniverse(const EmbeddingModel& model) {
    for (const auto& k : model.keys())
      by_type[static_cast<std::size_t>(k.type)].push_back(k);
    for (auto& v : by_type) std::sort(v.begin(), v.end());
  }
  const EntityKey& draw(VertexType t, Rng& rng) const {
    const auto& pool = by_type[static_cast<std::size_t>(t)];
    return pool[rng.uniform_index(pool.size())];
  }
};

struct AdagradState {
  std::map<EntityKey, std::vector<double>> entity;
  std::map<Relation, std::vector<double>> relation;
};

void apply_update(std::span<double> v, const std::vector<double>& g,
                  std::vector<double>& acc, const TrainParams& params) {
  if (params.optimizer == TrainParams::Optimizer::adagrad) {
    if (acc.empty()) acc.assign(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc[i] += g[i] * g[i];
      v[i] -= params.learning_rate * g[i] / std::sqrt(acc[i] + 1e-10);
    }
  } else {
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] -= params.learning_rate * g[i];
  }
}

void train_in_place(EmbeddingModel& model, const std::vector<GraphEdge>& edges,
                    const TrainParams& params, Rng& rng, bool train_relations) {
  WeightedEdgeSampler sampler(edges);
  TypeUniverse universe(model);
  AdagradState state;
  double prev_loss = std::numeric_limits<double>::infinity();

  std::vector<TrainSample> batch;
  for (std::uint64_t epoch = 0; epoch < params.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::uint64_t remaining = edges.size();
    while (remaining > 0) {
      std::uint64_t take = std::min<std::uint64_t>(params.batch_size, remaining);
      remaining -= take;
      batch.clear();
      for (std::uint64_t i = 0; i < take; ++i) {
        const GraphEdge& e = edges[sampler.draw(rng)];
        TrainSample s;
        s.head = key_of(e.head);
        s.rel = e.rel;
        s.tail = key_of(e.tail);
        batch.push_back(std::move(s));
      }
      // In-batch negatives are the other positives' tails; uniform
      // negatives resample from the tail's entity type.
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& s = batch[i];
        for (std::size_t j = 0;
             j < batch.size() && s.neg_tails.size() < params.negatives_batch;
             ++j) {
          if (j == i) continue;
          s.neg_tails.push_back(batch[j].tail);
        }
        for (std::uint64_t k = 0; k < params.negatives_uniform; ++k)
          s.neg_tails.push_back(universe.draw(s.tail.type, rng));
      }

      LossGrad lg = softmax_translation_loss(model, batch, params.reg);
      if (!std::isfinite(lg.loss))
        throw TrainingError("non-finite loss at toc_epoch " +
                            std::to_string(model.toc_epoch) + ", epoch " +
                            std::to_string(epoch));
      epoch_loss += lg.loss;

      for (const auto& [k, g] : lg.entity_grad) {
        if (model.frozen.count(k)) continue;
        apply_update(model.mutable_vector(k), g, state.entity[k], params);
      }
      if (train_relations) {
        for (const auto& [r, g] : lg.relation_grad)
          apply_update(model.mutable_relation(r), g, state.relation[r], params);
      }
    }
    if (params.loss_delta_stop > 0.0 && std::isfinite(prev_loss)) {
      double delta = std::abs(prev_loss - epoch_loss);
      if (delta <= params.loss_delta_stop * std::abs(prev_loss)) break;
    }
    prev_loss = epoch_loss;
  }
}

// Warm start from `init` (when given) and randomly initialize whatever the
// vertex list adds, in ascending key order.
EmbeddingModel assemble(const std::vector<Vertex>& vertices,
                        const TrainParams& params, const EmbeddingModel* init,
                        Rng& rng) {
  EmbeddingModel model(static_cast<std::uint32_t>(params.dim));
  if (init) {
    if (init->dim() != params.dim)
      throw ArgumentError("init model dim differs from params.dim");
    model = *init;
  }
  std::vector<EntityKey> fresh;
  for (const auto& v : vertices) {
    EntityKey k = key_of(v);
    if (!model.has_entity(k)) fresh.push_back(k);
  }
  std::sort(fresh.begin(), fresh.end());
  for (const auto& k : fresh)
    model.add_entity(k, random_entity_vector(rng, model.dim()));
  for (Relation r : kAllRelations)
    if (!model.has_relation(r))
      model.set_relation(r, random_entity_vector(rng, model.dim()));
  return model;
}

std::vector<Vertex> endpoint_vertices(const std::vector<GraphEdge>& edges) {
  std::vector<Vertex> out;
  for (const auto& e : edges) {
    out.push_back(e.head);
    out.push_back(e.tail);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

EmbeddingModel train(const HetGraph& graph, const TrainParams& params,
                     const EmbeddingModel* init) {
  params.validate();
  if (params.epochs == 0 && init) return *init;
  if (graph.edges.empty())
    throw TrainingError("graph has no edges to train on");
  Rng rng(params.seed);
  EmbeddingModel model = assemble(graph.vertices, params, init, rng);
  train_in_place(model, graph.edges, params, rng, /*train_relations=*/true);
  return model;
}

EmbeddingModel tic_update(const EmbeddingModel& model, const EdgeDelta& delta,
                          const TrainParams& params) {
  params.validate();
  for (const auto& e : delta.delta_edges)
    if (!model.has_relation(e.rel))
      throw LookupError(std::string("delta edge uses unknown relation ") +
                        relation_name(e.rel));

  EmbeddingModel out = model;
  out.frozen.clear();
  for (const auto& k : model.keys()) out.frozen.insert(k);

  if (!delta.new_vertices.empty() || !delta.delta_edges.empty()) {
    Rng rng(params.seed);
    std::vector<Vertex> vertices = endpoint_vertices(delta.delta_edges);
    for (const auto& v : delta.new_vertices) vertices.push_back(v);
    std::sort(vertices.begin(), vertices.end());
    vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
    out = assemble(vertices, params, &out, rng);
    if (!delta.delta_edges.empty() && params.epochs > 0)
      train_in_place(out, delta.delta_edges, params, rng,
                     /*train_relations=*/false);
  }
  out.tic_step = model.tic_step + 1;
  out.toc_epoch = model.toc_epoch;
  return out;
}

EmbeddingModel toc_update(const EmbeddingModel& model,
                          const std::vector<GraphEdge>& merged_edges,
                          const TrainParams& params) {
  params.validate();
  EmbeddingModel warm = model;
  warm.frozen.clear();
  EmbeddingModel out;
  if (params.epochs == 0 || merged_edges.empty()) {
    out = warm;
  } else {
    Rng rng(params.seed);
    out = assemble(endpoint_vertices(merged_edges), params, &warm, rng);
    train_in_place(out, merged_edges, params, rng, /*train_relations=*/true);
  }
  out.toc_epoch = model.toc_epoch + 1;
  out.tic_step = 0;
  return out;
}

double eval_loss(const EmbeddingModel& model,
                 const std::vector<GraphEdge>& edges,
                 const TrainParams& params, std::uint64_t seed) {
  if (edges.empty()) throw ArgumentError("eval_loss: empty edge list");
  Rng rng(seed);
  TypeUniverse universe(model);
  double total = 0.0, wsum = 0.0;
  std::vector<TrainSample> batch;
  // Samples are built the way the trainer builds them (in-batch plus
  // uniform negatives) so models are compared on the objective they fit.
  for (std::size_t start = 0; start < edges.size();
       start += params.batch_size) {
    std::size_t end = std::min(edges.size(), start + params.batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) {
      TrainSample s;
      s.head = key_of(edges[i].head);
      s.rel = edges[i].rel;
      s.tail = key_of(edges[i].tail);
      batch.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& s = batch[i];
      for (std::size_t j = 0;
           j < batch.size() && s.neg_tails.size() < params.negatives_batch; ++j) {
        if (j == i) continue;
        s.neg_tails.push_back(batch[j].tail);
      }
      for (std::uint64_t k = 0; k < params.negatives_uniform; ++k)
        s.neg_tails.push_back(universe.draw(s.tail.type, rng));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      double w = static_cast<double>(edges[start + i].weight);
      LossGrad lg =
          softmax_translation_loss(model, {&batch[i], 1}, /*reg=*/0.0);
      total += w * lg.loss;
      wsum += w;
    }
  }
  return total / wsum;
}

std::optional<std::vector<double>> decay_user_embedding(
    const std::vector<TimedVector>& engagements, Timestamp t0,
    const DecayParams& params) {
  params.validate();
  if (engagements.empty()) return std::nullopt;
  for (const auto& e : engagements)
    if (e.ts > t0)
      throw ArgumentError("decay_user_embedding: engagement after t0");

  // Most recent last_n; ties keep input order.
  std::vector<std::size_t> order(engagements.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return engagements[a].ts > engagements[b].ts;
  });
  if (order.size() > params.last_n) order.resize(params.last_n);

  std::size_t dim = engagements[order[0]].vec.size();
  std::vector<double> out(dim, 0.0);
  double wsum = 0.0;
  for (std::size_t idx : order) {
    const auto& e = engagements[idx];
    if (e.vec.size() != dim)
      throw ArgumentError("decay_user_embedding: mixed vector dims");
    double w = std::exp(params.lambda *
                        (static_cast<double>(e.ts - t0) / kSecondsPerDay));
    for (std::size_t i = 0; i < dim; ++i) out[i] += w * e.vec[i];
    wsum += w;
  }
  for (double& x : out) x /= wsum;
  return out;
}

EmbeddingModel propagate_embeddings(
    const std::map<UserId, std::vector<UserId>>& follow_graph,
    const EmbeddingModel& table, std::uint64_t sample_cap, std::uint64_t seed) {
  EmbeddingModel out = table;
  std::uint32_t dim = table.dim();
  std::vector<double> mean(dim);
  for (const auto& [user, followings] : follow_graph) {
    EntityKey me{VertexType::user, user};
    if (table.has_entity(me)) continue;

    std::vector<UserId> embedded;
    for (UserId f : followings)
      if (table.has_entity({VertexType::user, f})) embedded.push_back(f);
    if (embedded.empty()) continue;  // stays missing
    std::sort(embedded.begin(), embedded.end());
    embedded.erase(std::unique(embedded.begin(), embedded.end()),
                   embedded.end());

    if (embedded.size() > sample_cap) {
      Rng rng(hash_key(seed, user));
      for (std::uint64_t i = 0; i < sample_cap; ++i) {
        std::uint64_t j = i + rng.uniform_index(embedded.size() - i);
        std::swap(embedded[i], embedded[j]);
      }
      embedded.resize(sample_cap);
    }

    std::fill(mean.begin(), mean.end(), 0.0);
    for (UserId f : embedded) {
      auto v = table.vector_of({VertexType::user, f});
      for (std::uint32_t i = 0; i < dim; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(embedded.size());
    out.add_entity(me, mean);
  }
  return out;
}

namespace {

using binio::get_f32;
using binio::get_u32;
using binio::get_u64;
using binio::put_f32;
using binio::put_u32;
using binio::put_u64;

constexpr char kEmbedMagic[4] = {'T', 'W', 'R', 'C'};
constexpr std::uint32_t kEmbedVersion = 1;

}  // namespace

void save_embeddings(const EmbeddingModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out.write(kEmbedMagic, 4);
  put_u32(out, kEmbedVersion);
  put_u64(out, model.entity_count());
  put_u32(out, model.dim());

  std::vector<EntityKey> sorted = model.keys();
  std::sort(sorted.begin(), sorted.end());
  for (const auto& k : sorted) {
    out.put(static_cast<char>(k.type));
    put_u64(out, k.id);
    for (double x : model.vector_of(k)) put_f32(out, static_cast<float>(x));
  }
  put_u64(out, model.relations().size());
  for (const auto& [r, v] : model.relations()) {
    out.put(static_cast<char>(r));
    for (double x : v) put_f32(out, static_cast<float>(x));
  }
}

EmbeddingModel load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kEmbedMagic, 4) != 0)
    throw FormatError("bad embedding file magic in " + path);
  std::uint32_t version = get_u32(in);
  if (version != kEmbedVersion)
    throw FormatError("unsupported embedding format version " +
                      std::to_string(version) + " in " + path);
  std::uint64_t count = get_u64(in);
  std::uint32_t dim = get_u32(in);
  EmbeddingModel model(dim);
  std::vector<double> vec(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    int type = in.get();
    if (type < 0 || type > 2) throw FormatError("bad entity type in " + path);
    std::uint64_t id = get_u64(in);
    for (std::uint32_t d = 0; d < dim; ++d) vec[d] = get_f32(in);
    model.add_entity({static_cast<VertexType>(type), id}, vec);
  }
  std::uint64_t n_rel = get_u64(in);
  for (std::uint64_t i = 0; i < n_rel; ++i) {
    int rel = in.get();
    if (rel < 0 || rel > 2) throw FormatError("bad relation in " + path);
    for (std::uint32_t d = 0; d < dim; ++d) vec[d] = get_f32(in);
    model.set_relation(static_cast<Relation>(rel), vec);
  }
  return model;
}

}  // namespace twerc
