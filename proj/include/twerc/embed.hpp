#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "twerc/graph.hpp"

namespace twerc {

struct EntityKey {
  VertexType type = VertexType::user;
  std::uint64_t id = 0;
  auto operator<=>(const EntityKey&) const = default;
};

struct EntityKeyHash {
  std::size_t operator()(const EntityKey& k) const;
};

struct TrainParams {
  std::uint64_t dim = 64;
  double reg = 1e-3;                     // L2 coefficient
  std::uint64_t negatives_batch = 1000;  // in-batch negatives per positive
  std::uint64_t negatives_uniform = 1000;
  std::uint64_t epochs = 10;
  double learning_rate = 0.1;
  std::uint64_t batch_size = 64;
  enum class Optimizer { adagrad, sgd };
  Optimizer optimizer = Optimizer::adagrad;
  double loss_delta_stop = 1e-4;  // relative epoch-loss change; <= 0 disables
  std::uint64_t seed = 7;

  void validate() const;
};

// Entity embeddings plus one translation vector per relation. Scoring is
// (v_head + v_relation) . v_tail. Vectors are doubles in memory and f32 in
// the persisted format.
class EmbeddingModel {
public:
  EmbeddingModel() = default;
  explicit EmbeddingModel(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t entity_count() const { return keys_.size(); }
  const std::vector<EntityKey>& keys() const { return keys_; }

  bool has_entity(const EntityKey& k) const { return index_.count(k) > 0; }
  std::span<const double> vector_of(const EntityKey& k) const;  // LookupError
  std::span<double> mutable_vector(const EntityKey& k);
  void add_entity(const EntityKey& k, std::span<const double> v);

  bool has_relation(Relation r) const { return relations_.count(r) > 0; }
  std::span<const double> relation_vector(Relation r) const;  // LookupError
  std::span<double> mutable_relation(Relation r);
  void set_relation(Relation r, std::span<const double> v);
  const std::map<Relation, std::vector<double>>& relations() const {
    return relations_;
  }

  std::set<EntityKey> frozen;  // entities excluded from gradient updates
  std::uint32_t toc_epoch = 0;
  std::uint32_t tic_step = 0;

private:
  std::uint32_t dim_ = 0;
  std::vector<EntityKey> keys_;
  std::vector<double> data_;  // keys_.size() * dim_
  std::unordered_map<EntityKey, std::size_t, EntityKeyHash> index_;
  std::map<Relation, std::vector<double>> relations_;
};

double score_edge(const EmbeddingModel& model, const EntityKey& head,
                  Relation rel, const EntityKey& tail);

// Initializer for entities (and relations) absent from the warm start:
// coordinates uniform in [-1/sqrt(dim), 1/sqrt(dim)]. The trainer draws
// these in ascending key order before any sampling draws, so a fixed seed
// makes the init state replayable.
std::vector<double> random_entity_vector(class Rng& rng, std::uint32_t dim);

// One positive with its sampled negative tails; the unit the loss kernel
// consumes.
struct TrainSample {
  EntityKey head;
  Relation rel;
  EntityKey tail;
  std::vector<EntityKey> neg_tails;
};

struct LossGrad {
  double loss = 0.0;
  std::map<EntityKey, std::vector<double>> entity_grad;
  std::map<Relation, std::vector<double>> relation_grad;
};

// Cross-entropy of the positive against {positive} + negatives under the
// translation scores, plus reg * ||v||^2 over every vector touched by the
// batch (counted once per batch). Gradients cover exactly those vectors.
LossGrad softmax_translation_loss(const EmbeddingModel& model,
                                  std::span<const TrainSample> batch,
                                  double reg);

EmbeddingModel train(const HetGraph& graph, const TrainParams& params,
                     const EmbeddingModel* init = nullptr);

// Freezes every pre-existing entity (and the relation vectors), randomly
// initializes the delta's new vertices, and fits them on the delta edges
// only. Pre-existing vectors are bit-identical afterwards.
EmbeddingModel tic_update(const EmbeddingModel& model, const EdgeDelta& delta,
                          const TrainParams& params);

// Unfreezes everything and retrains on the merged edge list, warm-started
// from the current vectors. toc_epoch++, tic_step = 0.
EmbeddingModel toc_update(const EmbeddingModel& model,
                          const std::vector<GraphEdge>& merged_edges,
                          const TrainParams& params);

// Weight-averaged per-edge loss with seeded uniform negatives; used to
// compare models on a common footing.
double eval_loss(const EmbeddingModel& model,
                 const std::vector<GraphEdge>& edges,
                 const TrainParams& params, std::uint64_t seed);

struct DecayParams {
  double lambda = 0.09902102579427789;  // ln2 / 7, per day
  std::uint64_t last_n = 50;

  void validate() const;
};

struct TimedVector {
  std::vector<double> vec;
  Timestamp ts = 0;
};

// Exponentially time-decayed mean of the last-N engaged-ad vectors:
// sum_j e^{lambda (t_j - t0)} v_j / sum_j e^{lambda (t_j - t0)}, times in
// days. Empty history -> nullopt (caller falls back to the base vector).
std::optional<std::vector<double>> decay_user_embedding(
    const std::vector<TimedVector>& engagements, Timestamp t0,
    const DecayParams& params);

// One-hop feature propagation over the follow graph: each user missing
// from the table gets the arithmetic mean of up to sample_cap uniformly
// sampled embedded followings. Sampling is a partial Fisher-Yates over the
// ascending-id following list, seeded per user with hash_key(seed, user).
EmbeddingModel propagate_embeddings(
    const std::map<UserId, std::vector<UserId>>& follow_graph,
    const EmbeddingModel& table, std::uint64_t sample_cap, std::uint64_t seed);

void save_embeddings(const EmbeddingModel& model, const std::string& path);
EmbeddingModel load_embeddings(const std::string& path);

}  // namespace twerc
