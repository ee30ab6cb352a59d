#include "twerc/ann.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

#include "twerc/binio.hpp"
#include "twerc/errors.hpp"
#include "twerc/rng.hpp"
#include "twerc/vecmath.hpp"

namespace twerc {

void HnswParams::validate() const {
  if (max_links < 2) throw ConfigError("max_links", "must be >= 2");
  if (ef_construction < 1) throw ConfigError("ef_construction", "must be >= 1");
  if (ef_search < 1) throw ConfigError("ef_search", "must be >= 1");
}

namespace {

using ScoredNode = std::pair<double, std::uint32_t>;  // (similarity, node)

// Higher similarity first; ties prefer the lower node index.
bool better(const ScoredNode& a, const ScoredNode& b) {
  if (a.first != b.first) return a.first > b.first;
  return a.second < b.second;
}

struct WorseOnTop {
  bool operator()(const ScoredNode& a, const ScoredNode& b) const {
    return better(a, b);  // priority_queue top = worst
  }
};

struct BetterOnTop {
  bool operator()(const ScoredNode& a, const ScoredNode& b) const {
    return better(b, a);
  }
};

void check_items(const std::vector<AnnItem>& items) {
  if (items.empty()) throw ArgumentError("index needs at least one item");
  std::size_t dim = items[0].vec.size();
  if (dim == 0) throw ArgumentError("index items need a non-empty vector");
  std::set<std::uint64_t> ids;
  for (const auto& it : items) {
    if (it.vec.size() != dim)
      throw ArgumentError("index item dim mismatch for id " +
                          std::to_string(it.id));
    if (!ids.insert(it.id).second)
      throw ArgumentError("duplicate index id " + std::to_string(it.id));
  }
}

}  // namespace

double AnnIndex::similarity(std::uint32_t node, std::span<const double> q) const {
  return dot(items_[node].vec, q);
}

AnnIndex build_exact(const std::vector<AnnItem>& items) {
  check_items(items);
  AnnIndex idx;
  idx.kind_ = AnnIndex::Kind::exact;
  idx.dim_ = static_cast<std::uint32_t>(items[0].vec.size());
  idx.items_ = items;
  return idx;
}

AnnIndex build_hnsw(const std::vector<AnnItem>& items, const HnswParams& params,
                    std::uint64_t seed) {
  check_items(items);
  params.validate();
  AnnIndex idx;
  idx.kind_ = AnnIndex::Kind::hnsw;
  idx.dim_ = static_cast<std::uint32_t>(items[0].vec.size());
  idx.params_ = params;
  idx.items_ = items;
  idx.nodes_.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) idx.nodes_[i].id = items[i].id;

  Rng rng(seed);
  double level_mult = 1.0 / std::log(static_cast<double>(params.max_links));
  for (std::uint32_t i = 0; i < items.size(); ++i) {
    double u = rng.uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    int level = static_cast<int>(-std::log(u) * level_mult);
    idx.insert_hnsw(i, level, rng);
  }
  return idx;
}

void AnnIndex::insert_hnsw(std::uint32_t node, int level, Rng&) {
  nodes_[node].links.resize(level + 1);
  if (entry_point_ < 0) {
    entry_point_ = static_cast<std::int32_t>(node);
    max_level_ = level;
    return;
  }

  std::span<const double> q = items_[node].vec;
  std::uint32_t current = static_cast<std::uint32_t>(entry_point_);

  for (int l = max_level_; l > level; --l) {
    auto nearest = search_layer(q, current, 1, l);
    if (!nearest.empty()) current = nearest[0].second;
  }

  for (int l = std::min(level, max_level_); l >= 0; --l) {
    auto cand = search_layer(q, current, params_.ef_construction, l);
    std::size_t m_max = l == 0 ? 2 * params_.max_links : params_.max_links;
    auto neighbors = select_neighbors(node, cand, params_.max_links);
    for (std::uint32_t nb : neighbors) {
      nodes_[node].links[l].push_back(nb);
      nodes_[nb].links[l].push_back(node);
      if (nodes_[nb].links[l].size() > m_max) {
        std::vector<ScoredNode> scored;
        scored.reserve(nodes_[nb].links[l].size());
        for (std::uint32_t x : nodes_[nb].links[l])
          scored.emplace_back(similarity(x, items_[nb].vec), x);
        std::sort(scored.begin(), scored.end(), better);
        nodes_[nb].links[l] = select_neighbors(nb, scored, m_max);
      }
    }
    if (!cand.empty()) current = cand[0].second;
  }

  if (level > max_level_) {
    entry_point_ = static_cast<std::int32_t>(node);
    max_level_ = level;
  }
}

// Beam search within one layer; returns up to ef nodes ordered best-first.
std::vector<ScoredNode> AnnIndex::search_layer(std::span<const double> q,
                                               std::uint32_t entry,
                                               std::size_t ef,
                                               std::size_t layer) const {
  std::vector<char> visited(nodes_.size(), 0);
  visited[entry] = 1;
  double d = similarity(entry, q);

  std::priority_queue<ScoredNode, std::vector<ScoredNode>, BetterOnTop> frontier;
  std::priority_queue<ScoredNode, std::vector<ScoredNode>, WorseOnTop> best;
  frontier.push({d, entry});
  best.push({d, entry});

  while (!frontier.empty()) {
    ScoredNode c = frontier.top();
    frontier.pop();
    if (best.size() >= ef && better(best.top(), c)) break;
    const auto& links = nodes_[c.second].links;
    if (layer >= links.size()) continue;
    for (std::uint32_t nb : links[layer]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      double s = similarity(nb, q);
      if (best.size() < ef || better({s, nb}, best.top())) {
        frontier.push({s, nb});
        best.push({s, nb});
        if (best.size() > ef) best.pop();
      }
    }
  }

  std::vector<ScoredNode> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Neighbor-selection heuristic: keep a candidate only if it is more similar
// to the anchor than to any already-kept neighbor, then top up with the
// skipped ones in order.
std::vector<std::uint32_t> AnnIndex::select_neighbors(
    std::uint32_t anchor, const std::vector<ScoredNode>& cand,
    std::size_t m) const {
  std::vector<std::uint32_t> selected;
  std::vector<std::uint32_t> skipped;
  for (const auto& [sim_to_anchor, c] : cand) {
    if (c == anchor) continue;
    if (selected.size() >= m) break;
    bool keep = true;
    for (std::uint32_t s : selected) {
      if (similarity(c, items_[s].vec) > sim_to_anchor) {
        keep = false;
        break;
      }
    }
    if (keep)
      selected.push_back(c);
    else
      skipped.push_back(c);
  }
  for (std::uint32_t c : skipped) {
    if (selected.size() >= m) break;
    selected.push_back(c);
  }
  return selected;
}

std::vector<AnnResult> AnnIndex::exact_query(std::span<const double> q,
                                             std::size_t k,
                                             const AnnFilter& filter) const {
  std::vector<ScoredNode> scored;
  scored.reserve(items_.size());
  for (std::uint32_t i = 0; i < items_.size(); ++i) {
    if (filter && !filter(items_[i].id)) continue;
    scored.emplace_back(similarity(i, q), i);
  }
  std::sort(scored.begin(), scored.end(), [&](const ScoredNode& a, const ScoredNode& b) {
    if (a.first != b.first) return a.first > b.first;
    return items_[a.second].id < items_[b.second].id;
  });
  if (scored.size() > k) scored.resize(k);
  std::vector<AnnResult> out;
  out.reserve(scored.size());
  for (const auto& [s, i] : scored) out.push_back({items_[i].id, s});
  return out;
}

std::vector<AnnResult> AnnIndex::hnsw_query(std::span<const double> q,
                                            std::size_t k,
                                            const AnnFilter& filter) const {
  std::uint32_t current = static_cast<std::uint32_t>(entry_point_);
  for (int l = max_level_; l > 0; --l) {
    auto nearest = search_layer(q, current, 1, l);
    if (!nearest.empty()) current = nearest[0].second;
  }
  // With a filter the beam over-fetches by 4x and filters afterwards.
  std::size_t ef = std::max<std::size_t>(params_.ef_search, k);
  if (filter) ef *= 4;
  auto found = search_layer(q, current, ef, 0);

  std::vector<AnnResult> out;
  for (const auto& [s, i] : found) {
    if (filter && !filter(items_[i].id)) continue;
    out.push_back({items_[i].id, s});
    if (out.size() == k) break;
  }
  std::stable_sort(out.begin(), out.end(), [](const AnnResult& a, const AnnResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

std::vector<AnnResult> AnnIndex::query(std::span<const double> q, std::size_t k,
                                       const AnnFilter& filter) const {
  if (q.size() != dim_) throw ArgumentError("query dim mismatch");
  if (k < 1) throw ArgumentError("k must be >= 1");
  return kind_ == Kind::exact ? exact_query(q, k, filter)
                              : hnsw_query(q, k, filter);
}

double recall_at_k(const std::vector<std::vector<std::uint64_t>>& approx,
                   const std::vector<std::vector<std::uint64_t>>& exact,
                   std::size_t k) {
  if (approx.size() != exact.size())
    throw ArgumentError("recall_at_k: query count mismatch");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    std::size_t denom = std::min(k, exact[i].size());
    if (denom == 0) continue;
    std::set<std::uint64_t> truth(exact[i].begin(), exact[i].end());
    std::size_t hits = 0;
    for (std::size_t j = 0; j < approx[i].size() && j < k; ++j)
      hits += truth.count(approx[i][j]);
    total += static_cast<double>(hits) / static_cast<double>(denom);
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

namespace {

using binio::get_f32;
using binio::get_u32;
using binio::get_u64;
using binio::put_f32;
using binio::put_u32;
using binio::put_u64;

constexpr char kIndexMagic[4] = {'T', 'W', 'A', 'N'};
constexpr std::uint32_t kIndexVersion = 1;
constexpr std::uint8_t kMetricInnerProduct = 0;

}  // namespace

void AnnIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError(path);
  out.write(kIndexMagic, 4);
  put_u32(out, kIndexVersion);
  out.put(static_cast<char>(kMetricInnerProduct));
  put_u32(out, params_.max_links);
  put_u32(out, params_.ef_construction);
  put_u64(out, items_.size());
  put_u32(out, dim_);
  for (const auto& it : items_) {
    put_u64(out, it.id);
    for (double x : it.vec) put_f32(out, static_cast<float>(x));
  }
  // Per node: level count, then per level a neighbor count and the
  // neighbor ids. An exact index writes zero levels everywhere.
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (kind_ == Kind::exact) {
      put_u32(out, 0);
      continue;
    }
    const auto& links = nodes_[i].links;
    put_u32(out, static_cast<std::uint32_t>(links.size()));
    for (const auto& level : links) {
      put_u32(out, static_cast<std::uint32_t>(level.size()));
      for (std::uint32_t nb : level) put_u64(out, items_[nb].id);
    }
  }
}

AnnIndex AnnIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kIndexMagic, 4) != 0)
    throw FormatError("bad index magic in " + path);
  std::uint32_t version = get_u32(in);
  if (version != kIndexVersion)
    throw FormatError("unsupported index format version " +
                      std::to_string(version) + " in " + path);
  int metric = in.get();
  if (metric != kMetricInnerProduct)
    throw FormatError("unsupported metric code in " + path);

  AnnIndex idx;
  idx.params_.max_links = get_u32(in);
  idx.params_.ef_construction = get_u32(in);
  std::uint64_t count = get_u64(in);
  idx.dim_ = get_u32(in);
  idx.items_.resize(count);
  std::unordered_map<std::uint64_t, std::uint32_t> by_id;
  for (std::uint64_t i = 0; i < count; ++i) {
    idx.items_[i].id = get_u64(in);
    idx.items_[i].vec.resize(idx.dim_);
    for (std::uint32_t d = 0; d < idx.dim_; ++d)
      idx.items_[i].vec[d] = get_f32(in);
    by_id[idx.items_[i].id] = static_cast<std::uint32_t>(i);
  }

  idx.nodes_.resize(count);
  bool any_levels = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    idx.nodes_[i].id = idx.items_[i].id;
    std::uint32_t levels = get_u32(in);
    if (levels > 0) any_levels = true;
    idx.nodes_[i].links.resize(levels);
    for (std::uint32_t l = 0; l < levels; ++l) {
      std::uint32_t n = get_u32(in);
      idx.nodes_[i].links[l].reserve(n);
      for (std::uint32_t j = 0; j < n; ++j) {
        auto it = by_id.find(get_u64(in));
        if (it == by_id.end())
          throw FormatError("dangling neighbor id in " + path);
        idx.nodes_[i].links[l].push_back(it->second);
      }
    }
  }

  if (!any_levels) {
    idx.kind_ = Kind::exact;
    idx.nodes_.clear();
    return idx;
  }
  idx.kind_ = Kind::hnsw;
  // The entry point is the first inserted node holding the top level;
  // insertion order equals file order, so it is recoverable.
  int max_level = -1;
  for (std::uint64_t i = 0; i < count; ++i)
    max_level = std::max(max_level,
                         static_cast<int>(idx.nodes_[i].links.size()) - 1);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (static_cast<int>(idx.nodes_[i].links.size()) - 1 == max_level) {
      idx.entry_point_ = static_cast<std::int32_t>(i);
      break;
    }
  }
  idx.max_level_ = max_level;
  return idx;
}

}  // namespace twerc
