#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace twerc {

struct HnswParams {
  std::uint32_t max_links = 16;         // M
  std::uint32_t ef_construction = 200;
  std::uint32_t ef_search = 100;

  void validate() const;
};

struct AnnItem {
  std::uint64_t id = 0;
  std::vector<double> vec;
};

struct AnnResult {
  std::uint64_t id = 0;
  double score = 0.0;  // inner product, higher is better
};

using AnnFilter = std::function<bool(std::uint64_t)>;

// Inner-product retrieval over a fixed item set. Exact mode is the
// exhaustive oracle; HNSW mode is the layered proximity graph. Results are
// ordered by (score desc, id asc).
class AnnIndex {
public:
  enum class Kind : std::uint8_t { exact = 0, hnsw = 1 };

  Kind kind() const { return kind_; }
  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return items_.size(); }
  const HnswParams& params() const { return params_; }

  std::vector<AnnResult> query(std::span<const double> q, std::size_t k,
                               const AnnFilter& filter = nullptr) const;

  void save(const std::string& path) const;
  static AnnIndex load(const std::string& path);

  friend AnnIndex build_exact(const std::vector<AnnItem>& items);
  friend AnnIndex build_hnsw(const std::vector<AnnItem>& items,
                             const HnswParams& params, std::uint64_t seed);

private:
  struct Node {
    std::uint64_t id = 0;
    // adjacency per layer, node indices
    std::vector<std::vector<std::uint32_t>> links;
  };

  double similarity(std::uint32_t node, std::span<const double> q) const;
  std::vector<AnnResult> exact_query(std::span<const double> q, std::size_t k,
                                     const AnnFilter& filter) const;
  std::vector<AnnResult> hnsw_query(std::span<const double> q, std::size_t k,
                                    const AnnFilter& filter) const;
  std::vector<std::pair<double, std::uint32_t>> search_layer(
      std::span<const double> q, std::uint32_t entry, std::size_t ef,
      std::size_t layer) const;
  void insert_hnsw(std::uint32_t node, int level, class Rng& rng);
  std::vector<std::uint32_t> select_neighbors(
      std::uint32_t node, const std::vector<std::pair<double, std::uint32_t>>& cand,
      std::size_t m) const;

  Kind kind_ = Kind::exact;
  std::uint32_t dim_ = 0;
  HnswParams params_;
  std::vector<AnnItem> items_;
  std::vector<Node> nodes_;   // hnsw only, parallel to items_
  std::int32_t entry_point_ = -1;
  std::int32_t max_level_ = -1;
};

AnnIndex build_exact(const std::vector<AnnItem>& items);

AnnIndex build_hnsw(const std::vector<AnnItem>& items, const HnswParams& params,
                    std::uint64_t seed);

// Mean of |approx_i intersect exact_i| / min(k, |exact_i|) over queries;
// queries with no exact results are skipped.
double recall_at_k(const std::vector<std::vector<std::uint64_t>>& approx,
                   const std::vector<std::vector<std::uint64_t>>& exact,
                   std::size_t k);

}  // namespace twerc
