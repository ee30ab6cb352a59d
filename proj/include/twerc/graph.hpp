#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "twerc/world.hpp"

namespace twerc {

enum class VertexType : std::uint8_t { user = 0, ad = 1, advertiser = 2 };

const char* vertex_type_name(VertexType t);

struct Vertex {
  VertexType type = VertexType::user;
  std::uint64_t id = 0;
  auto operator<=>(const Vertex&) const = default;
};

enum class Relation : std::uint8_t {
  engaged_pos = 0,
  engaged_neg = 1,
  authored_by = 2,
};

const char* relation_name(Relation r);

struct GraphEdge {
  Vertex head;
  Relation rel = Relation::engaged_pos;
  Vertex tail;
  Timestamp ts = 0;          // most recent contributing event
  std::uint64_t weight = 1;  // engagement multiplicity
};

// Heterogeneous engagement multigraph over a time window. Vertices and
// edges are kept sorted so snapshots serialize identically.
struct HetGraph {
  std::vector<Vertex> vertices;   // sorted, unique
  std::vector<GraphEdge> edges;   // sorted by (head, rel, tail), unique triples
  Timestamp t_start = 0;
  Timestamp t_end = 0;

  bool has_vertex(const Vertex& v) const;
};

struct EdgeDelta {
  std::vector<Vertex> new_vertices;  // sorted
  std::vector<GraphEdge> delta_edges;
};

struct CleaningReport {
  std::uint64_t malformed = 0;      // unreadable records from the log
  std::uint64_t out_of_window = 0;  // engagements outside [t_start, t_end]
};

struct GraphBuild {
  HetGraph graph;
  CleaningReport report;
};

// One vertex per distinct user/ad appearing in an in-window engagement,
// plus the advertiser vertex behind each ad; repeated (head, rel, tail)
// engagements collapse into a single weighted edge.
GraphBuild build_graph(const EventLog& events,
                       Timestamp t_start, Timestamp t_end);

// new_vertices = curr \ prev; delta edges are curr edges touching a new
// vertex or stamped after prev.t_end, carrying only the weight gained
// since prev so that merge_edges reproduces curr exactly.
EdgeDelta delta_edges(const HetGraph& prev, const HetGraph& curr);

// Multiset union with weight summation on duplicate triples.
std::vector<GraphEdge> merge_edges(const std::vector<GraphEdge>& prev_edges,
                                   const EdgeDelta& delta);

void save_graph(const HetGraph& g, const std::string& vertices_path,
                const std::string& edges_path);
HetGraph load_graph(const std::string& vertices_path,
                    const std::string& edges_path);

}  // namespace twerc
