#include "twerc/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include <json.hpp>

#include "twerc/errors.hpp"

namespace twerc {

using ordered_json = nlohmann::ordered_json;

const char* vertex_type_name(VertexType t) {
  switch (t) {
    case VertexType::user: return "user";
    case VertexType::ad: return "ad";
    case VertexType::advertiser: return "advertiser";
  }
  return "unknown";
}

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::engaged_pos: return "engaged_pos";
    case Relation::engaged_neg: return "engaged_neg";
    case Relation::authored_by: return "authored_by";
  }
  return "unknown";
}

namespace {

VertexType vertex_type_from_name(const std::string& s) {
  if (s == "user") return VertexType::user;
  if (s == "ad") return VertexType::ad;
  if (s == "advertiser") return VertexType::advertiser;
  throw FormatError("unknown vertex type: " + s);
}

Relation relation_from_name(const std::string& s) {
  if (s == "engaged_pos") return Relation::engaged_pos;
  if (s == "engaged_neg") return Relation::engaged_neg;
  if (s == "authored_by") return Relation::authored_by;
  throw FormatError("unknown relation: " + s);
}

using Triple = std::tuple<Vertex, Relation, Vertex>;

Triple triple_of(const GraphEdge& e) { return {e.head, e.rel, e.tail}; }

bool edge_order(const GraphEdge& a, const GraphEdge& b) {
  return triple_of(a) < triple_of(b);
}

}  // namespace

bool HetGraph::has_vertex(const Vertex& v) const {
  return std::binary_search(vertices.begin(), vertices.end(), v);
}

GraphBuild build_graph(const EventLog& events, Timestamp t_start,
                       Timestamp t_end) {
  if (t_start >= t_end)
    throw ArgumentError("graph window inverted: t_start must be < t_end");

  GraphBuild out;
  out.report.malformed = events.malformed_lines;
  out.graph.t_start = t_start;
  out.graph.t_end = t_end;

  // (head, rel, tail) -> (weight, latest ts); authored_by keeps the
  // earliest ts so expanding windows leave it stable.
  std::map<Triple, std::pair<std::uint64_t, Timestamp>> engage;
  std::map<Triple, Timestamp> authored;
  std::set<Vertex> vertices;

  for (const auto& r : events.records) {
    if (r.event != EventType::positive_engagement &&
        r.event != EventType::negative_engagement)
      continue;
    if (r.ts < t_start || r.ts > t_end) {
      ++out.report.out_of_window;
      continue;
    }
    Vertex u{VertexType::user, r.user_id};
    Vertex a{VertexType::ad, r.ad_id};
    Vertex adv{VertexType::advertiser, r.advertiser_id};
    Relation rel = r.event == EventType::positive_engagement
                       ? Relation::engaged_pos
                       : Relation::engaged_neg;
    vertices.insert(u);
    vertices.insert(a);
    vertices.insert(adv);

    auto& slot = engage[{u, rel, a}];
    slot.first += 1;
    slot.second = std::max(slot.second, r.ts);

    auto [it, fresh] = authored.try_emplace(Triple{a, Relation::authored_by, adv}, r.ts);
    if (!fresh) it->second = std::min(it->second, r.ts);
  }

  out.graph.vertices.assign(vertices.begin(), vertices.end());
  for (const auto& [key, wts] : engage) {
    GraphEdge e;
    e.head = std::get<0>(key);
    e.rel = std::get<1>(key);
    e.tail = std::get<2>(key);
    e.weight = wts.first;
    e.ts = wts.second;
    out.graph.edges.push_back(e);
  }
  for (const auto& [key, ts] : authored) {
    GraphEdge e;
    e.head = std::get<0>(key);
    e.rel = std::get<1>(key);
    e.tail = std::get<2>(key);
    e.weight = 1;
    e.ts = ts;
    out.graph.edges.push_back(e);
  }
  std::sort(out.graph.edges.begin(), out.graph.edges.end(), edge_order);
  return out;
}

EdgeDelta delta_edges(const HetGraph& prev, const HetGraph& curr) {
  if (prev.t_end > curr.t_end)
    throw ArgumentError("delta_edges: prev window ends after curr window");

  EdgeDelta d;
  std::set_difference(curr.vertices.begin(), curr.vertices.end(),
                      prev.vertices.begin(), prev.vertices.end(),
                      std::back_inserter(d.new_vertices));
  std::set<Vertex> fresh(d.new_vertices.begin(), d.new_vertices.end());

  std::map<Triple, std::uint64_t> prev_weight;
  for (const auto& e : prev.edges) prev_weight[triple_of(e)] = e.weight;

  for (const auto& e : curr.edges) {
    bool touches_new = fresh.count(e.head) || fresh.count(e.tail);
    if (!touches_new && e.ts <= prev.t_end) continue;
    std::uint64_t before = 0;
    if (auto it = prev_weight.find(triple_of(e)); it != prev_weight.end())
      before = it->second;
    if (e.weight <= before) continue;  // nothing gained since prev
    GraphEdge delta = e;
    delta.weight = e.weight - before;
    d.delta_edges.push_back(delta);
  }
  return d;
}

std::vector<GraphEdge> merge_edges(const std::vector<GraphEdge>& prev_edges,
                                   const EdgeDelta& delta) {
  std::map<Triple, GraphEdge> merged;
  for (const auto& e : prev_edges) merged.emplace(triple_of(e), e);
  for (const auto& e : delta.delta_edges) {
    auto [it, fresh] = merged.emplace(triple_of(e), e);
    if (!fresh) {
      it->second.weight += e.weight;
      it->second.ts = std::max(it->second.ts, e.ts);
    }
  }
  std::vector<GraphEdge> out;
  out.reserve(merged.size());
  for (const auto& [key, e] : merged) out.push_back(e);
  return out;
}

void save_graph(const HetGraph& g, const std::string& vertices_path,
                const std::string& edges_path) {
  std::ofstream vout(vertices_path, std::ios::binary);
  if (!vout) throw MissingInputError(vertices_path);
  ordered_json meta;
  meta["meta"] = {{"format_version", 1},
                  {"t_start", g.t_start},
                  {"t_end", g.t_end}};
  vout << meta.dump() << "\n";
  for (const auto& v : g.vertices) {
    ordered_json j;
    j["type"] = vertex_type_name(v.type);
    j["id"] = v.id;
    vout << j.dump() << "\n";
  }

  std::ofstream eout(edges_path, std::ios::binary);
  if (!eout) throw MissingInputError(edges_path);
  for (const auto& e : g.edges) {
    ordered_json j;
    j["head_type"] = vertex_type_name(e.head.type);
    j["head_id"] = e.head.id;
    j["relation"] = relation_name(e.rel);
    j["tail_type"] = vertex_type_name(e.tail.type);
    j["tail_id"] = e.tail.id;
    j["ts"] = e.ts;
    j["weight"] = e.weight;
    eout << j.dump() << "\n";
  }
}

HetGraph load_graph(const std::string& vertices_path,
                    const std::string& edges_path) {
  std::ifstream vin(vertices_path, std::ios::binary);
  if (!vin) throw MissingInputError(vertices_path);
  HetGraph g;
  std::string line;
  bool have_meta = false;
  while (std::getline(vin, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    if (!have_meta) {
      if (!j.contains("meta") ||
          j["meta"].value("format_version", -1) != 1)
        throw FormatError("unsupported graph format version in " + vertices_path);
      g.t_start = j["meta"].at("t_start").get<Timestamp>();
      g.t_end = j["meta"].at("t_end").get<Timestamp>();
      have_meta = true;
      continue;
    }
    Vertex v;
    v.type = vertex_type_from_name(j.at("type").get<std::string>());
    v.id = j.at("id").get<std::uint64_t>();
    g.vertices.push_back(v);
  }
  if (!have_meta)
    throw FormatError("graph vertices file lacks a meta header: " + vertices_path);

  std::ifstream ein(edges_path, std::ios::binary);
  if (!ein) throw MissingInputError(edges_path);
  while (std::getline(ein, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    GraphEdge e;
    e.head.type = vertex_type_from_name(j.at("head_type").get<std::string>());
    e.head.id = j.at("head_id").get<std::uint64_t>();
    e.rel = relation_from_name(j.at("relation").get<std::string>());
    e.tail.type = vertex_type_from_name(j.at("tail_type").get<std::string>());
    e.tail.id = j.at("tail_id").get<std::uint64_t>();
    e.ts = j.at("ts").get<Timestamp>();
    e.weight = j.at("weight").get<std::uint64_t>();
    g.edges.push_back(e);
  }
  std::sort(g.vertices.begin(), g.vertices.end());
  std::sort(g.edges.begin(), g.edges.end(), edge_order);
  return g;
}

}  // namespace twerc
