#include "msrgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace msrgcn {

int scale_magnification(Scale s) {
  switch (s) {
    case Scale::S5: return 5;
    case Scale::S10: return 10;
    case Scale::S20: return 20;
  }
  throw std::logic_error("scale_magnification: bad scale");
}

Scale scale_from_magnification(int m) {
  switch (m) {
    case 5: return Scale::S5;
    case 10: return Scale::S10;
    case 20: return Scale::S20;
  }
  throw std::invalid_argument("unknown magnification: " + std::to_string(m));
}

std::string scale_name(Scale s) {
  return std::to_string(scale_magnification(s)) + "x";
}

std::string relation_name(const Relation& r) {
  return std::to_string(scale_magnification(r.src)) + "->" +
         std::to_string(scale_magnification(r.dst));
}

std::vector<Relation> neighbor_relations() {
  std::vector<Relation> out;
  for (Scale s : kAllScales) out.push_back({s, s});
  return out;
}

std::vector<Relation> scale_relations() {
  std::vector<Relation> out;
  for (Scale a : kAllScales)
    for (Scale b : kAllScales)
      if (a != b) out.push_back({a, b});
  return out;
}

std::vector<Relation> all_relations() {
  std::vector<Relation> out = neighbor_relations();
  for (const Relation& r : scale_relations()) out.push_back(r);
  return out;
}

Relation single_scale_relation(Scale s) { return {s, s}; }

std::string variant_name(const GraphVariant& v) {
  switch (v.kind) {
    case GraphVariant::Kind::Full: return "full";
    case GraphVariant::Kind::SingleScale:
      return "single_" + scale_name(v.scale);
    case GraphVariant::Kind::GlobalEdges: return "global_edges";
    case GraphVariant::Kind::NoScaleEdges: return "no_scale_edges";
  }
  throw std::logic_error("variant_name: bad kind");
}

MultiScaleGraph::MultiScaleGraph(
    int grid_rows, int grid_cols, GraphVariant variant, std::vector<Scale> scales,
    std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>> edges)
    : grid_rows_(grid_rows),
      grid_cols_(grid_cols),
      variant_(variant),
      scales_(std::move(scales)),
      edges_(std::move(edges)) {}

bool MultiScaleGraph::contains(const NodeRef& n) const {
  if (n.row < 0 || n.row >= grid_rows_ || n.col < 0 || n.col >= grid_cols_)
    return false;
  return std::find(scales_.begin(), scales_.end(), n.scale) != scales_.end();
}

int MultiScaleGraph::node_index(const NodeRef& n) const {
  if (!contains(n))
    throw std::out_of_range("node (" + scale_name(n.scale) + "," +
                            std::to_string(n.row) + "," + std::to_string(n.col) +
                            ") is not in the graph");
  const auto it = std::find(scales_.begin(), scales_.end(), n.scale);
  const int block = static_cast<int>(it - scales_.begin());
  return block * num_locations() + n.row * grid_cols_ + n.col;
}

NodeRef MultiScaleGraph::node_at(int index) const {
  if (index < 0 || index >= num_nodes())
    throw std::out_of_range("node index out of range: " + std::to_string(index));
  const int loc = index % num_locations();
  const int block = index / num_locations();
  return NodeRef{scales_[static_cast<std::size_t>(block)], loc / grid_cols_,
                 loc % grid_cols_};
}

const std::vector<std::pair<NodeRef, NodeRef>>& MultiScaleGraph::edges_of(
    const Relation& r) const {
  static const std::vector<std::pair<NodeRef, NodeRef>> kEmpty;
  const auto it = edges_.find(r);
  return it == edges_.end() ? kEmpty : it->second;
}

std::size_t MultiScaleGraph::num_neighbor_edges() const {
  std::size_t n = 0;
  for (const auto& [rel, list] : edges_)
    if (rel.is_neighbor()) n += list.size();
  return n;
}

std::size_t MultiScaleGraph::num_scale_edges() const {
  std::size_t n = 0;
  for (const auto& [rel, list] : edges_)
    if (rel.is_scale()) n += list.size();
  return n;
}

namespace {

// 4-connectivity edges within one scale, both directions, source row-major.
void add_grid_neighbor_edges(
    int rows, int cols, Scale s,
    std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>>& edges) {
  auto& list = edges[{s, s}];
  constexpr int dr[4] = {-1, 0, 0, 1};
  constexpr int dc[4] = {0, -1, 1, 0};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int k = 0; k < 4; ++k) {
        const int nr = r + dr[k];
        const int nc = c + dc[k];
        if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
        list.push_back({NodeRef{s, r, c}, NodeRef{s, nr, nc}});
      }
}

// Distance-thresholded edges within one scale: connect (u, v), u != v, iff
// the Euclidean distance between grid cells is strictly less than half the
// maximum pairwise distance. A tie at the threshold yields no edge.
void add_global_edges(
    int rows, int cols, Scale s,
    std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>>& edges) {
  auto& list = edges[{s, s}];
  const double max_dist =
      std::sqrt(static_cast<double>((rows - 1) * (rows - 1) +
                                    (cols - 1) * (cols - 1)));
  const double threshold = max_dist / 2.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int r2 = 0; r2 < rows; ++r2)
        for (int c2 = 0; c2 < cols; ++c2) {
          if (r == r2 && c == c2) continue;
          const double d = std::sqrt(
              static_cast<double>((r - r2) * (r - r2) + (c - c2) * (c - c2)));
          if (d < threshold)
            list.push_back({NodeRef{s, r, c}, NodeRef{s, r2, c2}});
        }
}

// All six directed cross-scale pairs at every location.
void add_scale_edges(
    int rows, int cols,
    std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>>& edges) {
  for (const Relation& rel : scale_relations()) {
    auto& list = edges[rel];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        list.push_back({NodeRef{rel.src, r, c}, NodeRef{rel.dst, r, c}});
  }
}

}  // namespace

MultiScaleGraph build_graph(int grid_rows, int grid_cols, GraphVariant variant) {
  if (grid_rows < 1 || grid_cols < 1)
    throw std::invalid_argument("build_graph: grid must be at least 1x1, got " +
                                std::to_string(grid_rows) + "x" +
                                std::to_string(grid_cols));

  std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>> edges;
  std::vector<Scale> scales;

  switch (variant.kind) {
    case GraphVariant::Kind::SingleScale:
      scales = {variant.scale};
      add_grid_neighbor_edges(grid_rows, grid_cols, variant.scale, edges);
      break;
    case GraphVariant::Kind::Full:
      scales = {kAllScales.begin(), kAllScales.end()};
      for (Scale s : kAllScales) add_grid_neighbor_edges(grid_rows, grid_cols, s, edges);
      add_scale_edges(grid_rows, grid_cols, edges);
      break;
    case GraphVariant::Kind::GlobalEdges:
      scales = {kAllScales.begin(), kAllScales.end()};
      for (Scale s : kAllScales) add_global_edges(grid_rows, grid_cols, s, edges);
      add_scale_edges(grid_rows, grid_cols, edges);
      break;
    case GraphVariant::Kind::NoScaleEdges:
      scales = {kAllScales.begin(), kAllScales.end()};
      for (Scale s : kAllScales) add_grid_neighbor_edges(grid_rows, grid_cols, s, edges);
      break;
  }

  return MultiScaleGraph(grid_rows, grid_cols, variant, std::move(scales),
                         std::move(edges));
}

std::vector<NodeRef> neighbors(const MultiScaleGraph& graph, const NodeRef& node,
                               const Relation& relation) {
  if (!graph.contains(node))
    throw std::out_of_range("neighbors: node is not in the graph");
  std::vector<NodeRef> out;
  for (const auto& [src, dst] : graph.edges_of(relation))
    if (dst == node) out.push_back(src);
  // Edge lists are source row-major already; keep the contract explicit.
  std::sort(out.begin(), out.end());
  return out;
}

std::set<NodeRef> khop(const MultiScaleGraph& graph, const NodeRef& node,
                       const std::vector<Relation>& relations, int k) {
  if (!graph.contains(node))
    throw std::out_of_range("khop: node is not in the graph");
  if (k < 0) throw std::invalid_argument("khop: k must be >= 0");

  std::set<NodeRef> visited = {node};
  std::deque<std::pair<NodeRef, int>> frontier = {{node, 0}};
  while (!frontier.empty()) {
    const auto [cur, depth] = frontier.front();
    frontier.pop_front();
    if (depth == k) continue;
    for (const Relation& rel : relations) {
      if (rel.src != cur.scale) continue;
      for (const auto& [src, dst] : graph.edges_of(rel)) {
        if (src != cur) continue;
        if (visited.insert(dst).second) frontier.push_back({dst, depth + 1});
      }
    }
  }
  visited.erase(node);
  return visited;
}

std::string to_debug_json(const MultiScaleGraph& graph) {
  std::ostringstream os;
  os << "{\"grid_rows\":" << graph.grid_rows()
     << ",\"grid_cols\":" << graph.grid_cols() << ",\"variant\":\""
     << variant_name(graph.variant()) << "\",\"relations\":[";
  bool first_rel = true;
  for (const auto& [rel, list] : graph.edges()) {
    if (!first_rel) os << ",";
    first_rel = false;
    os << "{\"relation\":\"" << relation_name(rel) << "\",\"edges\":[";
    bool first_edge = true;
    for (const auto& [src, dst] : list) {
      if (!first_edge) os << ",";
      first_edge = false;
      os << "{\"src\":" << graph.node_index(src)
         << ",\"dst\":" << graph.node_index(dst) << "}";
    }
    os << "]}";
  }
  os << "]}";
  return os.str();
}

}  // namespace msrgcn
