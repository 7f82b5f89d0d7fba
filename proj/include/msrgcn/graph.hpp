#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace msrgcn {

// Magnification level of a patch node. Ordered coarse to fine.
enum class Scale : std::uint8_t { S5 = 0, S10 = 1, S20 = 2 };

inline constexpr std::array<Scale, 3> kAllScales = {Scale::S5, Scale::S10,
                                                    Scale::S20};

int scale_magnification(Scale s);         // 5, 10 or 20
Scale scale_from_magnification(int m);    // inverse; throws on unknown value
std::string scale_name(Scale s);          // "5x", "10x", "20x"

// A node is a (scale, grid cell) triple. The three scales share one grid:
// location (row, col) corresponds 1:1:1 across scales.
struct NodeRef {
  Scale scale;
  int row = 0;
  int col = 0;

  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

// Directed edge type: scale of the source node and scale of the destination.
// The nine values split into three neighbor relations (src == dst) and six
// cross-scale relations (src != dst).
struct Relation {
  Scale src;
  Scale dst;

  bool is_neighbor() const { return src == dst; }
  bool is_scale() const { return src != dst; }

  friend auto operator<=>(const Relation&, const Relation&) = default;
};

std::string relation_name(const Relation& r);  // e.g. "5->20"

// All nine relations in a fixed order: the three neighbor relations first
// (S5, S10, S20), then the six cross-scale relations ordered by (src, dst).
std::vector<Relation> all_relations();
std::vector<Relation> neighbor_relations();
std::vector<Relation> scale_relations();
// The single neighbor relation of a one-scale graph.
Relation single_scale_relation(Scale s);

// Graph topology variants.
//   Full        - 4-connectivity neighbor edges per scale, all six directed
//                 cross-scale edges per location.
//   SingleScale - one node set at the given scale, neighbor edges only.
//   GlobalEdges - within each scale, connect two cells iff their Euclidean
//                 distance is strictly below half the maximum pairwise
//                 distance in the grid; cross-scale edges as Full.
//   NoScaleEdges- Full neighbor edges, no cross-scale edges.
struct GraphVariant {
  enum class Kind : std::uint8_t { Full, SingleScale, GlobalEdges, NoScaleEdges };

  Kind kind = Kind::Full;
  Scale scale = Scale::S20;  // only meaningful for SingleScale

  static GraphVariant full() { return {Kind::Full, Scale::S20}; }
  static GraphVariant single(Scale s) { return {Kind::SingleScale, s}; }
  static GraphVariant global_edges() { return {Kind::GlobalEdges, Scale::S20}; }
  static GraphVariant no_scale_edges() { return {Kind::NoScaleEdges, Scale::S20}; }

  bool single_scale() const { return kind == Kind::SingleScale; }

  friend auto operator<=>(const GraphVariant&, const GraphVariant&) = default;
};

std::string variant_name(const GraphVariant& v);

// Typed multi-scale patch graph. Immutable once built; edge lists are stored
// directed and in a deterministic order (source nodes row-major within scale,
// scales ordered S5, S10, S20). Dense feature matrices use the same node
// order, see node_index().
class MultiScaleGraph {
 public:
  MultiScaleGraph(int grid_rows, int grid_cols, GraphVariant variant,
                  std::vector<Scale> scales,
                  std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>> edges);

  int grid_rows() const { return grid_rows_; }
  int grid_cols() const { return grid_cols_; }
  const GraphVariant& variant() const { return variant_; }
  const std::vector<Scale>& scales() const { return scales_; }
  int num_locations() const { return grid_rows_ * grid_cols_; }
  int num_nodes() const {
    return static_cast<int>(scales_.size()) * num_locations();
  }

  bool contains(const NodeRef& n) const;
  // Row-major index within scale; scale blocks ordered as scales().
  int node_index(const NodeRef& n) const;
  NodeRef node_at(int index) const;

  const std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>>& edges() const {
    return edges_;
  }
  const std::vector<std::pair<NodeRef, NodeRef>>& edges_of(const Relation& r) const;
  std::size_t num_edges(const Relation& r) const { return edges_of(r).size(); }
  std::size_t num_neighbor_edges() const;
  std::size_t num_scale_edges() const;

 private:
  int grid_rows_;
  int grid_cols_;
  GraphVariant variant_;
  std::vector<Scale> scales_;
  std::map<Relation, std::vector<std::pair<NodeRef, NodeRef>>> edges_;
};

// Builds the typed patch graph for a grid_rows x grid_cols patch grid.
// Throws std::invalid_argument for an empty grid.
MultiScaleGraph build_graph(int grid_rows, int grid_cols, GraphVariant variant);

// In-neighbors j of `node` with an edge (j -> node) of the given relation,
// ordered row-major by (scale, row, col). Throws if the node is not in the
// graph.
std::vector<NodeRef> neighbors(const MultiScaleGraph& graph, const NodeRef& node,
                               const Relation& relation);

// Nodes reachable from `node` within at most k directed hops restricted to
// the given relations; the start node itself is excluded.
std::set<NodeRef> khop(const MultiScaleGraph& graph, const NodeRef& node,
                       const std::vector<Relation>& relations, int k);

// Debug export: JSON text with one record per relation, each carrying the
// ordered edge list as {"src": i, "dst": j} node-index pairs.
std::string to_debug_json(const MultiScaleGraph& graph);

}  // namespace msrgcn
