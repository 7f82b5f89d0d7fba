#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrgcn/graph.hpp"
#include "msrgcn/nn.hpp"
#include "msrgcn/rng.hpp"

namespace msrgcn {

// Model wiring variants. Full is the complete four-step pipeline; the rest
// are ablations that change the graph topology, the relation typing, or the
// amount of the encoder that runs.
enum class ModelVariant : std::uint8_t {
  Full,
  Single5,
  Single10,
  Single20,
  GE,              // long-range same-scale edges instead of 4-connectivity
  WoSE,            // no cross-scale edges, step 2 skipped
  HomogeneousGCN,  // one shared message matrix, relation-blind
  FourReLU,        // adds layer-norm + ReLU after each step-1 layer
  AttentionBaseline,  // attention pooling over raw features, no graph encoder
};

std::string variant_id(ModelVariant v);               // e.g. "Full", "Single5"
ModelVariant variant_from_id(const std::string& id);  // throws on unknown id
std::vector<ModelVariant> all_variants();

// Graph topology each model variant must be paired with.
GraphVariant expected_graph_variant(ModelVariant v);

struct ModelConfig {
  int in_dim = 32;            // d, input feature width per node
  int d1 = 16;                // step-3 intermediate width
  int d2 = 8;                 // step-3 output width per node
  int attention_dim = 64;     // L, attention hidden width
  int classifier_hidden = 32;
  int num_classes = 6;
  ModelVariant variant = ModelVariant::Full;
  // Replace the fixed 1/|relation set| factor by 1/(relations with at least
  // one in-neighbor at the node). Off by default.
  bool divide_by_incident = false;

  bool single_scale() const {
    return variant == ModelVariant::Single5 ||
           variant == ModelVariant::Single10 || variant == ModelVariant::Single20;
  }
  bool homogeneous() const { return variant == ModelVariant::HomogeneousGCN; }
  bool has_encoder() const { return variant != ModelVariant::AttentionBaseline; }
  // Step 2 needs cross-scale edges; single-scale graphs have none and the
  // WoSE ablation removes them.
  bool has_step2() const {
    return has_encoder() && !single_scale() && variant != ModelVariant::WoSE;
  }
  int scales_per_location() const { return single_scale() ? 1 : 3; }
  // Width of the per-location vector fed to attention pooling.
  int pooled_dim() const {
    return scales_per_location() * (has_encoder() ? d2 : in_dim);
  }
  void validate() const;  // throws std::invalid_argument on bad dims
};

// Per-node in-neighbor lists in feature-row order, one list per relation
// present in the graph, plus union lists over the neighbor and cross-scale
// relation groups (the adjacency of the relation-blind homogeneous mode).
class CompiledGraph {
 public:
  explicit CompiledGraph(const MultiScaleGraph& g);

  int grid_rows() const { return grid_rows_; }
  int grid_cols() const { return grid_cols_; }
  const GraphVariant& variant() const { return variant_; }
  const std::vector<Scale>& scales() const { return scales_; }
  int num_locations() const { return grid_rows_ * grid_cols_; }
  int num_nodes() const { return num_nodes_; }

  // Feature-matrix row of the node at scale block `scale_slot`, location
  // row*grid_cols+col. Scale blocks follow scales() order.
  int node_of(int scale_slot, int location) const {
    return scale_slot * num_locations() + location;
  }

  // In-neighbor rows of node i under relation r; empty when the relation has
  // no edges into i (or none at all in this graph).
  const std::vector<int>& in_neighbors(const Relation& r, int node) const;
  // Union in-neighbors over all neighbor (same-scale) or cross-scale
  // relations.
  const std::vector<int>& merged_in_neighbors(bool cross_scale, int node) const;

 private:
  int grid_rows_;
  int grid_cols_;
  GraphVariant variant_;
  std::vector<Scale> scales_;
  int num_nodes_;
  std::vector<Relation> relations_;  // slot order of per_relation_
  std::vector<std::vector<std::vector<int>>> per_relation_;
  std::vector<std::vector<int>> merged_neighbor_;
  std::vector<std::vector<int>> merged_scale_;
};

// Which group of typed relations an RGCN layer aggregates over.
enum class RelationSet : std::uint8_t { Neighbor, Scale };

// Relations a typed layer over `set` carries on a graph of the given
// topology. Single-scale graphs collapse the neighbor set to one relation;
// requesting the cross-scale set on them is an error.
std::vector<Relation> layer_relations(const GraphVariant& v, RelationSet set);

struct RgcnLayerParams {
  Matrix w_root;              // out x in
  Vector bias;                // out
  std::vector<Matrix> w_rel;  // one (out x in) per relation; one shared matrix
                              // in homogeneous mode
};

struct RgcnOptions {
  bool homogeneous = false;
  bool divide_by_incident = false;
};

// Forward intermediates of one RGCN pass, needed by its backward.
struct RgcnTrace {
  std::vector<Matrix> agg;  // per relation slot: row i = mean in-neighbor row
  Vector coeff;             // per-node factor applied to the relation sum
};

// One graph-convolution pass over node embeddings h (num_nodes x in):
//   h'_i = b + W_root h_i + c_i * sum_r W_r * mean_{j in N_r(i)} h_j
// where c_i = 1/|relation set| by default (the set's full cardinality, even
// when some relations have no in-neighbors at i) and a relation with no
// in-neighbors contributes zero. Homogeneous mode uses w_rel[0] over the
// union adjacency with c_i = 1. Throws std::invalid_argument on shape or
// relation-count mismatches.
Matrix rgcn_layer(const CompiledGraph& g, const Matrix& h,
                  const RgcnLayerParams& p, RelationSet set,
                  const RgcnOptions& opt = {}, RgcnTrace* trace = nullptr);

// Reverse pass of rgcn_layer; accumulates into dp and returns dL/dh.
Matrix rgcn_layer_backward(const CompiledGraph& g, const Matrix& h,
                           const RgcnLayerParams& p, RelationSet set,
                           const RgcnOptions& opt, const RgcnTrace& trace,
                           const Matrix& dout, RgcnLayerParams& dp);

struct ModelParams {
  std::vector<RgcnLayerParams> step1;       // 2 affine layers d->d
  std::vector<LayerNormParams> step1_norm;  // FourReLU only
  std::vector<RgcnLayerParams> step2;       // 0 or 1 layer d->d
  std::vector<LayerNormParams> step2_norm;
  std::vector<RgcnLayerParams> step3;       // d->d1, d1->d2
  std::vector<LayerNormParams> step3_norm;
  Matrix attn_v;            // L x M
  Vector attn_w;            // L
  LinearParams cls_hidden;  // hidden x M
  LinearParams cls_out;     // K x hidden
};

// Fresh parameters: Glorot-uniform weight matrices drawn from `rng` in
// declaration order, zero biases/offsets, unit gains.
ModelParams init_params(const ModelConfig& cfg, CounterRng& rng);
// All-zero parameters with the shapes the config dictates (deserialization
// target).
ModelParams zero_params(const ModelConfig& cfg);
// Same shapes, all zeros (gradient accumulators).
ModelParams zeros_like(const ModelParams& p);
// Named views over every tensor of (value, grad), in the fixed declaration
// order used by the optimizer and the model file format. Both arguments must
// have identical shapes and must outlive the returned views.
std::vector<ParamRef> param_refs(ModelParams& value, ModelParams& grad);

// One RGCN block in the trace: the affine pass plus optional norm + ReLU.
struct StepTrace {
  Matrix input;       // block input embeddings
  RgcnTrace rgcn;
  Matrix normalized;  // layer-norm cache (rows normalized before gain/offset)
  Vector inv_std;     // layer-norm cache
  Matrix output;      // block output (post-ReLU, or the affine result)
  bool normed = false;
};

struct AttentionTrace {
  Matrix hidden;   // locations x L, tanh(P V^T)
  Vector scores;   // locations
  Vector weights;  // a_k, softmax over locations
  Vector pooled;   // z = sum_k a_k h_k
};

// Ilse-style attention pooling over the rows of `rows` (locations x M):
// a = softmax(tanh(rows V^T) w), z = rows^T a.
AttentionTrace attention_pool(const Matrix& rows, const Matrix& v,
                              const Vector& w);

struct ForwardTrace {
  Matrix features;      // model input, num_nodes x d
  std::vector<StepTrace> step1;
  std::vector<StepTrace> step2;
  std::vector<StepTrace> step3;
  Matrix pooled_input;  // locations x M, per-location concatenated embeddings
  AttentionTrace attention;
  Vector cls_hidden;    // post-ReLU classifier hidden
  Vector logits;        // K
};

// Full pipeline. Steps 1-3 encode node embeddings over the graph, the
// per-location scale embeddings are concatenated, attention pooling reduces
// them to one vector, and a two-layer classifier maps it to class logits.
// Throws std::invalid_argument when the graph topology does not match the
// configured variant or the feature shape is wrong.
ForwardTrace forward(const CompiledGraph& g, const Matrix& features,
                     const ModelParams& params, const ModelConfig& cfg);

// Reverse pass of forward given dL/dlogits; accumulates parameter gradients
// into `grads` (same shapes as params) and returns dL/dfeatures. The trace
// must come from forward() with the same graph, params and config.
Matrix backward(const CompiledGraph& g, const ForwardTrace& trace,
                const ModelParams& params, const ModelConfig& cfg,
                const Vector& dlogits, ModelParams& grads);

struct AttentionHeatmap {
  int rows = 0;
  int cols = 0;
  Matrix raw;         // attention weight per grid cell; sums to 1
  Matrix normalized;  // min-max scaled to [0,1]; all zero for a flat map
};

// Attention weights arranged on the patch grid.
AttentionHeatmap heatmap(const ForwardTrace& trace, const CompiledGraph& g);

// "row,col,raw,normalized" lines with a header.
std::string heatmap_csv(const AttentionHeatmap& h);
// Binary 8-bit PGM (P5) of the normalized grid, one pixel per location.
std::string heatmap_pgm(const AttentionHeatmap& h);
// Writes CSV or PGM depending on the path suffix; throws on other suffixes.
void write_heatmap(const AttentionHeatmap& h, const std::string& path);

}  // namespace msrgcn
