#include "msrgcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace msrgcn {

namespace {

const char* kVariantIds[] = {"Full",   "Single5", "Single10",
                             "Single20", "GE",      "WoSE",
                             "HomogeneousGCN", "FourReLU", "AttentionBaseline"};

}  // namespace

std::string variant_id(ModelVariant v) {
  return kVariantIds[static_cast<std::size_t>(v)];
}

ModelVariant variant_from_id(const std::string& id) {
  for (ModelVariant v : all_variants())
    if (id == variant_id(v)) return v;
  throw std::invalid_argument("unknown model variant: " + id);
}

std::vector<ModelVariant> all_variants() {
  return {ModelVariant::Full,     ModelVariant::Single5,
          ModelVariant::Single10, ModelVariant::Single20,
          ModelVariant::GE,       ModelVariant::WoSE,
          ModelVariant::HomogeneousGCN, ModelVariant::FourReLU,
          ModelVariant::AttentionBaseline};
}

GraphVariant expected_graph_variant(ModelVariant v) {
  switch (v) {
    case ModelVariant::Single5: return GraphVariant::single(Scale::S5);
    case ModelVariant::Single10: return GraphVariant::single(Scale::S10);
    case ModelVariant::Single20: return GraphVariant::single(Scale::S20);
    case ModelVariant::GE: return GraphVariant::global_edges();
    case ModelVariant::WoSE: return GraphVariant::no_scale_edges();
    default: return GraphVariant::full();
  }
}

void ModelConfig::validate() const {
  if (in_dim < 1 || d1 < 1 || d2 < 1 || attention_dim < 1 ||
      classifier_hidden < 1)
    throw std::invalid_argument("model dims must be >= 1");
  if (num_classes < 2)
    throw std::invalid_argument("num_classes must be >= 2");
}

CompiledGraph::CompiledGraph(const MultiScaleGraph& g)
    : grid_rows_(g.grid_rows()),
      grid_cols_(g.grid_cols()),
      variant_(g.variant()),
      scales_(g.scales()),
      num_nodes_(g.num_nodes()) {
  const std::size_t n = static_cast<std::size_t>(num_nodes_);
  merged_neighbor_.assign(n, {});
  merged_scale_.assign(n, {});
  for (const auto& [rel, list] : g.edges()) {
    relations_.push_back(rel);
    per_relation_.emplace_back(n);
    auto& lists = per_relation_.back();
    auto& merged = rel.is_neighbor() ? merged_neighbor_ : merged_scale_;
    for (const auto& [src, dst] : list) {
      const int i = g.node_index(dst);
      const int j = g.node_index(src);
      lists[static_cast<std::size_t>(i)].push_back(j);
      merged[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  for (auto& lists : per_relation_)
    for (auto& l : lists) std::sort(l.begin(), l.end());
  for (auto& l : merged_neighbor_) std::sort(l.begin(), l.end());
  for (auto& l : merged_scale_) std::sort(l.begin(), l.end());
}

const std::vector<int>& CompiledGraph::in_neighbors(const Relation& r,
                                                    int node) const {
  static const std::vector<int> kEmpty;
  for (std::size_t slot = 0; slot < relations_.size(); ++slot)
    if (relations_[slot] == r)
      return per_relation_[slot][static_cast<std::size_t>(node)];
  return kEmpty;
}

const std::vector<int>& CompiledGraph::merged_in_neighbors(bool cross_scale,
                                                           int node) const {
  const auto& m = cross_scale ? merged_scale_ : merged_neighbor_;
  return m[static_cast<std::size_t>(node)];
}

std::vector<Relation> layer_relations(const GraphVariant& v, RelationSet set) {
  if (set == RelationSet::Neighbor)
    return v.single_scale() ? std::vector<Relation>{single_scale_relation(v.scale)}
                            : neighbor_relations();
  if (v.single_scale())
    throw std::invalid_argument(
        "cross-scale relation set requested on a single-scale graph");
  return scale_relations();
}

namespace {

// Row i = mean of the in-neighbor rows of node i (zero when it has none).
Matrix aggregate(const Matrix& h, const CompiledGraph& g,
                 const std::vector<Relation>& rels, int slot, bool merged,
                 bool cross_scale) {
  Matrix out = Matrix::Zero(h.rows(), h.cols());
  for (int i = 0; i < g.num_nodes(); ++i) {
    const std::vector<int>& src =
        merged ? g.merged_in_neighbors(cross_scale, i)
               : g.in_neighbors(rels[static_cast<std::size_t>(slot)], i);
    if (src.empty()) continue;
    for (const int j : src) out.row(i) += h.row(j);
    out.row(i) /= static_cast<double>(src.size());
  }
  return out;
}

// Transpose of aggregate: scatter dL/d(agg) back onto dL/dh.
void aggregate_backward(const Matrix& dagg, const CompiledGraph& g,
                        const std::vector<Relation>& rels, int slot,
                        bool merged, bool cross_scale, Matrix& dh) {
  for (int i = 0; i < g.num_nodes(); ++i) {
    const std::vector<int>& src =
        merged ? g.merged_in_neighbors(cross_scale, i)
               : g.in_neighbors(rels[static_cast<std::size_t>(slot)], i);
    if (src.empty()) continue;
    const auto row = dagg.row(i) / static_cast<double>(src.size());
    for (const int j : src) dh.row(j) += row;
  }
}

void check_layer_shapes(const CompiledGraph& g, const Matrix& h,
                        const RgcnLayerParams& p, std::size_t n_rel) {
  if (h.rows() != g.num_nodes())
    throw std::invalid_argument("rgcn_layer: feature rows != graph nodes");
  if (p.w_root.cols() != h.cols())
    throw std::invalid_argument("rgcn_layer: W_root width != feature width");
  if (p.bias.size() != p.w_root.rows())
    throw std::invalid_argument("rgcn_layer: bias length != output width");
  if (p.w_rel.size() != n_rel)
    throw std::invalid_argument("rgcn_layer: relation matrix count mismatch");
  for (const Matrix& w : p.w_rel)
    if (w.rows() != p.w_root.rows() || w.cols() != p.w_root.cols())
      throw std::invalid_argument("rgcn_layer: relation matrix shape mismatch");
}

Vector relation_coeff(const CompiledGraph& g,
                      const std::vector<Relation>& rels,
                      const RgcnOptions& opt) {
  const int n = g.num_nodes();
  if (opt.homogeneous) return Vector::Ones(n);
  if (!opt.divide_by_incident)
    return Vector::Constant(n, 1.0 / static_cast<double>(rels.size()));
  Vector coeff = Vector::Ones(n);
  for (int i = 0; i < n; ++i) {
    int incident = 0;
    for (const Relation& r : rels)
      if (!g.in_neighbors(r, i).empty()) ++incident;
    if (incident > 0) coeff[i] = 1.0 / incident;
  }
  return coeff;
}

}  // namespace

Matrix rgcn_layer(const CompiledGraph& g, const Matrix& h,
                  const RgcnLayerParams& p, RelationSet set,
                  const RgcnOptions& opt, RgcnTrace* trace) {
  const std::vector<Relation> rels = layer_relations(g.variant(), set);
  const std::size_t n_slots = opt.homogeneous ? 1 : rels.size();
  check_layer_shapes(g, h, p, n_slots);
  const bool cross = set == RelationSet::Scale;

  const Vector coeff = relation_coeff(g, rels, opt);
  Matrix out = h * p.w_root.transpose();
  out.rowwise() += p.bias.transpose();

  std::vector<Matrix> agg(n_slots);
  Matrix message = Matrix::Zero(h.rows(), p.w_root.rows());
  for (std::size_t s = 0; s < n_slots; ++s) {
    agg[s] = aggregate(h, g, rels, static_cast<int>(s), opt.homogeneous, cross);
    message += agg[s] * p.w_rel[s].transpose();
  }
  out += coeff.asDiagonal() * message;

  if (trace != nullptr) {
    trace->agg = std::move(agg);
    trace->coeff = coeff;
  }
  return out;
}

Matrix rgcn_layer_backward(const CompiledGraph& g, const Matrix& h,
                           const RgcnLayerParams& p, RelationSet set,
                           const RgcnOptions& opt, const RgcnTrace& trace,
                           const Matrix& dout, RgcnLayerParams& dp) {
  const std::vector<Relation> rels = layer_relations(g.variant(), set);
  const std::size_t n_slots = opt.homogeneous ? 1 : rels.size();
  check_layer_shapes(g, h, p, n_slots);
  if (trace.agg.size() != n_slots)
    throw std::invalid_argument("rgcn_layer_backward: trace relation count mismatch");
  const bool cross = set == RelationSet::Scale;

  dp.w_root += dout.transpose() * h;
  dp.bias += dout.colwise().sum().transpose();
  Matrix dh = dout * p.w_root;

  const Matrix scaled = trace.coeff.asDiagonal() * dout;
  for (std::size_t s = 0; s < n_slots; ++s) {
    dp.w_rel[s] += scaled.transpose() * trace.agg[s];
    const Matrix dagg = scaled * p.w_rel[s];
    aggregate_backward(dagg, g, rels, static_cast<int>(s), opt.homogeneous,
                       cross, dh);
  }
  return dh;
}

namespace {

Matrix glorot_or_zero(int out, int in, CounterRng* rng) {
  return rng != nullptr ? glorot_matrix(out, in, *rng) : Matrix::Zero(out, in);
}

LayerNormParams norm_or_zero(int dim, CounterRng* rng) {
  return rng != nullptr ? make_layer_norm(dim)
                        : LayerNormParams{Vector::Zero(dim), Vector::Zero(dim)};
}

RgcnLayerParams init_rgcn(int out, int in, std::size_t n_rel, CounterRng* rng) {
  RgcnLayerParams p;
  p.w_root = glorot_or_zero(out, in, rng);
  p.bias = Vector::Zero(out);
  p.w_rel.reserve(n_rel);
  for (std::size_t r = 0; r < n_rel; ++r)
    p.w_rel.push_back(glorot_or_zero(out, in, rng));
  return p;
}

RgcnLayerParams zeros_rgcn(const RgcnLayerParams& p) {
  RgcnLayerParams z;
  z.w_root = Matrix::Zero(p.w_root.rows(), p.w_root.cols());
  z.bias = Vector::Zero(p.bias.size());
  for (const Matrix& w : p.w_rel) z.w_rel.push_back(Matrix::Zero(w.rows(), w.cols()));
  return z;
}

LayerNormParams zeros_norm(const LayerNormParams& p) {
  return {Vector::Zero(p.gain.size()), Vector::Zero(p.offset.size())};
}

}  // namespace

namespace {

ModelParams build_params(const ModelConfig& cfg, CounterRng* rng) {
  cfg.validate();
  ModelParams p;
  if (cfg.has_encoder()) {
    const std::size_t n_neighbor =
        cfg.homogeneous() || cfg.single_scale() ? 1 : 3;
    const std::size_t n_scale = cfg.homogeneous() ? 1 : 6;
    const int d = cfg.in_dim;
    for (int i = 0; i < 2; ++i) p.step1.push_back(init_rgcn(d, d, n_neighbor, rng));
    if (cfg.variant == ModelVariant::FourReLU)
      for (int i = 0; i < 2; ++i) p.step1_norm.push_back(norm_or_zero(d, rng));
    if (cfg.has_step2()) {
      p.step2.push_back(init_rgcn(d, d, n_scale, rng));
      p.step2_norm.push_back(norm_or_zero(d, rng));
    }
    p.step3.push_back(init_rgcn(cfg.d1, d, n_neighbor, rng));
    p.step3.push_back(init_rgcn(cfg.d2, cfg.d1, n_neighbor, rng));
    p.step3_norm.push_back(norm_or_zero(cfg.d1, rng));
    p.step3_norm.push_back(norm_or_zero(cfg.d2, rng));
  }
  const int m = cfg.pooled_dim();
  p.attn_v = glorot_or_zero(cfg.attention_dim, m, rng);
  p.attn_w = glorot_or_zero(1, cfg.attention_dim, rng).row(0).transpose();
  p.cls_hidden.w = glorot_or_zero(cfg.classifier_hidden, m, rng);
  p.cls_hidden.b = Vector::Zero(cfg.classifier_hidden);
  p.cls_out.w = glorot_or_zero(cfg.num_classes, cfg.classifier_hidden, rng);
  p.cls_out.b = Vector::Zero(cfg.num_classes);
  return p;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, CounterRng& rng) {
  return build_params(cfg, &rng);
}

ModelParams zero_params(const ModelConfig& cfg) {
  return build_params(cfg, nullptr);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  for (const auto& l : p.step1) z.step1.push_back(zeros_rgcn(l));
  for (const auto& n : p.step1_norm) z.step1_norm.push_back(zeros_norm(n));
  for (const auto& l : p.step2) z.step2.push_back(zeros_rgcn(l));
  for (const auto& n : p.step2_norm) z.step2_norm.push_back(zeros_norm(n));
  for (const auto& l : p.step3) z.step3.push_back(zeros_rgcn(l));
  for (const auto& n : p.step3_norm) z.step3_norm.push_back(zeros_norm(n));
  z.attn_v = Matrix::Zero(p.attn_v.rows(), p.attn_v.cols());
  z.attn_w = Vector::Zero(p.attn_w.size());
  z.cls_hidden.w = Matrix::Zero(p.cls_hidden.w.rows(), p.cls_hidden.w.cols());
  z.cls_hidden.b = Vector::Zero(p.cls_hidden.b.size());
  z.cls_out.w = Matrix::Zero(p.cls_out.w.rows(), p.cls_out.w.cols());
  z.cls_out.b = Vector::Zero(p.cls_out.b.size());
  return z;
}

namespace {

void layer_refs(const std::string& prefix, RgcnLayerParams& v,
                RgcnLayerParams& g, std::vector<ParamRef>& out) {
  if (v.w_rel.size() != g.w_rel.size())
    throw std::invalid_argument("param_refs: relation count mismatch at " + prefix);
  out.push_back(param_ref(prefix + ".w_root", v.w_root, g.w_root));
  out.push_back(param_ref(prefix + ".bias", v.bias, g.bias));
  for (std::size_t r = 0; r < v.w_rel.size(); ++r)
    out.push_back(param_ref(prefix + ".w_rel." + std::to_string(r), v.w_rel[r],
                            g.w_rel[r]));
}

void norm_refs(const std::string& prefix, LayerNormParams& v,
               LayerNormParams& g, std::vector<ParamRef>& out) {
  out.push_back(param_ref(prefix + ".gain", v.gain, g.gain));
  out.push_back(param_ref(prefix + ".offset", v.offset, g.offset));
}

}  // namespace

std::vector<ParamRef> param_refs(ModelParams& value, ModelParams& grad) {
  if (value.step1.size() != grad.step1.size() ||
      value.step1_norm.size() != grad.step1_norm.size() ||
      value.step2.size() != grad.step2.size() ||
      value.step2_norm.size() != grad.step2_norm.size() ||
      value.step3.size() != grad.step3.size() ||
      value.step3_norm.size() != grad.step3_norm.size())
    throw std::invalid_argument("param_refs: layer count mismatch");

  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < value.step1.size(); ++i)
    layer_refs("step1." + std::to_string(i), value.step1[i], grad.step1[i], refs);
  for (std::size_t i = 0; i < value.step1_norm.size(); ++i)
    norm_refs("step1_norm." + std::to_string(i), value.step1_norm[i],
              grad.step1_norm[i], refs);
  for (std::size_t i = 0; i < value.step2.size(); ++i)
    layer_refs("step2." + std::to_string(i), value.step2[i], grad.step2[i], refs);
  for (std::size_t i = 0; i < value.step2_norm.size(); ++i)
    norm_refs("step2_norm." + std::to_string(i), value.step2_norm[i],
              grad.step2_norm[i], refs);
  for (std::size_t i = 0; i < value.step3.size(); ++i)
    layer_refs("step3." + std::to_string(i), value.step3[i], grad.step3[i], refs);
  for (std::size_t i = 0; i < value.step3_norm.size(); ++i)
    norm_refs("step3_norm." + std::to_string(i), value.step3_norm[i],
              grad.step3_norm[i], refs);
  refs.push_back(param_ref("attention.v", value.attn_v, grad.attn_v));
  refs.push_back(param_ref("attention.w", value.attn_w, grad.attn_w));
  refs.push_back(param_ref("classifier.hidden.w", value.cls_hidden.w,
                           grad.cls_hidden.w));
  refs.push_back(param_ref("classifier.hidden.b", value.cls_hidden.b,
                           grad.cls_hidden.b));
  refs.push_back(param_ref("classifier.out.w", value.cls_out.w, grad.cls_out.w));
  refs.push_back(param_ref("classifier.out.b", value.cls_out.b, grad.cls_out.b));
  return refs;
}

AttentionTrace attention_pool(const Matrix& rows, const Matrix& v,
                              const Vector& w) {
  if (v.cols() != rows.cols())
    throw std::invalid_argument("attention_pool: V width != row width");
  if (w.size() != v.rows())
    throw std::invalid_argument("attention_pool: w length != V rows");
  AttentionTrace t;
  t.hidden = (rows * v.transpose()).array().tanh();
  t.scores = t.hidden * w;
  t.weights = softmax(t.scores);
  t.pooled = rows.transpose() * t.weights;
  return t;
}

namespace {

// Runs one RGCN block: affine pass, then optionally layer-norm + ReLU.
Matrix run_block(const CompiledGraph& g, const Matrix& h,
                 const RgcnLayerParams& p, const LayerNormParams* norm,
                 RelationSet set, const RgcnOptions& opt, StepTrace& st) {
  st.input = h;
  Matrix out = rgcn_layer(g, h, p, set, opt, &st.rgcn);
  if (norm != nullptr) {
    out = layer_norm_rows(out, *norm, &st.normalized, &st.inv_std);
    out = relu(out);
    st.normed = true;
  }
  st.output = out;
  return out;
}

Matrix block_backward(const CompiledGraph& g, const StepTrace& st,
                      const RgcnLayerParams& p, const LayerNormParams* norm,
                      RelationSet set, const RgcnOptions& opt, Matrix dout,
                      RgcnLayerParams& dp, LayerNormParams* dnorm) {
  if (st.normed) {
    dout = relu_backward(dout, st.output);
    dout = layer_norm_rows_backward(dout, st.normalized, st.inv_std, *norm,
                                    dnorm->gain, dnorm->offset);
  }
  return rgcn_layer_backward(g, st.input, p, set, opt, st.rgcn, dout, dp);
}

}  // namespace

ForwardTrace forward(const CompiledGraph& g, const Matrix& features,
                     const ModelParams& params, const ModelConfig& cfg) {
  cfg.validate();
  if (g.variant() != expected_graph_variant(cfg.variant))
    throw std::invalid_argument("variant " + variant_id(cfg.variant) +
                                " expects graph " +
                                variant_name(expected_graph_variant(cfg.variant)) +
                                ", got " + variant_name(g.variant()));
  if (features.rows() != g.num_nodes() || features.cols() != cfg.in_dim)
    throw std::invalid_argument("forward: feature matrix must be num_nodes x in_dim");

  const RgcnOptions opt{cfg.homogeneous(), cfg.divide_by_incident};
  ForwardTrace t;
  t.features = features;

  Matrix h = features;
  if (cfg.has_encoder()) {
    t.step1.resize(2);
    for (int i = 0; i < 2; ++i) {
      const LayerNormParams* norm =
          cfg.variant == ModelVariant::FourReLU ? &params.step1_norm[i] : nullptr;
      h = run_block(g, h, params.step1[i], norm, RelationSet::Neighbor, opt,
                    t.step1[static_cast<std::size_t>(i)]);
    }
    if (cfg.has_step2()) {
      t.step2.resize(1);
      h = run_block(g, h, params.step2[0], &params.step2_norm[0],
                    RelationSet::Scale, opt, t.step2[0]);
    }
    t.step3.resize(2);
    for (int i = 0; i < 2; ++i)
      h = run_block(g, h, params.step3[i], &params.step3_norm[i],
                    RelationSet::Neighbor, opt,
                    t.step3[static_cast<std::size_t>(i)]);
  }

  // Concatenate the per-location embeddings of each scale into one row per
  // grid location.
  const Matrix& source = cfg.has_encoder() ? h : features;
  const int width = static_cast<int>(source.cols());
  const int n_scales = static_cast<int>(g.scales().size());
  if (n_scales != cfg.scales_per_location())
    throw std::invalid_argument("forward: graph scale count does not match variant");
  t.pooled_input = Matrix::Zero(g.num_locations(), cfg.pooled_dim());
  for (int loc = 0; loc < g.num_locations(); ++loc)
    for (int s = 0; s < n_scales; ++s)
      t.pooled_input.row(loc).segment(s * width, width) =
          source.row(g.node_of(s, loc));

  t.attention = attention_pool(t.pooled_input, params.attn_v, params.attn_w);
  const Vector hidden_pre = params.cls_hidden.w * t.attention.pooled +
                            params.cls_hidden.b;
  t.cls_hidden = relu(hidden_pre);
  t.logits = params.cls_out.w * t.cls_hidden + params.cls_out.b;
  return t;
}

Matrix backward(const CompiledGraph& g, const ForwardTrace& trace,
                const ModelParams& params, const ModelConfig& cfg,
                const Vector& dlogits, ModelParams& grads) {
  if (dlogits.size() != cfg.num_classes)
    throw std::invalid_argument("backward: dlogits length != num_classes");
  const RgcnOptions opt{cfg.homogeneous(), cfg.divide_by_incident};

  // Classifier.
  grads.cls_out.w += dlogits * trace.cls_hidden.transpose();
  grads.cls_out.b += dlogits;
  Vector dhidden = params.cls_out.w.transpose() * dlogits;
  dhidden = (trace.cls_hidden.array() > 0.0).select(dhidden, 0.0);
  grads.cls_hidden.w += dhidden * trace.attention.pooled.transpose();
  grads.cls_hidden.b += dhidden;
  Vector dz = params.cls_hidden.w.transpose() * dhidden;

  // Attention pooling: z = P^T a, a = softmax(s), s = tanh(P V^T) w.
  const Matrix& pooled = trace.pooled_input;
  const AttentionTrace& at = trace.attention;
  Matrix dpooled = at.weights * dz.transpose();
  const Vector da = pooled * dz;
  const Vector dscores = softmax_backward(da, at.weights);
  grads.attn_w += at.hidden.transpose() * dscores;
  Matrix dtanh_in = dscores * params.attn_w.transpose();
  dtanh_in.array() *= 1.0 - at.hidden.array().square();
  grads.attn_v += dtanh_in.transpose() * pooled;
  dpooled += dtanh_in * params.attn_v;

  // Undo the per-location concatenation.
  const int width = cfg.has_encoder() ? cfg.d2 : cfg.in_dim;
  const int n_scales = static_cast<int>(g.scales().size());
  Matrix dh = Matrix::Zero(g.num_nodes(), width);
  for (int loc = 0; loc < g.num_locations(); ++loc)
    for (int s = 0; s < n_scales; ++s)
      dh.row(g.node_of(s, loc)) += dpooled.row(loc).segment(s * width, width);

  if (!cfg.has_encoder()) return dh;

  for (int i = 1; i >= 0; --i)
    dh = block_backward(g, trace.step3[static_cast<std::size_t>(i)],
                        params.step3[i], &params.step3_norm[i],
                        RelationSet::Neighbor, opt, dh, grads.step3[i],
                        &grads.step3_norm[i]);
  if (cfg.has_step2())
    dh = block_backward(g, trace.step2[0], params.step2[0],
                        &params.step2_norm[0], RelationSet::Scale, opt, dh,
                        grads.step2[0], &grads.step2_norm[0]);
  for (int i = 1; i >= 0; --i) {
    const bool four_relu = cfg.variant == ModelVariant::FourReLU;
    dh = block_backward(g, trace.step1[static_cast<std::size_t>(i)],
                        params.step1[i],
                        four_relu ? &params.step1_norm[i] : nullptr,
                        RelationSet::Neighbor, opt, dh, grads.step1[i],
                        four_relu ? &grads.step1_norm[i] : nullptr);
  }
  return dh;
}

AttentionHeatmap heatmap(const ForwardTrace& trace, const CompiledGraph& g) {
  AttentionHeatmap h;
  h.rows = g.grid_rows();
  h.cols = g.grid_cols();
  h.raw = Matrix::Zero(h.rows, h.cols);
  for (int loc = 0; loc < g.num_locations(); ++loc)
    h.raw(loc / h.cols, loc % h.cols) = trace.attention.weights[loc];
  const double lo = h.raw.minCoeff();
  const double hi = h.raw.maxCoeff();
  if (hi > lo)
    h.normalized = ((h.raw.array() - lo) / (hi - lo)).matrix();
  else
    h.normalized = Matrix::Zero(h.rows, h.cols);
  return h;
}

std::string heatmap_csv(const AttentionHeatmap& h) {
  std::string out = "row,col,raw,normalized\n";
  char line[128];
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c) {
      std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g\n", r, c, h.raw(r, c),
                    h.normalized(r, c));
      out += line;
    }
  return out;
}

std::string heatmap_pgm(const AttentionHeatmap& h) {
  std::string out = "P5\n" + std::to_string(h.cols) + " " +
                    std::to_string(h.rows) + "\n255\n";
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c)
      out.push_back(static_cast<char>(
          static_cast<unsigned char>(std::lround(h.normalized(r, c) * 255.0))));
  return out;
}

void write_heatmap(const AttentionHeatmap& h, const std::string& path) {
  std::string body;
  if (path.ends_with(".csv")) body = heatmap_csv(h);
  else if (path.ends_with(".pgm")) body = heatmap_pgm(h);
  else
    throw std::invalid_argument("heatmap output must end in .csv or .pgm: " + path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace msrgcn
