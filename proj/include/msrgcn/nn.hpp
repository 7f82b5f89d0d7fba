#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msrgcn/rng.hpp"

namespace msrgcn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kLayerNormEps = 1e-5;

// Dense affine map y = W x + b, W is (out x in).
struct LinearParams {
  Matrix w;  // out x in
  Vector b;  // out
};

LinearParams glorot_linear(int out_dim, int in_dim, CounterRng& rng);
Matrix glorot_matrix(int out_dim, int in_dim, CounterRng& rng);

Vector linear(const Vector& x, const LinearParams& p);

// Backward of y = W x + b given dL/dy. Accumulates into dw/db, returns dL/dx.
Vector linear_backward(const Vector& x, const LinearParams& p, const Vector& dy,
                       Matrix& dw, Vector& db);

// Per-feature affine parameters of a layer normalization.
struct LayerNormParams {
  Vector gain;    // initialized to 1
  Vector offset;  // initialized to 0
};

LayerNormParams make_layer_norm(int dim);

// y = gain .* (x - mean) / sqrt(var + eps) + offset, statistics over the
// feature dimension, population variance.
Vector layer_norm(const Vector& x, const LayerNormParams& p);

// Row-wise layer norm over a node x feature matrix; fills the caches used by
// the backward pass (normalized rows and per-row 1/sqrt(var+eps)).
Matrix layer_norm_rows(const Matrix& x, const LayerNormParams& p,
                       Matrix* normalized = nullptr, Vector* inv_std = nullptr);

// Backward matching layer_norm_rows. Accumulates parameter gradients and
// returns dL/dx.
Matrix layer_norm_rows_backward(const Matrix& dy, const Matrix& normalized,
                                const Vector& inv_std, const LayerNormParams& p,
                                Vector& dgain, Vector& doffset);

Vector relu(const Vector& x);
Matrix relu(const Matrix& x);
// dL/dx given post-activation values.
Matrix relu_backward(const Matrix& dy, const Matrix& y);

// Numerically stable softmax; output sums to 1.
Vector softmax(const Vector& x);
// dL/dx for y = softmax(x) given dL/dy.
Vector softmax_backward(const Vector& dy, const Vector& y);

// loss = -w[label] * log softmax(logits)[label]. Also returns dloss/dlogits.
// Throws on an out-of-range label.
double weighted_cross_entropy(const Vector& logits, int label,
                              const Vector& class_weights,
                              Vector* dlogits = nullptr);

// A named view of one parameter tensor and its gradient. Tensor shape is kept
// for serialization; Adam and the gradient checker treat the data as flat.
// The model builds these lists in a fixed declaration order.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

inline ParamRef param_ref(std::string name, Matrix& v, Matrix& g) {
  return {std::move(name), v.data(), g.data(), v.rows(), v.cols()};
}
inline ParamRef param_ref(std::string name, Vector& v, Vector& g) {
  return {std::move(name), v.data(), g.data(), v.size(), 1};
}

// First/second-moment accumulators for Adam; one flat slot per parameter
// tensor in registration order.
struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  std::int64_t t = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam update over a parameter list. Lazily sizes the
// state on first use; shapes must match thereafter.
void adam_step(std::vector<ParamRef>& params, AdamState& state,
               const AdamConfig& cfg);

// Max relative error between analytic and central-difference gradients, per
// parameter tensor.
struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<Entry> entries;
  double max_rel_err = 0.0;

  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference gradient check. `loss` must be a deterministic scalar
// function of the current parameter values; `params[i].grad` holds the
// analytic gradient at the current point. Tensors larger than
// max_coords_per_tensor are subsampled deterministically (at least 64 coords).
// Throws if the loss evaluates to a non-finite value.
GradReport grad_check(std::vector<ParamRef>& params,
                      const std::function<double()>& loss, double step = 1e-5,
                      int max_coords_per_tensor = 4096);

}  // namespace msrgcn
