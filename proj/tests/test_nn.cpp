#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "msrgcn/nn.hpp"
#include "msrgcn/rng.hpp"

using namespace msrgcn;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Matrix random_matrix(int rows, int cols, CounterRng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
  return m;
}

}  // namespace

TEST_CASE("linear forward") {
  LinearParams id{Matrix::Identity(2, 2), Vector::Zero(2)};
  CHECK(linear(vec({1, 2}), id) == vec({1, 2}));

  LinearParams p{Matrix::Zero(2, 2), vec({1, 1})};
  p.w(0, 0) = 2;
  p.w(1, 1) = 3;
  const Vector y = linear(vec({1, 1}), p);
  CHECK(y[0] == doctest::Approx(3).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(4).epsilon(1e-15));

  CHECK_THROWS(linear(vec({1, 2, 3}), p));
}

TEST_CASE("linear backward equals outer(u, x) for the weight") {
  CounterRng rng(11, stream::kTest);
  LinearParams p{random_matrix(3, 4, rng), Vector::Zero(3)};
  for (int i = 0; i < 3; ++i) p.b[i] = rng.next_gaussian();
  Vector x(4), u(3);
  for (int i = 0; i < 4; ++i) x[i] = rng.next_gaussian();
  for (int i = 0; i < 3; ++i) u[i] = rng.next_gaussian();

  Matrix dw = Matrix::Zero(3, 4);
  Vector db = Vector::Zero(3);
  const Vector dx = linear_backward(x, p, u, dw, db);

  CHECK((dw - u * x.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((db - u).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((dx - p.w.transpose() * u).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("layer norm forward") {
  const LayerNormParams p = make_layer_norm(4);

  const Vector constant = layer_norm(vec({3, 3, 3, 3}), p);
  CHECK(constant.cwiseAbs().maxCoeff() < 1e-9);

  const LayerNormParams p2 = make_layer_norm(2);
  const Vector y = layer_norm(vec({1, -1}), p2);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-4));

  // Non-constant input, unit gain: mean ~0 and population variance ~1. The
  // input is scaled up so the eps regularizer perturbs the variance by < 1e-6.
  CounterRng rng(3, stream::kTest);
  const LayerNormParams p8 = make_layer_norm(8);
  Vector x(8);
  for (int i = 0; i < 8; ++i) x[i] = 10.0 * rng.next_gaussian();
  const Vector z = layer_norm(x, p8);
  CHECK(std::abs(z.mean()) < 1e-10);
  const double var = (z.array() - z.mean()).square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm gradients match central differences") {
  CounterRng rng(5, stream::kTest);
  const int rows = 3, dim = 6;
  Matrix x = random_matrix(rows, dim, rng);
  LayerNormParams p = make_layer_norm(dim);
  for (int i = 0; i < dim; ++i) p.gain[i] = 1.0 + 0.1 * rng.next_gaussian();
  for (int i = 0; i < dim; ++i) p.offset[i] = 0.1 * rng.next_gaussian();
  const Matrix u = random_matrix(rows, dim, rng);  // fixed projection

  Matrix dx = Matrix::Zero(rows, dim);
  Vector dgain = Vector::Zero(dim);
  Vector doffset = Vector::Zero(dim);
  {
    Matrix normalized;
    Vector inv_std;
    layer_norm_rows(x, p, &normalized, &inv_std);
    dx = layer_norm_rows_backward(u, normalized, inv_std, p, dgain, doffset);
  }

  std::vector<ParamRef> refs = {param_ref("x", x, dx),
                                param_ref("gain", p.gain, dgain),
                                param_ref("offset", p.offset, doffset)};
  const auto loss = [&] { return (layer_norm_rows(x, p).array() * u.array()).sum(); };
  const GradReport report = grad_check(refs, loss, 1e-5);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("relu") {
  CHECK(relu(vec({-1, 0, 2})) == vec({0, 0, 2}));
  Matrix m(2, 2);
  m << -3, 4, 0.5, -0.1;
  const Matrix y = relu(m);
  CHECK(y(0, 0) == 0);
  CHECK(y(0, 1) == 4);
  CHECK(y(1, 0) == 0.5);
  CHECK(y(1, 1) == 0);

  Matrix dy(2, 2);
  dy << 1, 1, 1, 1;
  const Matrix dx = relu_backward(dy, y);
  CHECK(dx(0, 0) == 0);
  CHECK(dx(0, 1) == 1);
  CHECK(dx(1, 0) == 1);
  CHECK(dx(1, 1) == 0);
}

TEST_CASE("softmax") {
  const Vector uniform = softmax(vec({2, 2, 2}));
  for (int i = 0; i < 3; ++i)
    CHECK(uniform[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));

  const Vector y = softmax(vec({0, std::log(3.0)}));
  CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-14));

  // Stability under large inputs; outputs stay in (0,1] and sum to 1.
  const Vector big = softmax(vec({1000, 1001, 999}));
  CHECK(std::abs(big.sum() - 1.0) < 1e-12);
  for (int i = 0; i < 3; ++i) {
    CHECK(big[i] > 0.0);
    CHECK(big[i] <= 1.0);
  }
}

TEST_CASE("softmax backward matches central differences") {
  CounterRng rng(9, stream::kTest);
  Vector x(5), u(5);
  for (int i = 0; i < 5; ++i) x[i] = rng.next_gaussian();
  for (int i = 0; i < 5; ++i) u[i] = rng.next_gaussian();

  Vector dx = softmax_backward(u, softmax(x));
  std::vector<ParamRef> refs = {param_ref("x", x, dx)};
  const auto loss = [&] { return softmax(x).dot(u); };
  CHECK(grad_check(refs, loss, 1e-6).max_rel_err < 1e-6);
}

TEST_CASE("weighted cross entropy") {
  const Vector ones = Vector::Ones(6);
  CHECK(weighted_cross_entropy(Vector::Zero(6), 2, ones) ==
        doctest::Approx(std::log(6.0)).epsilon(1e-14));

  Vector hot = Vector::Zero(6);
  hot[4] = 10.0;
  CHECK(weighted_cross_entropy(hot, 4, ones) < 1e-3);

  Vector w = ones;
  w[1] = 2.0;
  Vector logits = vec({0.3, -0.2, 0.9, 0.1, -1.0, 0.4});
  CHECK(weighted_cross_entropy(logits, 1, w) ==
        doctest::Approx(2.0 * weighted_cross_entropy(logits, 1, ones))
            .epsilon(1e-14));

  CHECK_THROWS(weighted_cross_entropy(logits, 6, ones));
  CHECK_THROWS(weighted_cross_entropy(logits, -1, ones));
}

TEST_CASE("weighted cross entropy gradient matches central differences") {
  CounterRng rng(13, stream::kTest);
  Vector logits(6);
  for (int i = 0; i < 6; ++i) logits[i] = rng.next_gaussian();
  Vector w(6);
  for (int i = 0; i < 6; ++i) w[i] = 0.5 + 0.25 * i;

  Vector dlogits;
  weighted_cross_entropy(logits, 3, w, &dlogits);
  std::vector<ParamRef> refs = {param_ref("logits", logits, dlogits)};
  const auto loss = [&] { return weighted_cross_entropy(logits, 3, w); };
  CHECK(grad_check(refs, loss, 1e-5).max_rel_err < 1e-6);
}

TEST_CASE("adam first step and monotone descent") {
  Matrix p(1, 1);
  p(0, 0) = 0.0;
  Matrix g(1, 1);
  g(0, 0) = 1.0;
  std::vector<ParamRef> refs = {param_ref("p", p, g)};
  AdamState state;
  const AdamConfig cfg;

  adam_step(refs, state, cfg);
  // Bias correction makes m_hat/sqrt(v_hat) = 1 at t=1, up to eps.
  CHECK(p(0, 0) == doctest::Approx(-cfg.lr).epsilon(1e-6));
  CHECK(state.t == 1);

  double prev = p(0, 0);
  for (int i = 0; i < 5; ++i) {
    g(0, 0) = 1.0;
    adam_step(refs, state, cfg);
    CHECK(p(0, 0) < prev);
    prev = p(0, 0);
  }
}

TEST_CASE("adam with zero gradients is a no-op on parameters") {
  CounterRng rng(17, stream::kTest);
  Matrix p = random_matrix(3, 2, rng);
  const Matrix before = p;
  Matrix g = Matrix::Zero(3, 2);
  std::vector<ParamRef> refs = {param_ref("p", p, g)};
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(refs, state, AdamConfig{});
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
  Vector p = vec({1, 2});
  Vector g = 2.0 * p;
  std::vector<ParamRef> refs = {param_ref("p", p, g)};
  const auto loss = [&] { return p.squaredNorm(); };
  CHECK(grad_check(refs, loss).max_rel_err < 1e-8);
}

TEST_CASE("grad_check flags a corrupted gradient") {
  Vector p = vec({1, 2});
  Vector g = 2.0 * p * 1.01;  // deliberately 1% off
  std::vector<ParamRef> refs = {param_ref("p", p, g)};
  const auto loss = [&] { return p.squaredNorm(); };
  CHECK_FALSE(grad_check(refs, loss).pass(1e-4));
}

TEST_CASE("glorot initialization respects the fan bound") {
  CounterRng rng(21, stream::kTest);
  const int out = 7, in = 13;
  const Matrix w = glorot_matrix(out, in, rng);
  const double bound = std::sqrt(6.0 / (out + in));
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.0);

  const LinearParams p = glorot_linear(out, in, rng);
  CHECK(p.b.cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.w.rows() == out);
  CHECK(p.w.cols() == in);
}
