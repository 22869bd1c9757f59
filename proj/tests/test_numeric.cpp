#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "pacm/numeric.hpp"
#include "support.hpp"

using namespace pacm;
using pacm::testing::random_matrix;
using pacm::testing::relative_error;

namespace {

MlpParams single_linear(const Matrix& w, const Vector& b) {
  MlpParams p;
  p.layer_dims = {static_cast<int>(w.cols()), static_cast<int>(w.rows())};
  p.weights = {w};
  p.biases = {b};
  p.activation = Activation::identity;
  return p;
}

double leaky(double v) { return v > 0.0 ? v : 0.01 * v; }

// Straight-line recomputation of a no-batch-norm MLP, one scalar at a time.
Matrix reference_forward(const MlpParams& p, const Matrix& x) {
  Matrix cur = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Matrix& w = p.weights[l];
    Matrix next(cur.rows(), w.rows());
    for (Eigen::Index r = 0; r < cur.rows(); ++r)
      for (Eigen::Index o = 0; o < w.rows(); ++o) {
        double acc = p.biases[l][o];
        for (Eigen::Index i = 0; i < w.cols(); ++i) acc += w(o, i) * cur(r, i);
        const bool hidden = l + 1 < p.weights.size();
        next(r, o) = hidden && p.activation == Activation::leaky_relu ? leaky(acc) : acc;
      }
    cur = next;
  }
  return cur;
}

// Scalar loss sum(out .* weights) so upstream gradient equals `probe`.
double probe_loss(const MlpParams& p, const Matrix& x, const Matrix& probe,
                  Mode mode) {
  return (mlp_forward(p, x, mode).output.array() * probe.array()).sum();
}

double worst_param_error(MlpParams& p, const Matrix& x, const Matrix& probe,
                         Mode mode, int* skipped = nullptr) {
  const auto fwd = mlp_forward(p, x, mode);
  const auto back = mlp_backward(p, fwd.cache, probe);
  auto blocks = trainable_blocks(p);
  const auto grads = gradient_blocks(back.params);
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].size(); ++i) {
      double& v = blocks[b][i];
      const double saved = v;
      v = saved + h;
      const auto plus = mlp_forward(p, x, mode);
      v = saved - h;
      const auto minus = mlp_forward(p, x, mode);
      v = saved;
      if (kink_signature(plus.cache) != kink_signature(minus.cache)) {
        if (skipped) ++*skipped;
        continue;
      }
      const double numeric =
          ((plus.output.array() - minus.output.array()) * probe.array()).sum() / (2 * h);
      worst = std::max(worst, relative_error(grads[b][i], numeric));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp_forward: identity layer passes input through") {
  const auto p = single_linear(Matrix::Identity(3, 3), Vector::Zero(3));
  Matrix x(1, 3);
  x << 1, 2, 3;
  const auto out = mlp_forward(p, x).output;
  CHECK(out == x);
}

TEST_CASE("mlp_forward: zero input with zero biases gives zero output") {
  std::mt19937_64 rng(3);
  const int dims[] = {4, 6, 2};
  auto p = make_mlp(dims, Activation::identity, false, rng);
  const auto out = mlp_forward(p, Matrix::Zero(5, 4)).output;
  CHECK(out.isZero(0.0));
}

TEST_CASE("mlp_forward: matches straight-line recomputation") {
  std::mt19937_64 rng(11);
  const int dims[] = {5, 7, 3};
  auto p = make_mlp(dims, Activation::leaky_relu, false, rng);
  for (auto& b : p.biases) b = random_matrix(b.size(), 1, rng);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix got = mlp_forward(p, x).output;
  const Matrix want = reference_forward(p, x);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("mlp_forward: rejects wrong input width") {
  std::mt19937_64 rng(1);
  const int dims[] = {3, 2};
  auto p = make_mlp(dims, Activation::identity, false, rng);
  CHECK_THROWS_AS(mlp_forward(p, Matrix::Zero(2, 4)), DimensionError);
}

TEST_CASE("mlp_backward: zero upstream gives zero gradients") {
  std::mt19937_64 rng(5);
  const int dims[] = {3, 4, 2};
  auto p = make_mlp(dims, Activation::leaky_relu, true, rng);
  const auto fwd = mlp_forward(p, random_matrix(6, 3, rng));
  const auto back = mlp_backward(p, fwd.cache, Matrix::Zero(6, 2));
  for (auto g : gradient_blocks(back.params))
    for (double v : g) CHECK(v == 0.0);
  CHECK(back.input.isZero(0.0));
}

TEST_CASE("mlp_backward: scalar chain rule for y = w x") {
  Matrix w(1, 1);
  w << 2.5;
  const auto p = single_linear(w, Vector::Zero(1));
  Matrix x(1, 1);
  x << -1.5;
  const auto fwd = mlp_forward(p, x);
  const auto back = mlp_backward(p, fwd.cache, Matrix::Ones(1, 1));
  CHECK(back.params.weights[0](0, 0) == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(back.params.biases[0](0) == doctest::Approx(1.0));
  CHECK(back.input(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("mlp_backward: matches finite differences on seeded 2-layer nets") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const int dims[] = {4, 6, 3};
    auto p = make_mlp(dims, Activation::leaky_relu, false, rng);
    for (auto& b : p.biases) b = random_matrix(b.size(), 1, rng, 0.1);
    const Matrix x = random_matrix(5, 4, rng);
    const Matrix probe = random_matrix(5, 3, rng);
    CHECK(worst_param_error(p, x, probe, Mode::train) < 1e-5);
  }
}

TEST_CASE("mlp_backward: input gradient matches finite differences") {
  std::mt19937_64 rng(21);
  const int dims[] = {4, 6, 5, 3};
  auto p = make_mlp(dims, Activation::leaky_relu, true, rng);
  Matrix x = random_matrix(7, 4, rng);
  const Matrix probe = random_matrix(7, 3, rng);
  for (Mode mode : {Mode::train, Mode::eval}) {
    const auto fwd = mlp_forward(p, x, mode);
    const auto back = mlp_backward(p, fwd.cache, probe);
    const double worst = pacm::testing::worst_matrix_error(
        x, back.input, [&] { return probe_loss(p, x, probe, mode); });
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("mlp_backward: batch-norm parameters in both modes") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(40 + seed);
    const int dims[] = {5, 8, 6, 2};
    auto p = make_mlp(dims, Activation::leaky_relu, true, rng);
    for (auto& bn : p.norm) {
      bn.gamma = (random_matrix(bn.gamma.size(), 1, rng, 0.2).array() + 1.0).matrix();
      bn.beta = random_matrix(bn.beta.size(), 1, rng, 0.2);
      bn.running_mean = random_matrix(bn.beta.size(), 1, rng, 0.3);
      bn.running_var = (random_matrix(bn.beta.size(), 1, rng, 0.3).array().abs() + 0.5).matrix();
    }
    const Matrix x = random_matrix(9, 5, rng);
    const Matrix probe = random_matrix(9, 2, rng);
    CHECK(worst_param_error(p, x, probe, Mode::train) < 1e-5);
    CHECK(worst_param_error(p, x, probe, Mode::eval) < 1e-5);
  }
}

TEST_CASE("mlp_backward: stale or foreign caches are rejected") {
  std::mt19937_64 rng(8);
  const int dims[] = {3, 4, 2};
  auto p = make_mlp(dims, Activation::leaky_relu, false, rng);
  const auto fwd = mlp_forward(p, random_matrix(2, 3, rng));
  auto opt = make_optimizer(p, 0.1, 0.0, 0.0);
  sgd_step(p, MlpGradients::zeros_like(p), opt);
  CHECK_THROWS_AS(mlp_backward(p, fwd.cache, Matrix::Zero(2, 2)), UsageError);

  const int other_dims[] = {3, 5, 2};
  auto q = make_mlp(other_dims, Activation::leaky_relu, false, rng);
  CHECK_THROWS_AS(mlp_backward(q, fwd.cache, Matrix::Zero(2, 2)), UsageError);
}

TEST_CASE("commit_batch_statistics blends running averages") {
  std::mt19937_64 rng(9);
  const int dims[] = {3, 4, 1};
  auto p = make_mlp(dims, Activation::leaky_relu, true, rng);
  const auto fwd = mlp_forward(p, random_matrix(10, 3, rng));
  commit_batch_statistics(p, fwd.cache);
  const auto& lc = fwd.cache.layers[0];
  CHECK((p.norm[0].running_mean - 0.1 * lc.batch_mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((p.norm[0].running_var - (0.9 * Vector::Ones(4) + 0.1 * lc.batch_var))
            .cwiseAbs()
            .maxCoeff() < 1e-15);
}

TEST_CASE("l2_normalize: 3-4-5 triangle") {
  Vector v(2);
  v << 3, 4;
  const Vector u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("l2_normalize: unit input is a fixed point, radial gradient vanishes") {
  Vector v(3);
  v << 0.0, 0.6, 0.8;
  CHECK((l2_normalize(v) - v).norm() < 1e-15);
  const Vector g = l2_normalize_backward(v, 3.0 * v);
  CHECK(g.norm() < 1e-15);
}

TEST_CASE("l2_normalize: backward matches finite differences") {
  std::mt19937_64 rng(12);
  Matrix v = random_matrix(4, 6, rng, 2.0);
  const Matrix probe = random_matrix(4, 6, rng);
  const auto fwd = l2_normalize_rows(v);
  const Matrix analytic = l2_normalize_backward(fwd, probe);
  const double worst = pacm::testing::worst_matrix_error(v, analytic, [&] {
    return (l2_normalize_rows(v).unit.array() * probe.array()).sum();
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("l2_normalize: unit norm across twelve orders of magnitude") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> exponent(-6.0, 6.0);
  for (int trial = 0; trial < 2000; ++trial) {
    Matrix v = pacm::testing::random_unit_rows(1, 8, rng);
    v *= std::pow(10.0, exponent(rng));
    const auto out = l2_normalize_rows(v);
    CHECK(std::abs(out.unit.row(0).norm() - 1.0) <= 1e-9);
  }
}

TEST_CASE("l2_normalize: degenerate input is rejected") {
  CHECK_THROWS_AS(l2_normalize(Vector::Zero(4)), DegenerateVectorError);
  Vector tiny = Vector::Constant(2, 1e-14);
  CHECK_THROWS_AS(l2_normalize(tiny), DegenerateVectorError);
}

TEST_CASE("sgd_step: single step with the reference hyperparameters") {
  Matrix w(1, 1);
  w << 1.0;
  auto p = single_linear(w, Vector::Zero(1));
  auto opt = make_optimizer(p, 0.001, 0.9, 1e-5);
  auto g = MlpGradients::zeros_like(p);
  g.weights[0](0, 0) = 1.0;
  sgd_step(p, g, opt);
  CHECK(opt.velocity.weights[0](0, 0) == doctest::Approx(1.00001).epsilon(1e-15));
  CHECK(p.weights[0](0, 0) == doctest::Approx(0.99899999).epsilon(1e-15));
}

TEST_CASE("sgd_step: zero gradient and no decay leaves parameters alone") {
  std::mt19937_64 rng(14);
  const int dims[] = {3, 5, 2};
  auto p = make_mlp(dims, Activation::leaky_relu, true, rng);
  const auto before = p;
  auto opt = make_optimizer(p, 0.5, 0.9, 0.0);
  sgd_step(p, MlpGradients::zeros_like(p), opt);
  CHECK(same_parameters(p, before));
}

TEST_CASE("sgd_step: two steps follow the hand-expanded momentum recursion") {
  const double lr = 0.01, mu = 0.9, wd = 0.001, g = 0.5, w0 = 2.0;
  Matrix w(1, 1);
  w << w0;
  auto p = single_linear(w, Vector::Zero(1));
  auto opt = make_optimizer(p, lr, mu, wd);
  auto grads = MlpGradients::zeros_like(p);
  grads.weights[0](0, 0) = g;
  sgd_step(p, grads, opt);
  sgd_step(p, grads, opt);
  const double v1 = g + wd * w0;
  const double w1 = w0 - lr * v1;
  const double v2 = mu * v1 + g + wd * w1;
  const double w2 = w1 - lr * v2;
  CHECK(p.weights[0](0, 0) == doctest::Approx(w2).epsilon(1e-14));
  CHECK(opt.velocity.weights[0](0, 0) == doctest::Approx(v2).epsilon(1e-14));
}

TEST_CASE("sgd_step: non-finite gradient names the layer and writes nothing") {
  std::mt19937_64 rng(15);
  const int dims[] = {3, 4, 2};
  auto p = make_mlp(dims, Activation::leaky_relu, false, rng);
  const auto before = p;
  auto opt = make_optimizer(p, 0.1, 0.9, 0.0);
  auto g = MlpGradients::zeros_like(p);
  g.weights[0](0, 0) = 1.0;
  g.biases[1](1) = std::numeric_limits<double>::quiet_NaN();
  try {
    sgd_step(p, g, opt);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer() == 1);
  }
  CHECK(same_parameters(p, before));
}

TEST_CASE("sgd_step: deterministic") {
  std::mt19937_64 rng(16);
  const int dims[] = {4, 6, 3};
  auto a = make_mlp(dims, Activation::leaky_relu, true, rng);
  auto b = a;
  auto g = MlpGradients::zeros_like(a);
  for (auto blk : gradient_blocks(g))
    for (double& v : blk) v = std::normal_distribution<double>(0, 1)(rng);
  auto oa = make_optimizer(a, 0.01, 0.9, 1e-5);
  auto ob = make_optimizer(b, 0.01, 0.9, 1e-5);
  for (int i = 0; i < 3; ++i) {
    sgd_step(a, g, oa);
    sgd_step(b, g, ob);
  }
  CHECK(same_parameters(a, b));
}
