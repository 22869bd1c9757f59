#pragma once

// Dense building blocks shared by every other module: a small multilayer
// perceptron with exact backward pass, row-wise L2 normalization and the
// SGD-with-momentum optimizer. All arithmetic is double precision.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pacm/errors.hpp"

namespace pacm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class Activation { leaky_relu, identity };

// train: batch norm uses per-batch statistics; eval: running averages.
enum class Mode { train, eval };

struct BatchNormState {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

// Fully connected network. Hidden layers are linear -> [batch norm] ->
// activation; the last layer is always linear.
struct MlpParams {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;  // weights[l] is layer_dims[l+1] x layer_dims[l]
  std::vector<Vector> biases;
  std::vector<BatchNormState> norm;  // empty, or one entry per hidden layer
  Activation activation = Activation::leaky_relu;
  // Bumped by every optimizer step so stale forward caches can be detected.
  std::uint64_t revision = 0;

  std::size_t num_layers() const { return weights.size(); }
  bool has_batch_norm() const { return !norm.empty(); }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  // Throws DimensionError on inconsistent shapes, NumericError on non-finite
  // entries.
  void validate() const;
};

// Parameter equality ignoring the revision counter.
bool same_parameters(const MlpParams& a, const MlpParams& b);

// He-initialized weights, zero biases; batch norm starts at gamma=1, beta=0,
// running mean 0 and running variance 1.
MlpParams make_mlp(std::span<const int> layer_dims, Activation activation,
                   bool batch_norm, std::mt19937_64& rng);

// Same layout as the trainable part of MlpParams.
struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Vector> gamma;
  std::vector<Vector> beta;

  static MlpGradients zeros_like(const MlpParams& params);
  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double scale);
};

struct LayerCache {
  Matrix linear;      // x W^T + b
  Matrix normalized;  // batch-norm xhat (hidden layers with batch norm only)
  Vector inv_std;     // 1 / sqrt(var + eps) used for this pass
  Vector batch_mean;  // per-batch statistics (train mode only)
  Vector batch_var;
  Matrix pre_activation;  // input to the nonlinearity
  Matrix output;
};

struct MlpCache {
  Matrix input;
  std::vector<LayerCache> layers;
  Mode mode = Mode::train;
  std::vector<int> layer_dims;
  std::uint64_t revision = 0;
};

struct ForwardResult {
  Matrix output;
  MlpCache cache;
};

struct BackwardResult {
  MlpGradients params;
  Matrix input;
};

// batch is B x layer_dims[0], one sample per row.
ForwardResult mlp_forward(const MlpParams& params, const Matrix& batch,
                          Mode mode = Mode::train);

BackwardResult mlp_backward(const MlpParams& params, const MlpCache& cache,
                            const Matrix& upstream_grad);

// Folds the batch statistics recorded in a train-mode cache into the running
// averages: running = momentum * running + (1 - momentum) * batch.
void commit_batch_statistics(MlpParams& params, const MlpCache& cache,
                             double momentum = kBatchNormMomentum);

// One byte per hidden pre-activation entry: 1 when on the positive side of
// the leaky-ReLU kink. Two caches with different signatures straddle a kink.
std::vector<std::uint8_t> kink_signature(const MlpCache& cache);

struct NormalizedRows {
  Matrix unit;
  Vector norms;
};

// Normalizes every row; throws DegenerateVectorError when a row norm is
// <= 1e-12.
NormalizedRows l2_normalize_rows(const Matrix& rows);

// Applies the Jacobian (I - z z^T) / ||v|| row by row.
Matrix l2_normalize_backward(const NormalizedRows& forward,
                             const Matrix& upstream);

Vector l2_normalize(const Vector& v);
Vector l2_normalize_backward(const Vector& v, const Vector& upstream);

struct OptimizerState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  MlpGradients velocity;
};

OptimizerState make_optimizer(const MlpParams& params, double learning_rate,
                              double momentum, double weight_decay);

// v <- momentum * v + (g + weight_decay * w); w <- w - learning_rate * v.
// Every gradient is validated before anything is written.
void sgd_step(MlpParams& params, const MlpGradients& grads,
              OptimizerState& state);

// Trainable blocks in a fixed order: per layer weights then biases, then
// per hidden layer batch-norm gamma then beta. Gradient blocks use the same
// order, so index i of both lists refers to the same tensor.
std::vector<std::span<double>> trainable_blocks(MlpParams& params);
std::vector<std::span<const double>> trainable_blocks(const MlpParams& params);
std::vector<std::span<double>> gradient_blocks(MlpGradients& grads);
std::vector<std::span<const double>> gradient_blocks(const MlpGradients& grads);

}  // namespace pacm
