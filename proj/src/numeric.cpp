#include "pacm/numeric.hpp"

#include <cmath>
#include <string>

namespace pacm {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

Matrix activate(const Matrix& x, Activation act) {
  if (act == Activation::identity) return x;
  return x.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Matrix activation_grad(const Matrix& pre, const Matrix& upstream,
                       Activation act) {
  if (act == Activation::identity) return upstream;
  return upstream.binaryExpr(pre, [](double g, double v) {
    return v > 0.0 ? g : kLeakySlope * g;
  });
}

}  // namespace

void MlpParams::validate() const {
  if (layer_dims.size() < 2) throw DimensionError("mlp needs at least one layer");
  for (int d : layer_dims)
    if (d <= 0) throw DimensionError("mlp layer widths must be positive");
  const std::size_t layers = layer_dims.size() - 1;
  if (weights.size() != layers || biases.size() != layers)
    throw DimensionError("mlp weight/bias count does not match layer_dims");
  if (!norm.empty() && norm.size() != layers - 1)
    throw DimensionError("batch norm state must cover every hidden layer");
  for (std::size_t l = 0; l < layers; ++l) {
    if (weights[l].rows() != layer_dims[l + 1] ||
        weights[l].cols() != layer_dims[l] ||
        biases[l].size() != layer_dims[l + 1])
      throw DimensionError("mlp layer " + std::to_string(l) +
                           " shape does not match layer_dims");
    if (!all_finite(weights[l]) || !all_finite(biases[l]))
      throw NumericError("non-finite parameter", static_cast<std::ptrdiff_t>(l));
  }
  for (std::size_t l = 0; l < norm.size(); ++l) {
    const auto& bn = norm[l];
    const auto width = layer_dims[l + 1];
    if (bn.gamma.size() != width || bn.beta.size() != width ||
        bn.running_mean.size() != width || bn.running_var.size() != width)
      throw DimensionError("batch norm state shape mismatch at layer " +
                           std::to_string(l));
  }
}

bool same_parameters(const MlpParams& a, const MlpParams& b) {
  if (a.layer_dims != b.layer_dims || a.activation != b.activation ||
      a.norm.size() != b.norm.size())
    return false;
  for (std::size_t l = 0; l < a.num_layers(); ++l)
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  for (std::size_t l = 0; l < a.norm.size(); ++l) {
    const auto& x = a.norm[l];
    const auto& y = b.norm[l];
    if (x.gamma != y.gamma || x.beta != y.beta ||
        x.running_mean != y.running_mean || x.running_var != y.running_var)
      return false;
  }
  return true;
}

MlpParams make_mlp(std::span<const int> layer_dims, Activation activation,
                   bool batch_norm, std::mt19937_64& rng) {
  MlpParams p;
  p.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  p.activation = activation;
  if (p.layer_dims.size() < 2) throw DimensionError("mlp needs at least one layer");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
    const int in = p.layer_dims[l];
    const int out = p.layer_dims[l + 1];
    if (in <= 0 || out <= 0) throw DimensionError("mlp layer widths must be positive");
    const double scale = std::sqrt(2.0 / in);
    Matrix w(out, in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = scale * normal(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(out));
  }
  if (batch_norm) {
    for (std::size_t l = 0; l + 2 < p.layer_dims.size(); ++l) {
      const int width = p.layer_dims[l + 1];
      p.norm.push_back({Vector::Ones(width), Vector::Zero(width),
                        Vector::Zero(width), Vector::Ones(width)});
    }
  }
  return p;
}

MlpGradients MlpGradients::zeros_like(const MlpParams& params) {
  MlpGradients g;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    g.weights.push_back(Matrix::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.push_back(Vector::Zero(params.biases[l].size()));
  }
  for (const auto& bn : params.norm) {
    g.gamma.push_back(Vector::Zero(bn.gamma.size()));
    g.beta.push_back(Vector::Zero(bn.beta.size()));
  }
  return g;
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (other.weights.size() != weights.size() || other.gamma.size() != gamma.size())
    throw DimensionError("gradient layouts differ");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  for (std::size_t l = 0; l < gamma.size(); ++l) {
    gamma[l] += other.gamma[l];
    beta[l] += other.beta[l];
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double scale) {
  for (auto& w : weights) w *= scale;
  for (auto& b : biases) b *= scale;
  for (auto& g : gamma) g *= scale;
  for (auto& b : beta) b *= scale;
  return *this;
}

ForwardResult mlp_forward(const MlpParams& params, const Matrix& batch,
                          Mode mode) {
  if (params.layer_dims.empty() || batch.cols() != params.input_dim())
    throw DimensionError("mlp input has " + std::to_string(batch.cols()) +
                         " columns, expected " +
                         std::to_string(params.layer_dims.empty() ? 0 : params.input_dim()));
  if (!batch.allFinite()) throw NumericError("non-finite mlp input");

  ForwardResult result;
  MlpCache& cache = result.cache;
  cache.input = batch;
  cache.mode = mode;
  cache.layer_dims = params.layer_dims;
  cache.revision = params.revision;

  const std::size_t layers = params.num_layers();
  const Matrix* x = &cache.input;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerCache lc;
    lc.linear = (*x) * params.weights[l].transpose();
    lc.linear.rowwise() += params.biases[l].transpose();
    const bool hidden = l + 1 < layers;
    if (hidden && params.has_batch_norm()) {
      const auto& bn = params.norm[l];
      Vector mean;
      Vector var;
      if (mode == Mode::train) {
        mean = lc.linear.colwise().mean().transpose();
        var = (lc.linear.rowwise() - mean.transpose())
                  .array()
                  .square()
                  .colwise()
                  .mean()
                  .transpose();
        lc.batch_mean = mean;
        lc.batch_var = var;
      } else {
        mean = bn.running_mean;
        var = bn.running_var;
      }
      lc.inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
      lc.normalized = ((lc.linear.rowwise() - mean.transpose()).array().rowwise() *
                       lc.inv_std.transpose().array())
                          .matrix();
      lc.pre_activation = ((lc.normalized.array().rowwise() *
                            bn.gamma.transpose().array())
                               .rowwise() +
                           bn.beta.transpose().array())
                              .matrix();
    } else {
      lc.pre_activation = lc.linear;
    }
    lc.output = hidden ? activate(lc.pre_activation, params.activation)
                       : lc.pre_activation;
    cache.layers.push_back(std::move(lc));
    x = &cache.layers.back().output;
  }
  result.output = cache.layers.back().output;
  if (!result.output.allFinite()) throw NumericError("non-finite mlp output");
  return result;
}

BackwardResult mlp_backward(const MlpParams& params, const MlpCache& cache,
                            const Matrix& upstream_grad) {
  if (cache.layer_dims != params.layer_dims ||
      cache.layers.size() != params.num_layers())
    throw UsageError("mlp cache was produced by a differently shaped network");
  if (cache.revision != params.revision)
    throw UsageError("mlp cache is stale: parameters changed since forward pass");
  const Matrix& out = cache.layers.back().output;
  if (upstream_grad.rows() != out.rows() || upstream_grad.cols() != out.cols())
    throw DimensionError("upstream gradient shape does not match mlp output");

  BackwardResult result;
  result.params = MlpGradients::zeros_like(params);
  const std::size_t layers = params.num_layers();
  const auto batch = static_cast<double>(cache.input.rows());

  Matrix grad = upstream_grad;
  for (std::size_t li = layers; li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const bool hidden = li + 1 < layers;
    Matrix d_linear;
    if (hidden) {
      Matrix d_pre = activation_grad(lc.pre_activation, grad, params.activation);
      if (params.has_batch_norm()) {
        const auto& bn = params.norm[li];
        result.params.gamma[li] =
            (d_pre.array() * lc.normalized.array()).colwise().sum().transpose();
        result.params.beta[li] = d_pre.colwise().sum().transpose();
        const Matrix d_hat =
            (d_pre.array().rowwise() * bn.gamma.transpose().array()).matrix();
        if (cache.mode == Mode::train) {
          const Eigen::RowVectorXd sum_d = d_hat.colwise().sum();
          const Eigen::RowVectorXd sum_dx =
              (d_hat.array() * lc.normalized.array()).colwise().sum();
          Matrix centered = batch * d_hat;
          centered.rowwise() -= sum_d;
          centered -= (lc.normalized.array().rowwise() * sum_dx.array()).matrix();
          d_linear = (centered.array().rowwise() *
                      (lc.inv_std.transpose().array() / batch))
                         .matrix();
        } else {
          d_linear =
              (d_hat.array().rowwise() * lc.inv_std.transpose().array()).matrix();
        }
      } else {
        d_linear = std::move(d_pre);
      }
    } else {
      d_linear = grad;
    }
    const Matrix& x = li == 0 ? cache.input : cache.layers[li - 1].output;
    result.params.weights[li] = d_linear.transpose() * x;
    result.params.biases[li] = d_linear.colwise().sum().transpose();
    grad = d_linear * params.weights[li];
  }
  result.input = std::move(grad);
  return result;
}

void commit_batch_statistics(MlpParams& params, const MlpCache& cache,
                             double momentum) {
  if (!params.has_batch_norm()) return;
  if (cache.mode != Mode::train)
    throw UsageError("batch statistics are only recorded in train mode");
  if (cache.layer_dims != params.layer_dims)
    throw UsageError("cache does not belong to this network");
  for (std::size_t l = 0; l < params.norm.size(); ++l) {
    auto& bn = params.norm[l];
    bn.running_mean = momentum * bn.running_mean +
                      (1.0 - momentum) * cache.layers[l].batch_mean;
    bn.running_var = momentum * bn.running_var +
                     (1.0 - momentum) * cache.layers[l].batch_var;
  }
}

std::vector<std::uint8_t> kink_signature(const MlpCache& cache) {
  std::vector<std::uint8_t> sig;
  for (std::size_t l = 0; l + 1 < cache.layers.size(); ++l) {
    const Matrix& pre = cache.layers[l].pre_activation;
    for (Eigen::Index i = 0; i < pre.size(); ++i)
      sig.push_back(pre.data()[i] > 0.0 ? 1 : 0);
  }
  return sig;
}

NormalizedRows l2_normalize_rows(const Matrix& rows) {
  NormalizedRows out;
  out.norms = rows.rowwise().norm();
  for (Eigen::Index i = 0; i < out.norms.size(); ++i)
    if (!(out.norms[i] > 1e-12))
      throw DegenerateVectorError("cannot normalize row " + std::to_string(i) +
                                  " with norm <= 1e-12");
  out.unit = rows.array().colwise() / out.norms.array();
  return out;
}

Matrix l2_normalize_backward(const NormalizedRows& forward,
                             const Matrix& upstream) {
  if (upstream.rows() != forward.unit.rows() ||
      upstream.cols() != forward.unit.cols())
    throw DimensionError("normalize backward: upstream shape mismatch");
  const Vector radial = (upstream.array() * forward.unit.array()).rowwise().sum();
  Matrix tangent = upstream - (forward.unit.array().colwise() * radial.array()).matrix();
  return tangent.array().colwise() / forward.norms.array();
}

Vector l2_normalize(const Vector& v) {
  return l2_normalize_rows(v.transpose()).unit.transpose();
}

Vector l2_normalize_backward(const Vector& v, const Vector& upstream) {
  return l2_normalize_backward(l2_normalize_rows(v.transpose()),
                               upstream.transpose())
      .transpose();
}

namespace {

template <typename Span, typename P>
void push_block(std::vector<Span>& out, P& tensor) {
  out.emplace_back(tensor.data(), static_cast<std::size_t>(tensor.size()));
}

template <typename Span, typename Params>
std::vector<Span> collect_params(Params& params) {
  std::vector<Span> out;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    push_block(out, params.weights[l]);
    push_block(out, params.biases[l]);
  }
  for (auto& bn : params.norm) {
    push_block(out, bn.gamma);
    push_block(out, bn.beta);
  }
  return out;
}

template <typename Span, typename Grads>
std::vector<Span> collect_grads(Grads& grads) {
  std::vector<Span> out;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    push_block(out, grads.weights[l]);
    push_block(out, grads.biases[l]);
  }
  for (std::size_t l = 0; l < grads.gamma.size(); ++l) {
    push_block(out, grads.gamma[l]);
    push_block(out, grads.beta[l]);
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> trainable_blocks(MlpParams& params) {
  return collect_params<std::span<double>>(params);
}

std::vector<std::span<const double>> trainable_blocks(const MlpParams& params) {
  return collect_params<std::span<const double>>(params);
}

std::vector<std::span<double>> gradient_blocks(MlpGradients& grads) {
  return collect_grads<std::span<double>>(grads);
}

std::vector<std::span<const double>> gradient_blocks(const MlpGradients& grads) {
  return collect_grads<std::span<const double>>(grads);
}

OptimizerState make_optimizer(const MlpParams& params, double learning_rate,
                              double momentum, double weight_decay) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  return {learning_rate, momentum, weight_decay, MlpGradients::zeros_like(params)};
}

void sgd_step(MlpParams& params, const MlpGradients& grads,
              OptimizerState& state) {
  if (grads.weights.size() != params.num_layers() ||
      grads.gamma.size() != params.norm.size() ||
      state.velocity.weights.size() != params.num_layers() ||
      state.velocity.gamma.size() != params.norm.size())
    throw DimensionError("optimizer: gradient layout does not match parameters");
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() ||
        grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size())
      throw DimensionError("optimizer: gradient shape mismatch at layer " +
                           std::to_string(l));
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw NumericError("non-finite gradient at layer " + std::to_string(l),
                         static_cast<std::ptrdiff_t>(l));
  }
  for (std::size_t l = 0; l < params.norm.size(); ++l)
    if (!grads.gamma[l].allFinite() || !grads.beta[l].allFinite())
      throw NumericError("non-finite batch-norm gradient at layer " + std::to_string(l),
                         static_cast<std::ptrdiff_t>(l));

  auto weights = trainable_blocks(params);
  auto velocity = gradient_blocks(state.velocity);
  const auto gradient = gradient_blocks(grads);
  for (std::size_t b = 0; b < weights.size(); ++b) {
    auto w = weights[b];
    auto v = velocity[b];
    const auto g = gradient[b];
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state.momentum * v[i] + (g[i] + state.weight_decay * w[i]);
      w[i] -= state.learning_rate * v[i];
    }
  }
  ++params.revision;
}

}  // namespace pacm
