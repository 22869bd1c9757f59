#include "pacm/pada.hpp"

#include <algorithm>
#include <cmath>

namespace pacm {

namespace {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(max(p, clamp)) and its derivative w.r.t. the clamped logit.
struct LogTerm {
  double value;
  double d_logit;
};

LogTerm log_prob(double p, double complement) {
  if (p < kProbabilityClamp) return {std::log(kProbabilityClamp), 0.0};
  return {std::log(p), complement};
}

LogTerm log_complement(double p, double complement) {
  if (complement < kProbabilityClamp) return {std::log(kProbabilityClamp), 0.0};
  return {std::log(complement), -p};
}

double clamp_gate(double raw) { return std::abs(raw) < kLogitClamp ? 1.0 : 0.0; }

}  // namespace

Discriminator make_discriminator(int embed_dim, std::span<const int> hidden,
                                 std::mt19937_64& rng) {
  std::vector<int> dims{embed_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return {make_mlp(dims, Activation::leaky_relu, true, rng)};
}

DiscriminatorOutput discriminator_forward(const Discriminator& disc, const Matrix& embeddings,
                                          Mode mode) {
  if (disc.net.output_dim() != 1) throw DimensionError("discriminator must emit one logit");
  auto fwd = mlp_forward(disc.net, embeddings, mode);
  DiscriminatorOutput out;
  out.raw_logit = fwd.output.col(0);
  out.logit = out.raw_logit.cwiseMax(-kLogitClamp).cwiseMin(kLogitClamp);
  out.prob = out.logit.unaryExpr([](double l) { return sigmoid(l); });
  out.complement = out.logit.unaryExpr([](double l) { return sigmoid(-l); });
  out.cache = std::move(fwd.cache);
  return out;
}

DiscriminatorLoss discriminator_loss(const Discriminator& disc, const Matrix& frontal,
                                     const Matrix& profile) {
  if (frontal.rows() == 0 || profile.rows() == 0)
    throw UsageError("discriminator loss needs nonempty frontal and profile batches");
  if (frontal.cols() != profile.cols()) throw DimensionError("frontal/profile widths differ");
  const Eigen::Index nf = frontal.rows();
  const Eigen::Index np = profile.rows();
  Matrix stacked(nf + np, frontal.cols());
  stacked << frontal, profile;
  auto out = discriminator_forward(disc, stacked, Mode::train);

  DiscriminatorLoss loss;
  Matrix upstream(nf + np, 1);
  double sum_f = 0.0;
  double sum_p = 0.0;
  for (Eigen::Index i = 0; i < nf + np; ++i) {
    const bool is_frontal = i < nf;
    const auto term = is_frontal ? log_prob(out.prob[i], out.complement[i])
                                 : log_complement(out.prob[i], out.complement[i]);
    (is_frontal ? sum_f : sum_p) += term.value;
    const double weight = 1.0 / static_cast<double>(is_frontal ? nf : np);
    upstream(i, 0) = weight * term.d_logit * clamp_gate(out.raw_logit[i]);
  }
  loss.value = sum_f / static_cast<double>(nf) + sum_p / static_cast<double>(np);
  auto back = mlp_backward(disc.net, out.cache, upstream);
  loss.grads = std::move(back.params);
  loss.grad_frontal = back.input.topRows(nf);
  loss.grad_profile = back.input.bottomRows(np);
  loss.cache = std::move(out.cache);
  return loss;
}

namespace {

EncoderAdversarialLoss encoder_loss_from(const Discriminator& disc,
                                         const DiscriminatorOutput& out, Eigen::Index first,
                                         Eigen::Index count) {
  EncoderAdversarialLoss loss;
  Matrix upstream = Matrix::Zero(out.prob.size(), 1);
  double sum = 0.0;
  for (Eigen::Index i = first; i < first + count; ++i) {
    const auto term = log_prob(out.prob[i], out.complement[i]);
    sum += term.value;
    upstream(i, 0) = term.d_logit * clamp_gate(out.raw_logit[i]) / static_cast<double>(count);
  }
  loss.value = sum / static_cast<double>(count);
  const auto back = mlp_backward(disc.net, out.cache, upstream);
  loss.grad_profile = back.input.middleRows(first, count);
  return loss;
}

}  // namespace

EncoderAdversarialLoss encoder_adversarial_loss(const Discriminator& disc, const Matrix& profile) {
  if (profile.rows() == 0) throw UsageError("encoder adversarial loss needs a nonempty batch");
  const auto out = discriminator_forward(disc, profile, Mode::eval);
  return encoder_loss_from(disc, out, 0, profile.rows());
}

EncoderAdversarialLoss encoder_adversarial_loss(const Discriminator& disc, const Matrix& profile,
                                                const Matrix& frontal_context) {
  if (profile.rows() == 0) throw UsageError("encoder adversarial loss needs a nonempty batch");
  if (frontal_context.cols() != profile.cols())
    throw DimensionError("frontal/profile widths differ");
  Matrix stacked(frontal_context.rows() + profile.rows(), profile.cols());
  stacked << frontal_context, profile;
  const auto out = discriminator_forward(disc, stacked, Mode::train);
  return encoder_loss_from(disc, out, frontal_context.rows(), profile.rows());
}

double discriminator_step(Discriminator& disc, OptimizerState& opt, const Matrix& frontal,
                          const Matrix& profile) {
  auto loss = discriminator_loss(disc, frontal, profile);
  loss.grads *= -1.0;  // ascent
  sgd_step(disc.net, loss.grads, opt);
  commit_batch_statistics(disc.net, loss.cache);
  return loss.value;
}

AdversarialRoundResult adversarial_round(Discriminator& disc, OptimizerState& disc_opt,
                                         const MlpParams& frontal_encoder,
                                         MlpParams& profile_encoder,
                                         OptimizerState& profile_opt, const Matrix& frontal_inputs,
                                         const Matrix& profile_inputs, double lambda1) {
  if (frontal_inputs.rows() == 0 || profile_inputs.rows() == 0)
    throw UsageError("adversarial round needs a nonempty batch");
  const Matrix z_f = l2_normalize_rows(mlp_forward(frontal_encoder, frontal_inputs).output).unit;
  auto profile_fwd = mlp_forward(profile_encoder, profile_inputs);
  const auto z_p = l2_normalize_rows(profile_fwd.output);

  AdversarialRoundResult result;
  result.discriminator_loss = discriminator_step(disc, disc_opt, z_f, z_p.unit);

  const auto enc = encoder_adversarial_loss(disc, z_p.unit, z_f);
  result.encoder_loss = enc.value;
  // Minimizing -lambda1 * L_enc.
  const Matrix upstream = l2_normalize_backward(z_p, -lambda1 * enc.grad_profile);
  const auto back = mlp_backward(profile_encoder, profile_fwd.cache, upstream);
  sgd_step(profile_encoder, back.params, profile_opt);
  return result;
}

}  // namespace pacm
