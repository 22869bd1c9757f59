#pragma once

// View discriminator and the adversarial game between it and the profile
// encoder. The discriminator outputs the probability that an embedding came
// from the frontal view; the profile encoder is pushed to make its
// embeddings look frontal while the frontal encoder stays fixed.

#include <random>
#include <span>
#include <vector>

#include "pacm/numeric.hpp"

namespace pacm {

inline constexpr double kLogitClamp = 50.0;
inline constexpr double kProbabilityClamp = 1e-7;

struct Discriminator {
  MlpParams net;  // embed_dim -> hidden... -> 1, batch norm + leaky ReLU
};

Discriminator make_discriminator(int embed_dim, std::span<const int> hidden,
                                 std::mt19937_64& rng);

struct DiscriminatorOutput {
  Vector logit;       // clamped to [-50, 50]
  Vector prob;        // sigmoid(logit): probability of frontal
  Vector complement;  // sigmoid(-logit), kept separately for precision
  Vector raw_logit;   // before clamping
  MlpCache cache;
};

DiscriminatorOutput discriminator_forward(const Discriminator& disc, const Matrix& embeddings,
                                          Mode mode = Mode::eval);

struct DiscriminatorLoss {
  double value = 0.0;  // mean log D(z_f) + mean log(1 - D(z_p)); maximized
  MlpGradients grads;  // d value / d discriminator parameters
  Matrix grad_frontal;
  Matrix grad_profile;
  MlpCache cache;  // train-mode pass over [z_f; z_p]
};

// Batch-norm statistics come from the stacked batch [z_f; z_p].
DiscriminatorLoss discriminator_loss(const Discriminator& disc, const Matrix& frontal,
                                     const Matrix& profile);

struct EncoderAdversarialLoss {
  double value = 0.0;  // mean log D(z_p); maximized by the profile encoder
  Matrix grad_profile;
};

// Running-statistics batch norm.
EncoderAdversarialLoss encoder_adversarial_loss(const Discriminator& disc, const Matrix& profile);

// Train-mode batch norm over [frontal_context; profile], the same pass the
// discriminator is trained on. Only profile rows receive gradient.
EncoderAdversarialLoss encoder_adversarial_loss(const Discriminator& disc, const Matrix& profile,
                                                const Matrix& frontal_context);

// One gradient-ascent step of the discriminator on its loss; folds the batch
// statistics into the running averages. Returns the loss before the step.
double discriminator_step(Discriminator& disc, OptimizerState& opt, const Matrix& frontal,
                          const Matrix& profile);

struct AdversarialRoundResult {
  double discriminator_loss = 0.0;  // before the discriminator step
  double encoder_loss = 0.0;        // after it, before the encoder step
};

// Discriminator ascent step, then one step of the profile encoder ascending
// lambda1 * L_enc. The frontal encoder is read only.
AdversarialRoundResult adversarial_round(Discriminator& disc, OptimizerState& disc_opt,
                                         const MlpParams& frontal_encoder,
                                         MlpParams& profile_encoder,
                                         OptimizerState& profile_opt, const Matrix& frontal_inputs,
                                         const Matrix& profile_inputs, double lambda1);

}  // namespace pacm
