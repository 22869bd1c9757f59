#pragma once

// Temperature-scaled cosine critic and the softmax contrastive loss built on
// it, in both the general form (explicit negative lists) and the in-batch
// two-direction form used for coupled encoders.

#include <vector>

#include "pacm/numeric.hpp"

namespace pacm {

inline constexpr double kDefaultTemperature = 0.07;

// Rows are unit embeddings. negatives[i] holds the negatives of anchor i,
// one per row; the positive always joins the softmax denominator.
struct ContrastiveBatch {
  Matrix anchors;
  Matrix positives;
  std::vector<Matrix> negatives;
  double temperature = kDefaultTemperature;

  // Throws UsageError: shape mismatch, empty negative set, non-unit rows
  // (tolerance 1e-9), temperature <= 0.
  void validate() const;
};

struct ContrastiveResult {
  double loss = 0.0;               // summed over anchors
  Vector per_anchor;               // loss of each anchor
  Matrix grad_anchors;             // d loss / d anchors
  Matrix grad_positives;           // d loss / d positives
  std::vector<Matrix> grad_negatives;
};

// exp(cos(a, b) / temperature). Throws UsageError for temperature <= 0.
double critic_h(const Vector& a, const Vector& b, double temperature);

// Sum over anchors of -log(h(a, p) / (h(a, p) + sum_j h(a, n_j))), with exact
// gradients w.r.t. the unit embeddings. Callers apply the normalization
// Jacobian.
ContrastiveResult pac_loss(const ContrastiveBatch& batch);

// ln(k) - loss_per_anchor.
double mi_lower_bound(double loss_per_anchor, int k);

struct InBatchResult {
  double loss = 0.0;  // frontal-anchored + profile-anchored
  double frontal_anchored = 0.0;
  double profile_anchored = 0.0;
  Matrix grad_frontal;
  Matrix grad_profile;
};

// Row i of `frontal` and `profile` form a genuine pair; every other row of
// the opposite view is a negative for it. Both anchoring directions are
// summed.
InBatchResult in_batch_pac_loss(const Matrix& frontal, const Matrix& profile,
                                double temperature);

}  // namespace pacm
