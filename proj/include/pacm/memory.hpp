#pragma once

// Per-instance memory of past embeddings for both views. Rows are refreshed
// by a momentum blend and supply contrastive negatives well beyond the
// mini-batch. Loss evaluation reads the memory as constants: no gradient
// reaches a row and only update_entry writes one.

#include <cstdint>
#include <random>
#include <vector>

#include "pacm/numeric.hpp"
#include "pacm/synth.hpp"

namespace pacm {

inline constexpr double kDefaultMemoryMomentum = 0.5;

class MemoryBuffer {
 public:
  MemoryBuffer() = default;
  // Rows must be unit norm; instance ids of each view are
  // first_instance[v] .. first_instance[v] + rows - 1.
  MemoryBuffer(Matrix frontal, Matrix profile, std::vector<int> frontal_identity,
               std::vector<int> profile_identity, int frontal_first_instance,
               int profile_first_instance, double momentum);

  const Matrix& entries(View v) const { return v == View::frontal ? frontal_ : profile_; }
  const std::vector<int>& identities(View v) const {
    return v == View::frontal ? frontal_identity_ : profile_identity_;
  }
  int first_instance(View v) const {
    return v == View::frontal ? frontal_first_ : profile_first_;
  }
  double momentum() const { return momentum_; }
  int dim() const { return static_cast<int>(frontal_.cols()); }
  std::size_t rows(View v) const { return static_cast<std::size_t>(entries(v).rows()); }

  // Row holding `instance_id`; throws UsageError when it is not in view v.
  std::size_t row_of(View v, int instance_id) const;

  // row <- normalize(m * row + (1 - m) * z). When the blend is degenerate the
  // row is kept, a warning is logged and false is returned.
  bool update_entry(View v, int instance_id, const Vector& z);

  // Replaces a row outright (z must be unit norm).
  void overwrite_entry(View v, int instance_id, const Vector& z);

  std::size_t degenerate_updates() const { return degenerate_updates_; }
  void set_degenerate_updates(std::size_t n) { degenerate_updates_ = n; }

 private:
  Matrix& mutable_entries(View v) { return v == View::frontal ? frontal_ : profile_; }

  Matrix frontal_;
  Matrix profile_;
  std::vector<int> frontal_identity_;
  std::vector<int> profile_identity_;
  int frontal_first_ = 0;
  int profile_first_ = 0;
  double momentum_ = kDefaultMemoryMomentum;
  std::size_t degenerate_updates_ = 0;
};

// One row per dataset instance and view, seeded Gaussian then normalized.
// Instance ids of each view must be contiguous.
MemoryBuffer init_buffer(const MultiviewDataset& dataset, int dim, double momentum,
                         std::uint64_t seed);

struct MemoryDraw {
  std::vector<std::size_t> negatives;  // rows of the sampled view
  std::size_t positive = 0;            // row of the paired instance
};

// K distinct rows of `view` drawn uniformly without replacement among rows
// whose identity differs from anchor_identity, plus the row of
// positive_instance. Throws CapacityError when fewer than K rows qualify.
MemoryDraw sample_memory_negatives(const MemoryBuffer& buffer, View view, int anchor_identity,
                                   int positive_instance, std::size_t k, std::mt19937_64& rng);

// Instance ids of one genuine pair in the live batch.
struct PairRef {
  int frontal_instance = 0;
  int profile_instance = 0;
  int identity = 0;
};

struct PacmResult {
  double loss = 0.0;  // frontal-anchored + profile-anchored
  double frontal_anchored = 0.0;
  double profile_anchored = 0.0;
  Matrix grad_frontal;  // w.r.t. the live unit embeddings
  Matrix grad_profile;
};

// Live frontal anchors contrast against the profile memory (positive: the
// memory row of the paired profile instance) and vice versa. Negatives are
// drawn per anchor, frontal anchors first.
PacmResult pacm_loss(const Matrix& frontal, const Matrix& profile, const MemoryBuffer& buffer,
                     const std::vector<PairRef>& pairs, std::size_t k, double temperature,
                     std::mt19937_64& rng);

}  // namespace pacm
