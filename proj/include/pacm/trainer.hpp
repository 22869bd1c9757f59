#pragma once

// Coupled-encoder training: contrastive loss against the memory (or the
// batch), the view-adversarial term on the profile side, SGD steps on the
// total loss and momentum refresh of the touched memory rows.
//
// Seeding: encoders and the discriminator are initialized from
// mt19937_64(seed) in that order (profile skipped in single-encoder mode),
// batches from mt19937_64(seed + 1), the memory from seed + 2 and memory
// negatives from mt19937_64(seed + 3).

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pacm/checkpoint.hpp"
#include "pacm/memory.hpp"
#include "pacm/pada.hpp"
#include "pacm/synth.hpp"
#include "pacm/train_config.hpp"

namespace pacm {

// lambda1 * (-l_enc) + lambda2 * l_pacm. Throws NumericError on non-finite
// components.
double total_loss(double l_pacm, double l_enc, const TrainConfig& config);

struct BatchInputs {
  Matrix frontal;  // B x input_dim
  Matrix profile;
  std::vector<PairRef> pairs;
};

struct TotalLossResult {
  double l_pacm = 0.0;
  double l_enc = 0.0;  // 0 when no discriminator is given
  double l_total = 0.0;
  MlpGradients grad_frontal;  // d l_total / d frontal encoder
  MlpGradients grad_profile;  // d l_total / d profile encoder
  NormalizedRows z_frontal;
  NormalizedRows z_profile;
};

// Encodes the batch and differentiates the total loss. A null memory uses
// in-batch negatives; a null discriminator drops the adversarial term. The
// discriminator sees [z_f; z_p] with batch statistics and only profile rows
// carry its gradient. In single-encoder mode pass the same object twice and
// add the two gradients.
TotalLossResult total_loss_and_gradients(const MlpParams& frontal_encoder,
                                         const MlpParams& profile_encoder,
                                         const Discriminator* discriminator,
                                         const MemoryBuffer* memory, const BatchInputs& batch,
                                         const TrainConfig& config, std::mt19937_64& rng);

struct IterationLog {
  int epoch = 0;
  int iteration = 0;  // within the epoch, from 0
  double l_pacm = 0.0;
  double l_pada_d = 0.0;    // NaN while the adversarial term is off
  double l_pada_enc = 0.0;  // NaN while the adversarial term is off
  double l_total = 0.0;
  double lr = 0.0;
};

class Trainer {
 public:
  // `train_data` must have contiguous instance ids per view (see
  // MultiviewDataset::restrict_to). Everything is checked here.
  Trainer(TrainConfig config, MultiviewDataset train_data);
  static Trainer resume(const Checkpoint& checkpoint, MultiviewDataset train_data);

  IterationLog step();
  std::vector<IterationLog> run_epoch();  // rest of the current epoch
  std::vector<IterationLog> run();        // until all epochs are done
  bool finished() const { return epoch_ > config_.epochs; }

  Checkpoint checkpoint() const;

  const TrainConfig& config() const { return config_; }
  const MlpParams& frontal_encoder() const { return encoders_.front(); }
  const MlpParams& profile_encoder() const { return encoders_.back(); }
  const Discriminator& discriminator() const { return discriminator_; }
  const MemoryBuffer& memory() const { return memory_; }
  const MultiviewDataset& data() const { return data_; }
  int epoch() const { return epoch_; }
  int iteration_in_epoch() const { return iteration_in_epoch_; }
  int iterations_per_epoch() const;
  bool pada_active() const;

 private:
  Trainer() = default;
  void check_data() const;

  TrainConfig config_;
  MultiviewDataset data_;
  std::vector<MlpParams> encoders_;  // one entry in single-encoder mode
  std::vector<OptimizerState> encoder_opts_;
  Discriminator discriminator_;
  OptimizerState discriminator_opt_;
  MemoryBuffer memory_;
  std::mt19937_64 batch_rng_;
  std::mt19937_64 negative_rng_;
  int epoch_ = 1;
  int iteration_in_epoch_ = 0;
  std::uint64_t global_iteration_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<IterationLog> log;
};

// Trains on dataset.train_part().
TrainResult train(const TrainConfig& config, const MultiviewDataset& dataset);

void write_metrics_csv(const std::vector<IterationLog>& log, const std::filesystem::path& path);

// Unit-norm embeddings of raw feature rows.
Matrix embed(const MlpParams& encoder, const Matrix& features);

}  // namespace pacm
