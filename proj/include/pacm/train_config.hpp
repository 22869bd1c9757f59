#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

namespace pacm {

struct TrainConfig {
  double lambda1 = 0.1;  // adversarial term
  double lambda2 = 1.0;  // contrastive term
  double temperature = 0.07;
  double memory_momentum = 0.5;
  int num_negatives = 200;
  int batch_size = 32;
  int epochs = 20;
  double lr_initial = 1e-3;
  double lr_decay = 0.1;
  int lr_decay_period = 10;  // epochs
  double optimizer_momentum = 0.9;
  double weight_decay = 1e-5;
  std::vector<int> encoder_dims{128, 64, 32};     // hidden..., output; input comes from data
  std::vector<int> discriminator_dims{256, 256};  // hidden only
  bool use_memory = true;
  bool use_pada = true;
  bool couple_encoders = true;
  std::uint64_t seed = 1;
  int pada_warmup_epochs = 1;

  // Throws ConfigError.
  void validate() const;
  int embedding_dim() const { return encoder_dims.back(); }
};

// Learning rate for a 1-based epoch: lr_initial * lr_decay^floor((epoch-1)/period).
double learning_rate_at(const TrainConfig& config, int epoch);

nlohmann::json train_config_to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace pacm
