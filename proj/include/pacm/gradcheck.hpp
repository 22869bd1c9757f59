#pragma once

// Finite-difference audit of every analytic gradient used in training.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace pacm {

struct GradcheckConfig {
  int configurations = 5;
  std::uint64_t seed = 1;
  int batch_size = 4;
  int input_dim = 6;
  std::vector<int> encoder_dims{8, 5};        // hidden..., output
  std::vector<int> discriminator_dims{6, 6};  // hidden
  int num_negatives = 6;
  double temperature = 0.5;
  double lambda1 = 0.1;
  double lambda2 = 1.0;
  double step = 1e-5;
  double tolerance = 1e-4;

  void validate() const;  // throws ConfigError
};

nlohmann::json gradcheck_config_to_json(const GradcheckConfig& c);
GradcheckConfig gradcheck_config_from_json(const nlohmann::json& j);

struct GradcheckEntry {
  std::string loss;     // pac, pacm, disc, enc_batch, enc_eval, total
  std::string network;  // frontal, profile, discriminator
  int configuration = 0;
  double worst_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // central difference straddled a leaky-ReLU kink
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;
  double seconds = 0.0;

  double worst() const;
  double worst_for(const std::string& loss) const;
  bool passed() const { return worst() < tolerance; }
};

// Relative error |a - n| / max(|a|, |n|, 1e-4) per coordinate.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

}  // namespace pacm
