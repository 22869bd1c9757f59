#pragma once

// Contrastive bound ln(k) - L on a discrete joint with known mutual
// information. Embeddings are one-hot symbol codes, so cosine is 1 for equal
// symbols and 0 otherwise; the temperature defaults to the value that makes
// the critic proportional to p(a, b) / (p(a) p(b)).

#include <cstdint>
#include <vector>

#include "json.hpp"

namespace pacm {

struct MiStudyConfig {
  int symbols = 8;
  double agreement = 0.9;
  std::vector<int> ks{4, 16, 32};
  int seeds = 50;
  int anchors_per_seed = 256;
  std::uint64_t seed = 1;
  double temperature = 0.0;  // 0 selects the density-ratio temperature

  void validate() const;  // throws ConfigError
};

nlohmann::json mi_study_config_to_json(const MiStudyConfig& c);
MiStudyConfig mi_study_config_from_json(const nlohmann::json& j);

// 1 / ln((n - 1) * agreement / (1 - agreement)).
double density_ratio_temperature(int symbols, double agreement);

struct MiRow {
  int k = 0;
  double mean_loss = 0.0;   // per anchor, averaged over seeds
  double mean_bound = 0.0;  // ln(k) - loss
  double standard_error = 0.0;
  bool within_exact = false;  // mean_bound <= exact_mi + 3 SE
};

struct MiStudyReport {
  double exact_mi = 0.0;
  double temperature = 0.0;
  std::vector<MiRow> rows;
  bool non_decreasing = false;
  bool passed() const;
};

MiStudyReport run_mi_study(const MiStudyConfig& config);

}  // namespace pacm
