#include "pacm/mi_study.hpp"

#include <cmath>

#include "pacm/contrastive.hpp"
#include "pacm/json_io.hpp"
#include "pacm/synth.hpp"

namespace pacm {

void MiStudyConfig::validate() const {
  if (symbols < 2) throw ConfigError("mi config: symbols must be >= 2");
  if (!(agreement > 1.0 / symbols && agreement < 1.0))
    throw ConfigError("mi config: agreement must lie in (1/symbols, 1)");
  if (ks.empty()) throw ConfigError("mi config: ks must be nonempty");
  for (int k : ks)
    if (k < 1) throw ConfigError("mi config: every k must be >= 1");
  if (seeds < 2) throw ConfigError("mi config: seeds must be >= 2");
  if (anchors_per_seed < 1) throw ConfigError("mi config: anchors_per_seed must be >= 1");
  if (temperature < 0.0) throw ConfigError("mi config: temperature must be >= 0");
}

nlohmann::json mi_study_config_to_json(const MiStudyConfig& c) {
  return {{"symbols", c.symbols},     {"agreement", c.agreement},
          {"ks", c.ks},               {"seeds", c.seeds},
          {"anchors_per_seed", c.anchors_per_seed},
          {"seed", c.seed},           {"temperature", c.temperature}};
}

MiStudyConfig mi_study_config_from_json(const nlohmann::json& j) {
  constexpr const char* ctx = "mi config";
  if (!j.is_object()) throw ConfigError("mi config must be a JSON object");
  json_io::reject_unknown_keys(
      j, {"symbols", "agreement", "ks", "seeds", "anchors_per_seed", "seed", "temperature"}, ctx);
  MiStudyConfig c;
  json_io::get_if_present(j, "symbols", c.symbols, ctx);
  json_io::get_if_present(j, "agreement", c.agreement, ctx);
  json_io::get_if_present(j, "ks", c.ks, ctx);
  json_io::get_if_present(j, "seeds", c.seeds, ctx);
  json_io::get_if_present(j, "anchors_per_seed", c.anchors_per_seed, ctx);
  json_io::get_if_present(j, "seed", c.seed, ctx);
  json_io::get_if_present(j, "temperature", c.temperature, ctx);
  c.validate();
  return c;
}

double density_ratio_temperature(int symbols, double agreement) {
  return 1.0 / std::log((symbols - 1) * agreement / (1.0 - agreement));
}

bool MiStudyReport::passed() const {
  if (!non_decreasing) return false;
  for (const auto& r : rows)
    if (!r.within_exact) return false;
  return true;
}

MiStudyReport run_mi_study(const MiStudyConfig& config) {
  config.validate();
  const DiscreteToyJoint toy = make_symmetric_toy(config.symbols, config.agreement);
  MiStudyReport report;
  report.exact_mi = exact_mi(toy);
  report.temperature = config.temperature > 0.0
                           ? config.temperature
                           : density_ratio_temperature(config.symbols, config.agreement);
  const Matrix codes = Matrix::Identity(config.symbols, config.symbols);
  const int n = config.anchors_per_seed;

  for (int k : config.ks) {
    std::vector<double> losses;
    for (int s = 0; s < config.seeds; ++s) {
      std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(s));
      ContrastiveBatch batch;
      batch.temperature = report.temperature;
      batch.anchors.resize(n, config.symbols);
      batch.positives.resize(n, config.symbols);
      for (int i = 0; i < n; ++i) {
        const auto [a, b] = toy.sample_pair(rng);
        batch.anchors.row(i) = codes.row(a);
        batch.positives.row(i) = codes.row(b);
        Matrix negs(k, config.symbols);
        for (int j = 0; j < k; ++j) negs.row(j) = codes.row(toy.sample_b_marginal(rng));
        batch.negatives.push_back(std::move(negs));
      }
      losses.push_back(pac_loss(batch).loss / n);
    }
    double mean = 0.0;
    for (double l : losses) mean += l;
    mean /= static_cast<double>(losses.size());
    double ss = 0.0;
    for (double l : losses) ss += (l - mean) * (l - mean);
    const double sd = std::sqrt(ss / static_cast<double>(losses.size() - 1));
    MiRow row;
    row.k = k;
    row.mean_loss = mean;
    row.mean_bound = mi_lower_bound(mean, k);
    row.standard_error = sd / std::sqrt(static_cast<double>(losses.size()));
    row.within_exact = row.mean_bound <= report.exact_mi + 3.0 * row.standard_error;
    report.rows.push_back(row);
  }
  report.non_decreasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    if (config.ks[i] >= config.ks[i - 1] && report.rows[i].mean_bound < report.rows[i - 1].mean_bound)
      report.non_decreasing = false;
  return report;
}

}  // namespace pacm
