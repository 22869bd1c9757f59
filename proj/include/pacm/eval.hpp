#pragma once

// Verification and identification metrics over cosine scores of
// frontal/profile embedding pairs.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "pacm/numeric.hpp"
#include "pacm/synth.hpp"

namespace pacm {

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> imposter;
};

// Row-wise cosine of two unit-norm embedding matrices.
Vector row_cosines(const Matrix& a, const Matrix& b);

// Frontal side through f_f, profile side through f_p; the label of each pair
// is identity equality. Throws ProtocolError on an empty list.
ScoreSet score_pairs(const MlpParams& frontal_encoder, const MlpParams& profile_encoder,
                     const MultiviewDataset& dataset, const std::vector<PairIndex>& pairs);

struct VerificationMetrics {
  double accuracy = 0.0;   // best over thresholds between adjacent sorted scores
  double threshold = 0.0;  // accept when score > threshold
  double eer = 0.0;        // interpolated between ROC vertices
};

// Ties in accuracy go to the lower threshold. Throws ProtocolError when a
// side is empty.
VerificationMetrics verification_metrics(const ScoreSet& scores);

struct TarAtFar {
  double far_target = 0.0;
  double threshold = 0.0;  // accept when score > threshold
  double tar = 0.0;
  double achieved_far = 0.0;
  bool resolved = true;  // false when there are fewer than 10 / far_target imposters
};

// Threshold is the smallest value whose empirical FAR does not exceed the
// target.
std::vector<TarAtFar> tar_at_far(const ScoreSet& scores, const std::vector<double>& far_targets);

struct Rank1Result {
  std::vector<double> accuracy;  // per tier; NaN when a tier has no probes
  std::vector<int> probes;       // per tier
  double overall = 0.0;
};

// Nearest gallery row by cosine, ties to the lowest gallery index. Throws
// ProtocolError when a probe identity is missing from the gallery.
Rank1Result rank1_identification(const Matrix& gallery, const std::vector<int>& gallery_identity,
                                 const Matrix& probes, const std::vector<int>& probe_identity,
                                 const std::vector<int>& probe_tier, int num_tiers);

inline constexpr int kHistogramBins = 50;

// Counts of distance = 1 - cosine over [0, 2].
struct Histogram {
  std::vector<long> genuine;
  std::vector<long> imposter;
  double bin_low(int b) const;
  double bin_high(int b) const;
};

Histogram distance_histogram(const ScoreSet& scores, int bins = kHistogramBins);

// Sum over bins of min(genuine share, imposter share); 1 for identical shapes.
double overlap_coefficient(const Histogram& h);

struct FoldSummary {
  std::vector<VerificationMetrics> folds;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation; 0 for one fold
  double eer_mean = 0.0;
  double eer_std = 0.0;
};

FoldSummary summarize_folds(const std::vector<ScoreSet>& folds);

struct EvalProtocol {
  int folds = 10;
  int genuine_per_fold = 150;
  int imposter_per_fold = 150;
  std::uint64_t seed = 5;
  std::vector<double> far_targets{1e-3, 1e-2};

  void validate() const;  // throws ConfigError
};

nlohmann::json eval_protocol_to_json(const EvalProtocol& p);
EvalProtocol eval_protocol_from_json(const nlohmann::json& j);  // unknown keys rejected

struct EvalReport {
  EvalProtocol protocol;
  FoldSummary verification;
  std::vector<TarAtFar> tar;
  Rank1Result rank1;
  std::vector<double> tier_overlap;  // gallery x probe pairs of each tier
  std::vector<Histogram> tier_histogram;
  Histogram histogram;               // pooled over folds
  double overlap = 0.0;
};

// Runs on the held-out identities of `dataset`. Pairs are distinct across
// folds; the gallery is the first frontal sample of each identity and every
// profile sample is a probe.
EvalReport evaluate_protocol(const MlpParams& frontal_encoder, const MlpParams& profile_encoder,
                             const MultiviewDataset& dataset, const EvalProtocol& protocol);

nlohmann::json eval_report_to_json(const EvalReport& report);

// Header bin_low,bin_high,genuine_count,imposter_count.
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);

}  // namespace pacm
