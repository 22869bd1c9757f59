#pragma once

// Synthetic two-view identity data. Every identity owns a latent code; a
// frontal sample is a fixed linear view of that code plus isotropic noise, a
// profile sample goes through a second linear view after a tier-dependent
// latent rotation, with extra noise and a shift along a fixed direction.
// Higher tiers play the role of more extreme yaw.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "pacm/numeric.hpp"

namespace pacm {

enum class View { frontal, profile };

inline View opposite(View v) {
  return v == View::frontal ? View::profile : View::frontal;
}
std::string to_string(View v);
View view_from_string(const std::string& s);

struct TierSpec {
  double extra_noise = 0.0;
  double rotation = 0.0;  // radians, applied to consecutive latent planes
  double offset = 0.0;    // shift along the profile offset direction
};

struct SynthConfig {
  std::uint64_t seed = 7;
  int num_identities = 250;
  int heldout_identities = 50;
  int samples_per_identity_per_view = 6;
  int latent_dim = 16;
  int input_dim = 48;
  double noise_sigma = 0.6;
  // input_dim x latent_dim. Left empty, both are drawn from the seed.
  Matrix frontal_transform;
  Matrix profile_transform;
  std::vector<TierSpec> tiers;

  // Throws ConfigError; includes the full-column-rank check on transforms.
  void validate() const;
};

// Six tiers of increasing severity.
SynthConfig default_synth_config();
std::vector<TierSpec> default_tiers();

struct Sample {
  Vector features;
  int identity = 0;
  View view = View::frontal;
  int tier = 0;
  int instance_id = 0;
};

struct IdentitySplit {
  std::vector<int> train;
  std::vector<int> heldout;
};

class MultiviewDataset {
 public:
  MultiviewDataset() = default;
  MultiviewDataset(SynthConfig config, std::vector<Sample> frontal,
                   std::vector<Sample> profile, IdentitySplit split);

  const SynthConfig& config() const { return config_; }
  const std::vector<Sample>& frontal() const { return frontal_; }
  const std::vector<Sample>& profile() const { return profile_; }
  const std::vector<Sample>& samples(View v) const {
    return v == View::frontal ? frontal_ : profile_;
  }
  const IdentitySplit& split() const { return split_; }

  int input_dim() const;
  int num_tiers() const;
  // Identities that have at least one sample in either view, ascending.
  const std::vector<int>& identities() const { return identities_; }
  // Positions (into samples(v)) of the samples of one identity.
  const std::vector<std::size_t>& indices_of(View v, int identity) const;
  // True when every listed identity has samples in both views.
  bool complete() const { return complete_; }

  // Samples of the given identities, instance ids renumbered contiguously
  // (frontal first). Identity labels are kept.
  MultiviewDataset restrict_to(const std::vector<int>& identities) const;
  MultiviewDataset train_part() const { return restrict_to(split_.train); }
  MultiviewDataset heldout_part() const { return restrict_to(split_.heldout); }

  // Rows are the features of samples(v)[idx[i]].
  Matrix features(View v, const std::vector<std::size_t>& idx) const;
  Matrix all_features(View v) const;

 private:
  void build_index();

  SynthConfig config_;
  std::vector<Sample> frontal_;
  std::vector<Sample> profile_;
  IdentitySplit split_;
  std::vector<int> identities_;
  std::vector<std::vector<std::size_t>> frontal_by_identity_;
  std::vector<std::vector<std::size_t>> profile_by_identity_;
  bool complete_ = true;
};

MultiviewDataset generate_dataset(const SynthConfig& config);

// Positions into dataset.frontal() / dataset.profile().
struct PairIndex {
  std::size_t frontal = 0;
  std::size_t profile = 0;
};

// Identity uniform over the dataset's identities, then one frontal and one
// profile sample drawn independently given that identity.
PairIndex sample_genuine_pair(const MultiviewDataset& dataset,
                              std::mt19937_64& rng);

// Both sides from their marginals; draws with matching identities are
// rejected.
PairIndex sample_imposter_pair(const MultiviewDataset& dataset,
                               std::mt19937_64& rng);

// batch_size genuine pairs with pairwise distinct identities, so every other
// pair in the batch is a valid imposter for each anchor.
std::vector<PairIndex> sample_genuine_batch(const MultiviewDataset& dataset,
                                            std::size_t batch_size,
                                            std::mt19937_64& rng);

nlohmann::json synth_config_to_json(const SynthConfig& config);
// Rejects unknown keys.
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json dataset_to_json(const MultiviewDataset& dataset);
MultiviewDataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const MultiviewDataset& dataset,
                  const std::filesystem::path& path);
MultiviewDataset load_dataset(const std::filesystem::path& path);

// Joint distribution over symbol pairs with exactly computable mutual
// information.
struct DiscreteToyJoint {
  Matrix joint;  // |A| x |B|, nonnegative, sums to 1

  void validate() const;  // throws ValidationError
  Vector marginal_a() const;
  Vector marginal_b() const;
  // (a, b) drawn from the joint.
  std::pair<int, int> sample_pair(std::mt19937_64& rng) const;
  int sample_b_marginal(std::mt19937_64& rng) const;
};

// p(a, a) = agreement / n, off-diagonal mass spread evenly.
DiscreteToyJoint make_symmetric_toy(int symbols, double agreement);

// Sum of p(a,b) ln(p(a,b) / (p(a) p(b))) in nats.
double exact_mi(const DiscreteToyJoint& toy);

}  // namespace pacm
