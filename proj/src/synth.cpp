#include "pacm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "pacm/json_io.hpp"

namespace pacm {

using json_io::json;

std::string to_string(View v) { return v == View::frontal ? "frontal" : "profile"; }

View view_from_string(const std::string& s) {
  if (s == "frontal") return View::frontal;
  if (s == "profile") return View::profile;
  throw ConfigError("unknown view '" + s + "'");
}

std::vector<TierSpec> default_tiers() {
  // Six bins standing in for yaw of 15 through 90 degrees.
  return {
      {0.00, 0.00, 0.0}, {0.10, 0.15, 0.4}, {0.20, 0.30, 0.8},
      {0.35, 0.45, 1.2}, {0.50, 0.60, 1.6}, {0.70, 0.75, 2.0},
  };
}

SynthConfig default_synth_config() {
  SynthConfig c;
  c.tiers = default_tiers();
  return c;
}

void SynthConfig::validate() const {
  if (num_identities <= 0) throw ConfigError("num_identities must be positive");
  if (heldout_identities < 0 || heldout_identities > num_identities)
    throw ConfigError("heldout_identities must lie in [0, num_identities]");
  if (samples_per_identity_per_view <= 0)
    throw ConfigError("samples_per_identity_per_view must be positive");
  if (latent_dim <= 0 || input_dim <= 0) throw ConfigError("dimensions must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("noise_sigma must be a nonnegative finite number");
  if (tiers.empty()) throw ConfigError("at least one difficulty tier is required");
  for (const auto& t : tiers)
    if (!(t.extra_noise >= 0.0) || !std::isfinite(t.rotation) || !std::isfinite(t.offset))
      throw ConfigError("tier parameters must be finite with nonnegative extra noise");
  for (const Matrix* m : {&frontal_transform, &profile_transform}) {
    if (m->size() == 0) {
      if (input_dim < latent_dim)
        throw ConfigError("input_dim must be >= latent_dim for full column rank");
      continue;
    }
    if (m->rows() != input_dim || m->cols() != latent_dim)
      throw ConfigError("view transform must be input_dim x latent_dim");
    if (!m->allFinite()) throw ConfigError("view transform has non-finite entries");
    Eigen::ColPivHouseholderQR<Matrix> qr(*m);
    if (qr.rank() < latent_dim)
      throw ConfigError("view transform is rank deficient (rank " +
                        std::to_string(qr.rank()) + " < " + std::to_string(latent_dim) + ")");
  }
}

MultiviewDataset::MultiviewDataset(SynthConfig config, std::vector<Sample> frontal,
                                   std::vector<Sample> profile, IdentitySplit split)
    : config_(std::move(config)),
      frontal_(std::move(frontal)),
      profile_(std::move(profile)),
      split_(std::move(split)) {
  build_index();
}

void MultiviewDataset::build_index() {
  std::set<int> ids;
  std::set<int> instance_ids;
  int max_id = -1;
  for (const auto* list : {&frontal_, &profile_})
    for (const auto& s : *list) {
      if (s.identity < 0) throw DataError("negative identity label");
      if (!instance_ids.insert(s.instance_id).second)
        throw DataError("duplicate instance_id " + std::to_string(s.instance_id));
      ids.insert(s.identity);
      max_id = std::max(max_id, s.identity);
    }
  identities_.assign(ids.begin(), ids.end());
  frontal_by_identity_.assign(static_cast<std::size_t>(max_id + 1), {});
  profile_by_identity_.assign(static_cast<std::size_t>(max_id + 1), {});
  for (std::size_t i = 0; i < frontal_.size(); ++i)
    frontal_by_identity_[static_cast<std::size_t>(frontal_[i].identity)].push_back(i);
  for (std::size_t i = 0; i < profile_.size(); ++i)
    profile_by_identity_[static_cast<std::size_t>(profile_[i].identity)].push_back(i);
  complete_ = std::all_of(identities_.begin(), identities_.end(), [&](int id) {
    return !frontal_by_identity_[static_cast<std::size_t>(id)].empty() &&
           !profile_by_identity_[static_cast<std::size_t>(id)].empty();
  });
}

int MultiviewDataset::input_dim() const {
  if (!frontal_.empty()) return static_cast<int>(frontal_.front().features.size());
  if (!profile_.empty()) return static_cast<int>(profile_.front().features.size());
  return config_.input_dim;
}

int MultiviewDataset::num_tiers() const { return static_cast<int>(config_.tiers.size()); }

const std::vector<std::size_t>& MultiviewDataset::indices_of(View v, int identity) const {
  static const std::vector<std::size_t> empty;
  const auto& table = v == View::frontal ? frontal_by_identity_ : profile_by_identity_;
  if (identity < 0 || static_cast<std::size_t>(identity) >= table.size()) return empty;
  return table[static_cast<std::size_t>(identity)];
}

MultiviewDataset MultiviewDataset::restrict_to(const std::vector<int>& identities) const {
  const std::set<int> keep(identities.begin(), identities.end());
  std::vector<Sample> f;
  std::vector<Sample> p;
  for (const auto& s : frontal_)
    if (keep.count(s.identity)) f.push_back(s);
  for (const auto& s : profile_)
    if (keep.count(s.identity)) p.push_back(s);
  int next = 0;
  for (auto& s : f) s.instance_id = next++;
  for (auto& s : p) s.instance_id = next++;
  IdentitySplit split;
  for (int id : split_.train)
    if (keep.count(id)) split.train.push_back(id);
  for (int id : split_.heldout)
    if (keep.count(id)) split.heldout.push_back(id);
  return MultiviewDataset(config_, std::move(f), std::move(p), std::move(split));
}

Matrix MultiviewDataset::features(View v, const std::vector<std::size_t>& idx) const {
  const auto& list = samples(v);
  Matrix out(static_cast<Eigen::Index>(idx.size()), input_dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= list.size()) throw UsageError("sample index out of range");
    out.row(static_cast<Eigen::Index>(i)) = list[idx[i]].features.transpose();
  }
  return out;
}

Matrix MultiviewDataset::all_features(View v) const {
  std::vector<std::size_t> idx(samples(v).size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return features(v, idx);
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * n(rng);
  return m;
}

// Rotates latent coordinate planes (0,1), (2,3), ... by `angle`.
Vector rotate_latent(const Vector& u, double angle) {
  Vector out = u;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (Eigen::Index i = 0; i + 1 < u.size(); i += 2) {
    out[i] = c * u[i] - s * u[i + 1];
    out[i + 1] = s * u[i] + c * u[i + 1];
  }
  return out;
}

}  // namespace

MultiviewDataset generate_dataset(const SynthConfig& config_in) {
  config_in.validate();
  SynthConfig config = config_in;
  std::mt19937_64 rng(config.seed);
  const double transform_scale = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
  if (config.frontal_transform.size() == 0)
    config.frontal_transform = gaussian(config.input_dim, config.latent_dim, transform_scale, rng);
  if (config.profile_transform.size() == 0)
    config.profile_transform = gaussian(config.input_dim, config.latent_dim, transform_scale, rng);
  config.validate();

  Vector offset_dir = gaussian(config.input_dim, 1, 1.0, rng);
  offset_dir.normalize();
  const Matrix latents = gaussian(config.num_identities, config.latent_dim, 1.0, rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  const int per_view = config.samples_per_identity_per_view;
  const int tiers = static_cast<int>(config.tiers.size());
  std::vector<Sample> frontal;
  std::vector<Sample> profile;
  for (int c = 0; c < config.num_identities; ++c) {
    const Vector u = latents.row(c).transpose();
    for (int k = 0; k < per_view; ++k) {
      Sample s;
      s.identity = c;
      s.view = View::frontal;
      s.tier = 0;
      s.features = config.frontal_transform * u;
      for (Eigen::Index i = 0; i < s.features.size(); ++i)
        s.features[i] += config.noise_sigma * noise(rng);
      frontal.push_back(std::move(s));
    }
    for (int k = 0; k < per_view; ++k) {
      Sample s;
      s.identity = c;
      s.view = View::profile;
      s.tier = (c * per_view + k) % tiers;
      const auto& tier = config.tiers[static_cast<std::size_t>(s.tier)];
      s.features = config.profile_transform * rotate_latent(u, tier.rotation) +
                   tier.offset * offset_dir;
      const double sigma = config.noise_sigma + tier.extra_noise;
      for (Eigen::Index i = 0; i < s.features.size(); ++i) s.features[i] += sigma * noise(rng);
      profile.push_back(std::move(s));
    }
  }
  int next = 0;
  for (auto& s : frontal) s.instance_id = next++;
  for (auto& s : profile) s.instance_id = next++;

  IdentitySplit split;
  const int train_count = config.num_identities - config.heldout_identities;
  for (int c = 0; c < config.num_identities; ++c)
    (c < train_count ? split.train : split.heldout).push_back(c);
  return MultiviewDataset(std::move(config), std::move(frontal), std::move(profile),
                          std::move(split));
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

void require_complete(const MultiviewDataset& dataset) {
  if (dataset.identities().empty()) throw DataError("dataset has no samples");
  if (!dataset.complete())
    throw DataError("an identity is missing samples in one view");
}

}  // namespace

PairIndex sample_genuine_pair(const MultiviewDataset& dataset, std::mt19937_64& rng) {
  require_complete(dataset);
  const int id = pick(dataset.identities(), rng);
  PairIndex p;
  p.frontal = pick(dataset.indices_of(View::frontal, id), rng);
  p.profile = pick(dataset.indices_of(View::profile, id), rng);
  return p;
}

PairIndex sample_imposter_pair(const MultiviewDataset& dataset, std::mt19937_64& rng) {
  if (dataset.identities().size() < 2)
    throw DataError("imposter pairs need at least two identities");
  if (dataset.frontal().empty() || dataset.profile().empty())
    throw DataError("imposter pairs need samples in both views");
  std::uniform_int_distribution<std::size_t> df(0, dataset.frontal().size() - 1);
  std::uniform_int_distribution<std::size_t> dp(0, dataset.profile().size() - 1);
  for (;;) {
    PairIndex p{df(rng), dp(rng)};
    if (dataset.frontal()[p.frontal].identity != dataset.profile()[p.profile].identity)
      return p;
  }
}

std::vector<PairIndex> sample_genuine_batch(const MultiviewDataset& dataset,
                                            std::size_t batch_size, std::mt19937_64& rng) {
  require_complete(dataset);
  std::vector<int> ids = dataset.identities();
  if (batch_size > ids.size())
    throw DataError("batch of " + std::to_string(batch_size) + " distinct identities requested but only " +
                    std::to_string(ids.size()) + " exist");
  // Partial Fisher-Yates over the identity list.
  std::vector<PairIndex> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, ids.size() - 1);
    std::swap(ids[i], ids[d(rng)]);
    PairIndex p;
    p.frontal = pick(dataset.indices_of(View::frontal, ids[i]), rng);
    p.profile = pick(dataset.indices_of(View::profile, ids[i]), rng);
    batch.push_back(p);
  }
  return batch;
}

json synth_config_to_json(const SynthConfig& c) {
  json tiers = json::array();
  for (const auto& t : c.tiers)
    tiers.push_back({{"extra_noise", t.extra_noise}, {"rotation", t.rotation}, {"offset", t.offset}});
  json j = {
      {"seed", c.seed},
      {"num_identities", c.num_identities},
      {"heldout_identities", c.heldout_identities},
      {"samples_per_identity_per_view", c.samples_per_identity_per_view},
      {"latent_dim", c.latent_dim},
      {"input_dim", c.input_dim},
      {"noise_sigma", c.noise_sigma},
      {"tiers", tiers},
  };
  if (c.frontal_transform.size() != 0)
    j["frontal_transform"] = json_io::matrix_to_json(c.frontal_transform);
  if (c.profile_transform.size() != 0)
    j["profile_transform"] = json_io::matrix_to_json(c.profile_transform);
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  constexpr std::string_view ctx = "synth config";
  json_io::reject_unknown_keys(j,
                               {"seed", "num_identities", "heldout_identities",
                                "samples_per_identity_per_view", "latent_dim", "input_dim",
                                "noise_sigma", "tiers", "frontal_transform", "profile_transform"},
                               ctx);
  SynthConfig c = default_synth_config();
  json_io::get_if_present(j, "seed", c.seed, ctx);
  json_io::get_if_present(j, "num_identities", c.num_identities, ctx);
  json_io::get_if_present(j, "heldout_identities", c.heldout_identities, ctx);
  json_io::get_if_present(j, "samples_per_identity_per_view", c.samples_per_identity_per_view, ctx);
  json_io::get_if_present(j, "latent_dim", c.latent_dim, ctx);
  json_io::get_if_present(j, "input_dim", c.input_dim, ctx);
  json_io::get_if_present(j, "noise_sigma", c.noise_sigma, ctx);
  if (j.contains("tiers")) {
    if (!j["tiers"].is_array()) throw ConfigError("synth config: 'tiers' must be an array");
    c.tiers.clear();
    for (const auto& t : j["tiers"]) {
      json_io::reject_unknown_keys(t, {"extra_noise", "rotation", "offset"}, "synth config tier");
      TierSpec s;
      json_io::get_if_present(t, "extra_noise", s.extra_noise, "synth config tier");
      json_io::get_if_present(t, "rotation", s.rotation, "synth config tier");
      json_io::get_if_present(t, "offset", s.offset, "synth config tier");
      c.tiers.push_back(s);
    }
  }
  if (j.contains("frontal_transform"))
    c.frontal_transform = json_io::matrix_from_json(j["frontal_transform"], "frontal_transform");
  if (j.contains("profile_transform"))
    c.profile_transform = json_io::matrix_from_json(j["profile_transform"], "profile_transform");
  c.validate();
  return c;
}

json dataset_to_json(const MultiviewDataset& d) {
  json samples = json::array();
  for (const auto* list : {&d.frontal(), &d.profile()})
    for (const auto& s : *list)
      samples.push_back({{"instance_id", s.instance_id},
                         {"identity", s.identity},
                         {"view", to_string(s.view)},
                         {"tier", s.tier},
                         {"features", json_io::vector_to_json(s.features)}});
  return {
      {"format", "pacm-dataset"},
      {"version", 1},
      {"seed", d.config().seed},
      {"config", synth_config_to_json(d.config())},
      {"split", {{"train", d.split().train}, {"heldout", d.split().heldout}}},
      {"samples", samples},
  };
}

MultiviewDataset dataset_from_json(const json& j) {
  constexpr std::string_view ctx = "dataset";
  json_io::reject_unknown_keys(j, {"format", "version", "seed", "config", "split", "samples"}, ctx);
  if (json_io::get<std::string>(j, "format", ctx) != "pacm-dataset")
    throw ConfigError("dataset: unexpected format tag");
  if (json_io::get<int>(j, "version", ctx) != 1) throw ConfigError("dataset: unsupported version");
  SynthConfig config = synth_config_from_json(j.at("config"));
  const auto& split_j = j.at("split");
  json_io::reject_unknown_keys(split_j, {"train", "heldout"}, "dataset split");
  IdentitySplit split{json_io::get<std::vector<int>>(split_j, "train", "dataset split"),
                      json_io::get<std::vector<int>>(split_j, "heldout", "dataset split")};
  std::vector<Sample> frontal;
  std::vector<Sample> profile;
  for (const auto& sj : j.at("samples")) {
    json_io::reject_unknown_keys(sj, {"instance_id", "identity", "view", "tier", "features"},
                                 "dataset sample");
    Sample s;
    s.instance_id = json_io::get<int>(sj, "instance_id", "dataset sample");
    s.identity = json_io::get<int>(sj, "identity", "dataset sample");
    s.view = view_from_string(json_io::get<std::string>(sj, "view", "dataset sample"));
    s.tier = json_io::get<int>(sj, "tier", "dataset sample");
    s.features = json_io::vector_from_json(sj.at("features"), "features");
    if (s.features.size() != config.input_dim)
      throw ConfigError("dataset sample " + std::to_string(s.instance_id) +
                        " has the wrong feature width");
    if (s.tier < 0 || s.tier >= static_cast<int>(config.tiers.size()))
      throw ConfigError("dataset sample tier out of range");
    (s.view == View::frontal ? frontal : profile).push_back(std::move(s));
  }
  try {
    return MultiviewDataset(std::move(config), std::move(frontal), std::move(profile),
                            std::move(split));
  } catch (const DataError& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
}

void save_dataset(const MultiviewDataset& dataset, const std::filesystem::path& path) {
  json_io::write_json_file(dataset_to_json(dataset), path);
}

MultiviewDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_json(json_io::read_json_file(path));
}

void DiscreteToyJoint::validate() const {
  if (joint.size() == 0) throw ValidationError("empty probability table");
  if (!joint.allFinite() || (joint.array() < 0.0).any())
    throw ValidationError("probability table has negative or non-finite entries");
  if (std::abs(joint.sum() - 1.0) > 1e-12)
    throw ValidationError("probability table does not sum to 1");
}

Vector DiscreteToyJoint::marginal_a() const { return joint.rowwise().sum(); }
Vector DiscreteToyJoint::marginal_b() const { return joint.colwise().sum().transpose(); }

std::pair<int, int> DiscreteToyJoint::sample_pair(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double target = u(rng);
  const Eigen::Index cols = joint.cols();
  for (Eigen::Index i = 0; i < joint.size(); ++i) {
    const Eigen::Index a = i / cols;
    const Eigen::Index b = i % cols;
    target -= joint(a, b);
    if (target < 0.0) return {static_cast<int>(a), static_cast<int>(b)};
  }
  // Rounding left a sliver of mass; take the last cell with positive mass.
  for (Eigen::Index i = joint.size(); i-- > 0;)
    if (joint(i / cols, i % cols) > 0.0)
      return {static_cast<int>(i / cols), static_cast<int>(i % cols)};
  return {0, 0};
}

int DiscreteToyJoint::sample_b_marginal(std::mt19937_64& rng) const {
  const Vector pb = marginal_b();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double target = u(rng);
  for (Eigen::Index b = 0; b < pb.size(); ++b) {
    target -= pb[b];
    if (target < 0.0) return static_cast<int>(b);
  }
  return static_cast<int>(pb.size() - 1);
}

DiscreteToyJoint make_symmetric_toy(int symbols, double agreement) {
  if (symbols < 2) throw ValidationError("toy joint needs at least two symbols");
  if (!(agreement >= 0.0 && agreement <= 1.0)) throw ValidationError("agreement must lie in [0,1]");
  const double n = symbols;
  DiscreteToyJoint toy;
  toy.joint = Matrix::Constant(symbols, symbols, (1.0 - agreement) / (n * (n - 1.0)));
  toy.joint.diagonal().setConstant(agreement / n);
  return toy;
}

double exact_mi(const DiscreteToyJoint& toy) {
  toy.validate();
  const Vector pa = toy.marginal_a();
  const Vector pb = toy.marginal_b();
  double mi = 0.0;
  for (Eigen::Index a = 0; a < toy.joint.rows(); ++a)
    for (Eigen::Index b = 0; b < toy.joint.cols(); ++b) {
      const double p = toy.joint(a, b);
      if (p > 0.0) mi += p * std::log(p / (pa[a] * pb[b]));
    }
  return std::max(mi, 0.0);
}

}  // namespace pacm
