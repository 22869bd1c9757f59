#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "pacm/json_io.hpp"
#include "pacm/synth.hpp"

using namespace pacm;

namespace {

SynthConfig small_config(int identities, int per_view) {
  SynthConfig c = default_synth_config();
  c.num_identities = identities;
  c.heldout_identities = 0;
  c.samples_per_identity_per_view = per_view;
  c.latent_dim = 4;
  c.input_dim = 6;
  return c;
}

Sample make_sample(int id, View v, int instance) {
  Sample s;
  s.identity = id;
  s.view = v;
  s.instance_id = instance;
  s.features = Vector::Constant(2, id);
  return s;
}

}  // namespace

TEST_CASE("generate_dataset: deterministic under the seed") {
  const auto c = small_config(10, 3);
  const auto a = generate_dataset(c);
  const auto b = generate_dataset(c);
  CHECK(dataset_to_json(a).dump() == dataset_to_json(b).dump());
  auto other = c;
  other.seed += 1;
  CHECK(dataset_to_json(generate_dataset(other)).dump() != dataset_to_json(a).dump());
}

TEST_CASE("generate_dataset: zero noise makes frontal samples of an identity equal") {
  auto c = small_config(5, 4);
  c.noise_sigma = 0.0;
  const auto d = generate_dataset(c);
  for (int id : d.identities()) {
    const auto& idx = d.indices_of(View::frontal, id);
    for (auto i : idx) CHECK(d.frontal()[i].features == d.frontal()[idx.front()].features);
  }
}

TEST_CASE("generate_dataset: counts, tiers and unique instance ids") {
  auto c = small_config(200, 4);
  const auto d = generate_dataset(c);
  CHECK(d.frontal().size() == 800);
  CHECK(d.profile().size() == 800);
  std::set<int> ids;
  std::map<int, int> per_tier;
  for (const auto& s : d.frontal()) ids.insert(s.instance_id);
  for (const auto& s : d.profile()) {
    ids.insert(s.instance_id);
    CHECK(s.tier >= 0);
    CHECK(s.tier < 6);
    ++per_tier[s.tier];
  }
  CHECK(ids.size() == 1600);
  CHECK(per_tier.size() == 6);
  for (int id : d.identities()) {
    CHECK(d.indices_of(View::frontal, id).size() == 4);
    CHECK(d.indices_of(View::profile, id).size() == 4);
  }
}

TEST_CASE("generate_dataset: train and held-out identities are disjoint") {
  auto c = small_config(30, 2);
  c.heldout_identities = 8;
  const auto d = generate_dataset(c);
  CHECK(d.split().train.size() == 22);
  CHECK(d.split().heldout.size() == 8);
  const std::set<int> train(d.split().train.begin(), d.split().train.end());
  for (int h : d.split().heldout) CHECK(train.count(h) == 0);
  const auto held = d.heldout_part();
  for (const auto& s : held.profile()) CHECK(train.count(s.identity) == 0);
  CHECK(held.frontal().size() == 16);
  CHECK(held.frontal().front().instance_id == 0);
  CHECK(held.profile().front().instance_id == 16);
}

TEST_CASE("generate_dataset: rank-deficient transform is a config error") {
  auto c = small_config(4, 1);
  c.frontal_transform = Matrix::Zero(6, 4);
  c.frontal_transform.col(0).setOnes();
  c.frontal_transform.col(1).setOnes();
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  auto narrow = small_config(4, 1);
  narrow.input_dim = 3;
  CHECK_THROWS_AS(generate_dataset(narrow), ConfigError);
}

TEST_CASE("sample_genuine_pair: identities always match") {
  const auto d = generate_dataset(small_config(12, 3));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto p = sample_genuine_pair(d, rng);
    CHECK(d.frontal()[p.frontal].identity == d.profile()[p.profile].identity);
  }
}

TEST_CASE("sample_genuine_pair: single identity is always returned") {
  const auto d = generate_dataset(small_config(1, 3));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) CHECK(d.frontal()[sample_genuine_pair(d, rng).frontal].identity == 0);
}

TEST_CASE("sample_genuine_pair: identity frequencies are uniform within 3 sigma") {
  const auto d = generate_dataset(small_config(8, 2));
  std::mt19937_64 rng(3);
  const int draws = 100000;
  std::vector<int> counts(8, 0);
  for (int i = 0; i < draws; ++i) ++counts[d.frontal()[sample_genuine_pair(d, rng).frontal].identity];
  const double p = 1.0 / 8.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - draws * p) <= 3 * sigma);
}

TEST_CASE("sample_genuine_pair: identity missing a view is a data error") {
  MultiviewDataset d(SynthConfig{}, {make_sample(0, View::frontal, 0), make_sample(1, View::frontal, 1)},
                     {make_sample(0, View::profile, 2)}, {});
  std::mt19937_64 rng(4);
  CHECK_THROWS_AS(sample_genuine_pair(d, rng), DataError);
}

TEST_CASE("sample_imposter_pair: identities always differ") {
  const auto d = generate_dataset(small_config(5, 3));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto p = sample_imposter_pair(d, rng);
    CHECK(d.frontal()[p.frontal].identity != d.profile()[p.profile].identity);
  }
}

TEST_CASE("sample_imposter_pair: two identities give both orderings evenly") {
  const auto d = generate_dataset(small_config(2, 3));
  std::mt19937_64 rng(6);
  const int draws = 20000;
  int zero_first = 0;
  for (int i = 0; i < draws; ++i)
    zero_first += d.frontal()[sample_imposter_pair(d, rng).frontal].identity == 0;
  const double sigma = std::sqrt(draws * 0.25);
  CHECK(std::abs(zero_first - draws / 2.0) <= 3 * sigma);
}

TEST_CASE("sample_imposter_pair: matches off-diagonal product of marginals (chi-square)") {
  // Unequal per-identity counts so the marginals are not uniform.
  const std::vector<int> frontal_counts = {1, 2, 3, 4};
  const std::vector<int> profile_counts = {4, 1, 2, 3};
  std::vector<Sample> f;
  std::vector<Sample> p;
  int next = 0;
  for (int id = 0; id < 4; ++id) {
    for (int k = 0; k < frontal_counts[id]; ++k) f.push_back(make_sample(id, View::frontal, next++));
    for (int k = 0; k < profile_counts[id]; ++k) p.push_back(make_sample(id, View::profile, next++));
  }
  MultiviewDataset d(SynthConfig{}, f, p, {});
  // Exact expected cell probabilities.
  double diag = 0.0;
  for (int id = 0; id < 4; ++id) diag += frontal_counts[id] / 10.0 * profile_counts[id] / 10.0;
  const int draws = 50000;
  Matrix observed = Matrix::Zero(4, 4);
  std::mt19937_64 rng(7);
  for (int i = 0; i < draws; ++i) {
    const auto pair = sample_imposter_pair(d, rng);
    observed(d.frontal()[pair.frontal].identity, d.profile()[pair.profile].identity) += 1;
  }
  double chi2 = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      if (a == b) {
        CHECK(observed(a, b) == 0);
        continue;
      }
      const double expected =
          draws * (frontal_counts[a] / 10.0) * (profile_counts[b] / 10.0) / (1.0 - diag);
      chi2 += (observed(a, b) - expected) * (observed(a, b) - expected) / expected;
    }
  // 12 cells, 11 degrees of freedom; 0.99 quantile.
  CHECK(chi2 < 24.725);
}

TEST_CASE("sample_imposter_pair: fewer than two identities is a data error") {
  const auto d = generate_dataset(small_config(1, 2));
  std::mt19937_64 rng(8);
  CHECK_THROWS_AS(sample_imposter_pair(d, rng), DataError);
}

TEST_CASE("sample_genuine_batch: distinct identities, too large a batch rejected") {
  const auto d = generate_dataset(small_config(20, 2));
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = sample_genuine_batch(d, 16, rng);
    std::set<int> ids;
    for (const auto& p : batch) {
      CHECK(d.frontal()[p.frontal].identity == d.profile()[p.profile].identity);
      ids.insert(d.frontal()[p.frontal].identity);
    }
    CHECK(ids.size() == 16);
  }
  CHECK_THROWS_AS(sample_genuine_batch(d, 21, rng), DataError);
}

TEST_CASE("exact_mi: reference tables") {
  DiscreteToyJoint independent;
  Vector pa(3), pb(2);
  pa << 0.2, 0.3, 0.5;
  pb << 0.6, 0.4;
  independent.joint = pa * pb.transpose();
  CHECK(std::abs(exact_mi(independent)) < 1e-15);

  DiscreteToyJoint copy;
  copy.joint = Matrix::Identity(8, 8) / 8.0;
  CHECK(exact_mi(copy) == doctest::Approx(std::log(8.0)).epsilon(1e-14));

  DiscreteToyJoint two;
  two.joint.resize(2, 2);
  two.joint << 0.4, 0.1, 0.1, 0.4;
  // Direct summation, p(a) = p(b) = 0.5.
  const double oracle = 2 * 0.4 * std::log(0.4 / 0.25) + 2 * 0.1 * std::log(0.1 / 0.25);
  CHECK(exact_mi(two) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(exact_mi(two) == doctest::Approx(0.1927).epsilon(1e-3));
}

TEST_CASE("exact_mi: nonnegative and bounded by ln(min(|A|,|B|))") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(2, 9);
  for (int trial = 0; trial < 500; ++trial) {
    const int rows = size(rng), cols = size(rng);
    DiscreteToyJoint t;
    t.joint.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.joint.size(); ++i) {
      const double x = u(rng);
      t.joint.data()[i] = x < 0.3 ? 0.0 : x;
    }
    if (t.joint.sum() == 0.0) t.joint(0, 0) = 1.0;
    t.joint /= t.joint.sum();
    Eigen::Index r = 0, c = 0;
    t.joint.maxCoeff(&r, &c);
    t.joint(r, c) += 1.0 - t.joint.sum();
    const double mi = exact_mi(t);
    CHECK(mi >= 0.0);
    CHECK(mi <= std::log(std::min(rows, cols)) + 1e-12);
  }
}

TEST_CASE("exact_mi: invalid tables are rejected") {
  DiscreteToyJoint bad;
  bad.joint = Matrix::Constant(2, 2, 0.3);
  CHECK_THROWS_AS(exact_mi(bad), ValidationError);
  bad.joint << 0.5, 0.6, -0.1, 0.0;
  CHECK_THROWS_AS(exact_mi(bad), ValidationError);
}

TEST_CASE("toy joint sampling follows the table") {
  const auto toy = make_symmetric_toy(4, 0.7);
  std::mt19937_64 rng(11);
  int agree = 0;
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    const auto [a, b] = toy.sample_pair(rng);
    agree += a == b;
  }
  CHECK(std::abs(agree - 0.7 * draws) <= 3 * std::sqrt(draws * 0.21));
}

TEST_CASE("dataset JSON: round trip and strict keys") {
  auto c = small_config(6, 2);
  c.heldout_identities = 2;
  const auto d = generate_dataset(c);
  const auto path = std::filesystem::temp_directory_path() / "pacm_test_dataset.json";
  save_dataset(d, path);
  const auto back = load_dataset(path);
  CHECK(dataset_to_json(back).dump() == dataset_to_json(d).dump());
  CHECK(back.frontal()[3].features == d.frontal()[3].features);
  std::filesystem::remove(path);

  auto j = dataset_to_json(d);
  j["samples"][0]["color"] = "blue";
  CHECK_THROWS_AS(dataset_from_json(j), ConfigError);
  auto k = synth_config_to_json(c);
  k["bogus"] = 1;
  CHECK_THROWS_WITH_AS(synth_config_from_json(k), doctest::Contains("bogus"), ConfigError);
}
