// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "metric_oracle.hpp"
#include "pacm/checkpoint.hpp"
#include "pacm/contrastive.hpp"
#include "pacm/eval.hpp"
#include "pacm/gradcheck.hpp"
#include "pacm/json_io.hpp"
#include "pacm/memory.hpp"
#include "pacm/mi_study.hpp"
#include "pacm/synth.hpp"
#include "pacm/trainer.hpp"
#include "support.hpp"

using namespace pacm;
using pacm::testing::random_unit_rows;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradient_suite() {
  GradcheckConfig c = gradcheck_config_from_json(json_io::read_json_file(PACM_CONFIG_DIR "/gradcheck.json"));
  const auto r = run_gradcheck(c);
  std::set<int> configs;
  std::set<std::string> losses;
  for (const auto& e : r.entries) {
    configs.insert(e.configuration);
    losses.insert(e.loss);
  }
  const bool covered = configs.size() >= 5 && losses.size() == 6;
  return {covered && r.worst() < 1e-4 && r.seconds < 60.0,
          fmt("worst rel err %.2e over %zu configs, %zu losses, %.2f s", r.worst(), configs.size(),
              losses.size(), r.seconds)};
}

// ---- 2 ---------------------------------------------------------------------

MultiviewDataset one_per_identity(int identities, std::uint64_t seed) {
  SynthConfig c = default_synth_config();
  c.seed = seed;
  c.num_identities = identities;
  c.heldout_identities = 0;
  c.samples_per_identity_per_view = 1;
  c.latent_dim = 4;
  c.input_dim = 6;
  return generate_dataset(c);
}

Verdict pacm_pac_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int b = 4 + static_cast<int>(seed % 5);
    const auto d = one_per_identity(b, seed);
    auto buf = init_buffer(d, 8, 0.5, seed);
    std::mt19937_64 rng(1000 + seed);
    const Matrix zf = random_unit_rows(b, 8, rng);
    const Matrix zp = random_unit_rows(b, 8, rng);
    std::vector<PairRef> pairs;
    for (int i = 0; i < b; ++i) {
      buf.overwrite_entry(View::frontal, i, zf.row(i).transpose());
      buf.overwrite_entry(View::profile, b + i, zp.row(i).transpose());
      pairs.push_back({i, b + i, i});
    }
    const auto mem = pacm_loss(zf, zp, buf, pairs, static_cast<std::size_t>(b - 1), 0.07, rng);
    const auto pac = in_batch_pac_loss(zf, zp, 0.07);
    worst = std::max(worst, std::abs(mem.loss - pac.loss));
  }
  return {worst < 1e-10, fmt("max |L_PACM - L_PAC| = %.2e over 20 batches", worst)};
}

// ---- 3 ---------------------------------------------------------------------

Verdict mi_bound() {
  const auto r = run_mi_study(mi_study_config_from_json(json_io::read_json_file(PACM_CONFIG_DIR "/mi.json")));
  std::string rows;
  for (const auto& row : r.rows)
    rows += fmt(" k=%d: %.4f+-%.4f", row.k, row.mean_bound, row.standard_error);
  return {r.passed(), fmt("exact MI %.4f;%s; non-decreasing %s", r.exact_mi, rows.c_str(),
                          r.non_decreasing ? "yes" : "no")};
}

// ---- reference configuration ---------------------------------------------

SynthConfig reference_synth(int s) {
  SynthConfig c = synth_config_from_json(json_io::read_json_file(PACM_CONFIG_DIR "/synth.json"));
  c.seed = 100 + static_cast<std::uint64_t>(s);
  return c;
}

TrainConfig reference_train(int s) {
  TrainConfig c = train_config_from_json(json_io::read_json_file(PACM_CONFIG_DIR "/train.json"));
  c.seed = static_cast<std::uint64_t>(s);
  return c;
}

// ---- 4 ---------------------------------------------------------------------

Verdict asymmetry() {
  const auto data = generate_dataset(reference_synth(1)).train_part();
  TrainConfig c = reference_train(1);
  c.lambda2 = 0.0;
  c.pada_warmup_epochs = 0;
  Trainer t(c, data);
  const MlpParams f0 = t.frontal_encoder();
  const MlpParams p0 = t.profile_encoder();
  const auto log = t.run_epoch();
  const bool frozen = same_parameters(t.frontal_encoder(), f0);
  const bool moved = !same_parameters(t.profile_encoder(), p0);
  return {frozen && moved, fmt("%zu iterations; frontal bit-identical %s, profile moved %s", log.size(),
                               frozen ? "yes" : "no", moved ? "yes" : "no")};
}

// ---- 5 ---------------------------------------------------------------------

Verdict memory_invariants() {
  SynthConfig sc = default_synth_config();
  sc.num_identities = 40;
  sc.heldout_identities = 0;
  sc.samples_per_identity_per_view = 5;
  const auto d = generate_dataset(sc);
  auto buf = init_buffer(d, 32, 0.5, 3);
  const int n = static_cast<int>(buf.rows(View::frontal));
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> inst(0, 2 * n - 1);
  for (int step = 0; step < 10000; ++step) {
    const int id = inst(rng);
    const View v = id < n ? View::frontal : View::profile;
    buf.update_entry(v, id, random_unit_rows(1, 32, rng).row(0).transpose());
  }
  double drift = 0.0;
  for (View v : {View::frontal, View::profile})
    drift = std::max(drift, (buf.entries(v).rowwise().norm().array() - 1.0).abs().maxCoeff());

  // One batch of updates: every other row keeps its bits.
  const Matrix f_before = buf.entries(View::frontal);
  const Matrix p_before = buf.entries(View::profile);
  std::set<int> touched;
  while (touched.size() < 16) touched.insert(inst(rng));
  for (int id : touched)
    buf.update_entry(id < n ? View::frontal : View::profile, id,
                     random_unit_rows(1, 32, rng).row(0).transpose());
  int changed = 0, stray = 0;
  for (int id = 0; id < 2 * n; ++id) {
    const bool front = id < n;
    const Eigen::Index r = front ? id : id - n;
    const bool same = front ? buf.entries(View::frontal).row(r) == f_before.row(r)
                            : buf.entries(View::profile).row(r) == p_before.row(r);
    if (!same) (touched.count(id) ? changed : stray) += 1;
  }

  // And through the trainer: exactly 2B rows per iteration.
  const auto data = generate_dataset(reference_synth(1)).train_part();
  Trainer t(reference_train(1), data);
  const Matrix tf = t.memory().entries(View::frontal);
  const Matrix tp = t.memory().entries(View::profile);
  t.step();
  int trainer_changed = 0;
  for (Eigen::Index r = 0; r < tf.rows(); ++r)
    trainer_changed += t.memory().entries(View::frontal).row(r) != tf.row(r);
  for (Eigen::Index r = 0; r < tp.rows(); ++r)
    trainer_changed += t.memory().entries(View::profile).row(r) != tp.row(r);
  const int two_b = 2 * t.config().batch_size;

  return {drift <= 1e-9 && stray == 0 && trainer_changed == two_b,
          fmt("max | |row| - 1 | = %.2e after 10000 updates; %d stray row changes; trainer "
              "step changed %d rows (2B = %d)",
              drift, stray, trainer_changed, two_b)};
}

// ---- 6, 7, 10 ----------------------------------------------------------------

struct RunResult {
  double hardest_rank1 = 0.0;
  double overlap_init = 0.0;
  double overlap_final = 0.0;
};

RunResult reference_run(int seed, bool memory, bool pada, int k) {
  const MultiviewDataset d = generate_dataset(reference_synth(seed));
  TrainConfig c = reference_train(seed);
  c.use_memory = memory;
  c.use_pada = pada;
  c.num_negatives = k;
  const EvalProtocol p = eval_protocol_from_json(json_io::read_json_file(PACM_CONFIG_DIR "/eval.json"));
  Trainer t(c, d.train_part());
  RunResult r;
  r.overlap_init = evaluate_protocol(t.frontal_encoder(), t.profile_encoder(), d, p).tier_overlap.back();
  t.run();
  const auto rep = evaluate_protocol(t.frontal_encoder(), t.profile_encoder(), d, p);
  r.hardest_rank1 = rep.rank1.accuracy.back();
  r.overlap_final = rep.tier_overlap.back();
  return r;
}

constexpr int kSeeds = 5;

struct Sweep {
  std::vector<RunResult> pac, pac_pada, pacm_pada, k32, k100;
  double seconds_table4 = 0.0;
};

double mean_rank1(const std::vector<RunResult>& v) {
  double s = 0.0;
  for (const auto& r : v) s += r.hardest_rank1;
  return s / static_cast<double>(v.size());
}

std::string rank1_list(const std::vector<RunResult>& v) {
  std::string s;
  for (const auto& r : v) s += fmt("%s%.2f", s.empty() ? "" : " ", r.hardest_rank1);
  return s;
}

Sweep run_sweep() {
  Sweep s;
  const auto start = std::chrono::steady_clock::now();
  for (int seed = 1; seed <= kSeeds; ++seed) {
    s.pac.push_back(reference_run(seed, false, false, 200));
    s.pac_pada.push_back(reference_run(seed, false, true, 200));
    s.pacm_pada.push_back(reference_run(seed, true, true, 200));
  }
  s.seconds_table4 = seconds_since(start);
  for (int seed = 1; seed <= kSeeds; ++seed) {
    s.k32.push_back(reference_run(seed, true, true, 32));
    s.k100.push_back(reference_run(seed, true, true, 100));
  }
  return s;
}

Verdict learning_trend(const Sweep& s) {
  auto compare = [](const std::vector<RunResult>& hi, const std::vector<RunResult>& lo) {
    int strict = 0;
    double gap = 0.0;
    for (std::size_t i = 0; i < hi.size(); ++i) {
      strict += hi[i].hardest_rank1 > lo[i].hardest_rank1;
      gap += hi[i].hardest_rank1 - lo[i].hardest_rank1;
    }
    return std::make_pair(gap / static_cast<double>(hi.size()), strict);
  };
  const auto [gap_a, strict_a] = compare(s.pacm_pada, s.pac_pada);
  const auto [gap_b, strict_b] = compare(s.pac_pada, s.pac);
  const bool pass = gap_a >= 0.0 && gap_b >= 0.0 && strict_a >= 3 && strict_b >= 3 &&
                    s.seconds_table4 < 300.0;
  return {pass, fmt("hardest-tier rank-1 PAC %.4f [%s], PAC+PADA %.4f [%s], PACM+PADA %.4f [%s]; "
                    "gaps %+.4f (%d/5 strict), %+.4f (%d/5 strict); %.0f s",
                    mean_rank1(s.pac), rank1_list(s.pac).c_str(), mean_rank1(s.pac_pada),
                    rank1_list(s.pac_pada).c_str(), mean_rank1(s.pacm_pada),
                    rank1_list(s.pacm_pada).c_str(), gap_a, strict_a, gap_b, strict_b,
                    s.seconds_table4)};
}

Verdict negatives_trend(const Sweep& s) {
  const double a = mean_rank1(s.k32), b = mean_rank1(s.k100), c = mean_rank1(s.pacm_pada);
  return {a <= b && b <= c, fmt("hardest-tier rank-1 K=32 %.4f, K=100 %.4f, K=200 %.4f", a, b, c)};
}

Verdict separation(const Sweep& s) {
  double init = 0.0, fin = 0.0;
  for (const auto& r : s.pacm_pada) {
    init += r.overlap_init;
    fin += r.overlap_final;
  }
  init /= kSeeds;
  fin /= kSeeds;
  const double drop = 1.0 - fin / init;
  return {drop >= 0.5, fmt("hardest-tier overlap %.3f -> %.3f (%.0f%% decrease, need >= 50%%)", init,
                           fin, 100.0 * drop)};
}

// ---- 8 ---------------------------------------------------------------------

Verdict metric_oracle() {
  std::mt19937_64 rng(11);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> len(1, 1000);
    std::normal_distribution<double> n(0.0, 0.4);
    const double shift = std::uniform_real_distribution<double>(-0.2, 0.8)(rng);
    const bool quantized = trial % 2 == 0;
    auto q = [&](double x) {
      x = std::clamp(x, -1.0, 1.0);
      return quantized ? std::round(x * 20.0) / 20.0 : x;
    };
    ScoreSet s;
    const int ng = len(rng), ni = len(rng);
    for (int i = 0; i < ng; ++i) s.genuine.push_back(q(n(rng) + shift));
    for (int i = 0; i < ni; ++i) s.imposter.push_back(q(n(rng)));
    const auto fast = verification_metrics(s);
    const auto slow = pacm::testing::brute_force_metrics(s);
    mismatches += fast.accuracy != slow.accuracy || fast.threshold != slow.threshold ||
                  fast.eer != slow.eer;
  }

  // Random embeddings: genuine and imposter scores share one distribution.
  const int dim = 32, pairs = 5000;
  ScoreSet chance;
  chance.genuine.resize(pairs);
  chance.imposter.resize(pairs);
  const Matrix a = random_unit_rows(2 * pairs, dim, rng);
  const Matrix b = random_unit_rows(2 * pairs, dim, rng);
  const Vector cos = row_cosines(a, b);
  for (int i = 0; i < pairs; ++i) {
    chance.genuine[static_cast<std::size_t>(i)] = cos[i];
    chance.imposter[static_cast<std::size_t>(i)] = cos[pairs + i];
  }
  const double eer = verification_metrics(chance).eer;

  const int c = 50, probes = 5000;
  const Matrix g = random_unit_rows(c, dim, rng);
  const Matrix p = random_unit_rows(probes, dim, rng);
  std::vector<int> gid(c), pid(probes), tier(probes, 0);
  std::iota(gid.begin(), gid.end(), 0);
  std::uniform_int_distribution<int> id(0, c - 1);
  for (auto& x : pid) x = id(rng);
  const double rank1 = rank1_identification(g, gid, p, pid, tier, 1).overall;
  const double expect = 1.0 / c;
  const double sigma = std::sqrt(expect * (1.0 - expect) / probes);

  return {mismatches == 0 && std::abs(eer - 0.5) <= 0.03 && std::abs(rank1 - expect) <= 3.0 * sigma,
          fmt("%d/100 oracle mismatches; chance EER %.4f; chance rank-1 %.4f vs %.4f +- %.4f",
              mismatches, eer, rank1, expect, 3.0 * sigma)};
}

// ---- 9 ---------------------------------------------------------------------

Verdict determinism() {
  SynthConfig sc = reference_synth(1);
  sc.num_identities = 40;
  sc.heldout_identities = 8;
  const auto data = generate_dataset(sc).train_part();
  TrainConfig c = reference_train(1);
  c.epochs = 3;
  c.batch_size = 8;
  c.num_negatives = 32;
  const bool same_run = same_checkpoint(train(c, data).checkpoint, train(c, data).checkpoint);

  Trainer straight(c, data);
  const int stop = straight.iterations_per_epoch() + 3;  // adversary already active
  for (int i = 0; i < stop; ++i) straight.step();
  const auto path = std::filesystem::temp_directory_path() / "pacm_acceptance_resume.ckpt";
  save_checkpoint(straight.checkpoint(), path);
  std::vector<IterationLog> want;
  for (int i = 0; i < 5; ++i) want.push_back(straight.step());
  auto resumed = Trainer::resume(load_checkpoint(path), data);
  bool logs_match = true;
  for (int i = 0; i < 5; ++i) {
    const auto got = resumed.step();
    const auto& w = want[static_cast<std::size_t>(i)];
    logs_match = logs_match && got.l_total == w.l_total && got.l_pacm == w.l_pacm &&
                 got.l_pada_d == w.l_pada_d && got.l_pada_enc == w.l_pada_enc;
  }
  const bool state_match = same_checkpoint(straight.checkpoint(), resumed.checkpoint());
  std::filesystem::remove(path);
  return {same_run && logs_match && state_match,
          fmt("repeat run bit-identical %s; resume for 5 iterations: losses %s, state %s",
              same_run ? "yes" : "no", logs_match ? "bit-exact" : "differ",
              state_match ? "bit-exact" : "differs")};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const char* name, const Verdict& v) {
    std::printf("%-4s criterion %2d  %-28s %s\n", v.pass ? "PASS" : "FAIL", n, name, v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  };
  auto guarded = [](const std::function<Verdict()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Verdict{false, std::string("threw: ") + e.what()};
    }
  };

  report(1, "gradient suite", guarded(gradient_suite));
  report(2, "PACM/PAC equivalence", guarded(pacm_pac_equivalence));
  report(3, "MI lower bound", guarded(mi_bound));
  report(4, "asymmetry (lambda2 = 0)", guarded(asymmetry));
  report(5, "memory invariants", guarded(memory_invariants));

  Sweep sweep;
  std::string sweep_error;
  try {
    sweep = run_sweep();
  } catch (const std::exception& e) {
    sweep_error = std::string("threw: ") + e.what();
  }
  auto from_sweep = [&](Verdict (*f)(const Sweep&)) {
    return sweep_error.empty() ? f(sweep) : Verdict{false, sweep_error};
  };
  report(6, "learning trend", from_sweep(learning_trend));
  report(7, "negatives trend", from_sweep(negatives_trend));
  report(8, "metric oracle", guarded(metric_oracle));
  report(9, "determinism and resume", guarded(determinism));
  report(10, "separation", from_sweep(separation));
  std::printf("%d of 10 criteria failed\n", failed);
  return failed;
}
