#include "pacm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>

#include "pacm/json_io.hpp"
#include "pacm/trainer.hpp"

namespace pacm {

namespace {

void require_both_sides(const ScoreSet& s, const char* what) {
  if (s.genuine.empty() || s.imposter.empty())
    throw ProtocolError(std::string(what) + ": genuine and imposter scores must be nonempty");
}

struct Labeled {
  double score;
  bool genuine;
};

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

Vector row_cosines(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("row_cosines: shapes differ");
  return (a.array() * b.array()).rowwise().sum();
}

ScoreSet score_pairs(const MlpParams& frontal_encoder, const MlpParams& profile_encoder,
                     const MultiviewDataset& dataset, const std::vector<PairIndex>& pairs) {
  if (pairs.empty()) throw ProtocolError("score_pairs: empty pair list");
  std::vector<std::size_t> fi, pi;
  for (const auto& p : pairs) {
    if (p.frontal >= dataset.frontal().size() || p.profile >= dataset.profile().size())
      throw ProtocolError("score_pairs: pair index out of range");
    fi.push_back(p.frontal);
    pi.push_back(p.profile);
  }
  const Matrix zf = embed(frontal_encoder, dataset.features(View::frontal, fi));
  const Matrix zp = embed(profile_encoder, dataset.features(View::profile, pi));
  const Vector s = row_cosines(zf, zp);
  ScoreSet out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool genuine =
        dataset.frontal()[pairs[i].frontal].identity == dataset.profile()[pairs[i].profile].identity;
    (genuine ? out.genuine : out.imposter).push_back(s[static_cast<Eigen::Index>(i)]);
  }
  return out;
}

VerificationMetrics verification_metrics(const ScoreSet& scores) {
  require_both_sides(scores, "verification_metrics");
  std::vector<Labeled> all;
  for (double s : scores.genuine) all.push_back({s, true});
  for (double s : scores.imposter) all.push_back({s, false});
  for (const auto& l : all)
    if (!std::isfinite(l.score)) throw NumericError("verification_metrics: non-finite score");
  std::sort(all.begin(), all.end(), [](const Labeled& a, const Labeled& b) { return a.score < b.score; });

  const double ng = static_cast<double>(scores.genuine.size());
  const double ni = static_cast<double>(scores.imposter.size());
  const double n = ng + ni;
  VerificationMetrics m;

  // Accuracy sweep: thresholds below everything, between unique values, above everything.
  long tp = static_cast<long>(scores.genuine.size());
  long tn = 0;
  m.threshold = all.front().score - 1.0;
  m.accuracy = static_cast<double>(tp + tn) / n;

  // EER vertices: accept score >= t for each unique t, then nothing.
  double prev_far = 1.0, prev_frr = 0.0;
  bool eer_found = false;
  long genuine_below = 0, imposter_at_or_above = static_cast<long>(scores.imposter.size());

  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    long g = 0, im = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].genuine ? g : im) += 1;
      ++j;
    }
    if (!eer_found) {
      const double far = static_cast<double>(imposter_at_or_above) / ni;
      const double frr = static_cast<double>(genuine_below) / ng;
      const double d = far - frr;
      if (d <= 0.0) {
        const double d_prev = prev_far - prev_frr;
        if (d == 0.0 || i == 0) {
          m.eer = far;
        } else {
          const double alpha = d_prev / (d_prev - d);
          m.eer = prev_far + alpha * (far - prev_far);
        }
        eer_found = true;
      }
      prev_far = far;
      prev_frr = frr;
    }
    genuine_below += g;
    imposter_at_or_above -= im;

    tp -= g;
    tn += im;
    const double acc = static_cast<double>(tp + tn) / n;
    if (acc > m.accuracy) {
      m.accuracy = acc;
      m.threshold = j < all.size() ? (all[i].score + all[j].score) / 2.0 : all[i].score + 1.0;
    }
    i = j;
  }
  if (!eer_found) {
    // Final vertex: nothing accepted, FAR 0, FRR 1.
    const double d_prev = prev_far - prev_frr;
    const double alpha = d_prev / (d_prev + 1.0);
    m.eer = prev_far + alpha * (0.0 - prev_far);
  }
  return m;
}

std::vector<TarAtFar> tar_at_far(const ScoreSet& scores, const std::vector<double>& far_targets) {
  require_both_sides(scores, "tar_at_far");
  std::vector<double> imp = scores.imposter;
  std::sort(imp.begin(), imp.end(), std::greater<>());
  const double lowest = std::min(*std::min_element(scores.genuine.begin(), scores.genuine.end()),
                                 imp.back());
  std::vector<TarAtFar> out;
  for (double target : far_targets) {
    if (!(target >= 0.0 && target <= 1.0)) throw UsageError("FAR target must lie in [0, 1]");
    TarAtFar r;
    r.far_target = target;
    const auto n = imp.size();
    const auto allowed = static_cast<std::size_t>(std::floor(target * static_cast<double>(n) + 1e-9));
    r.threshold = allowed >= n ? lowest - 1.0 : imp[allowed];
    long accepted = 0;
    for (double s : scores.genuine) accepted += s > r.threshold;
    long false_accepts = 0;
    for (double s : imp) false_accepts += s > r.threshold;
    r.tar = static_cast<double>(accepted) / static_cast<double>(scores.genuine.size());
    r.achieved_far = static_cast<double>(false_accepts) / static_cast<double>(n);
    r.resolved = target > 0.0 && static_cast<double>(n) >= 10.0 / target;
    out.push_back(r);
  }
  return out;
}

Rank1Result rank1_identification(const Matrix& gallery, const std::vector<int>& gallery_identity,
                                 const Matrix& probes, const std::vector<int>& probe_identity,
                                 const std::vector<int>& probe_tier, int num_tiers) {
  if (gallery.rows() == 0 || static_cast<std::size_t>(gallery.rows()) != gallery_identity.size())
    throw ProtocolError("rank1: gallery rows and identities disagree or are empty");
  if (static_cast<std::size_t>(probes.rows()) != probe_identity.size() ||
      probe_identity.size() != probe_tier.size())
    throw ProtocolError("rank1: probe rows, identities and tiers disagree");
  if (probes.rows() > 0 && probes.cols() != gallery.cols())
    throw DimensionError("rank1: probe and gallery widths differ");
  const std::set<int> known(gallery_identity.begin(), gallery_identity.end());
  for (int id : probe_identity)
    if (!known.count(id))
      throw ProtocolError("rank1: probe identity " + std::to_string(id) + " has no gallery entry");

  Rank1Result r;
  std::vector<int> correct(static_cast<std::size_t>(num_tiers), 0);
  r.probes.assign(static_cast<std::size_t>(num_tiers), 0);
  const Matrix sims = probes * gallery.transpose();
  int total_correct = 0;
  for (Eigen::Index p = 0; p < probes.rows(); ++p) {
    const int tier = probe_tier[static_cast<std::size_t>(p)];
    if (tier < 0 || tier >= num_tiers) throw ProtocolError("rank1: probe tier out of range");
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < gallery.rows(); ++g)
      if (sims(p, g) > sims(p, best)) best = g;
    const bool hit = gallery_identity[static_cast<std::size_t>(best)] ==
                     probe_identity[static_cast<std::size_t>(p)];
    ++r.probes[static_cast<std::size_t>(tier)];
    correct[static_cast<std::size_t>(tier)] += hit;
    total_correct += hit;
  }
  for (int t = 0; t < num_tiers; ++t) {
    const auto k = static_cast<std::size_t>(t);
    r.accuracy.push_back(r.probes[k] ? static_cast<double>(correct[k]) / r.probes[k]
                                     : std::numeric_limits<double>::quiet_NaN());
  }
  r.overall = probes.rows() ? static_cast<double>(total_correct) / static_cast<double>(probes.rows())
                            : std::numeric_limits<double>::quiet_NaN();
  return r;
}

double Histogram::bin_low(int b) const { return 2.0 * b / static_cast<double>(genuine.size()); }
double Histogram::bin_high(int b) const { return 2.0 * (b + 1) / static_cast<double>(genuine.size()); }

Histogram distance_histogram(const ScoreSet& scores, int bins) {
  if (bins < 1) throw UsageError("histogram needs at least one bin");
  Histogram h;
  h.genuine.assign(static_cast<std::size_t>(bins), 0);
  h.imposter.assign(static_cast<std::size_t>(bins), 0);
  auto add = [&](double s, std::vector<long>& counts) {
    if (!std::isfinite(s)) throw NumericError("histogram: non-finite score");
    const double d = 1.0 - std::clamp(s, -1.0, 1.0);
    const int b = std::min(bins - 1, static_cast<int>(std::floor(d / 2.0 * bins)));
    ++counts[static_cast<std::size_t>(b)];
  };
  for (double s : scores.genuine) add(s, h.genuine);
  for (double s : scores.imposter) add(s, h.imposter);
  return h;
}

double overlap_coefficient(const Histogram& h) {
  const double ng = static_cast<double>(std::accumulate(h.genuine.begin(), h.genuine.end(), 0L));
  const double ni = static_cast<double>(std::accumulate(h.imposter.begin(), h.imposter.end(), 0L));
  if (ng == 0.0 || ni == 0.0) throw ProtocolError("overlap: a histogram side is empty");
  double o = 0.0;
  for (std::size_t b = 0; b < h.genuine.size(); ++b)
    o += std::min(h.genuine[b] / ng, h.imposter[b] / ni);
  return o;
}

FoldSummary summarize_folds(const std::vector<ScoreSet>& folds) {
  if (folds.empty()) throw ProtocolError("no folds to summarize");
  FoldSummary s;
  std::vector<double> acc, eer;
  for (const auto& f : folds) {
    s.folds.push_back(verification_metrics(f));
    acc.push_back(s.folds.back().accuracy);
    eer.push_back(s.folds.back().eer);
  }
  s.accuracy_mean = mean_of(acc);
  s.accuracy_std = sample_std(acc);
  s.eer_mean = mean_of(eer);
  s.eer_std = sample_std(eer);
  return s;
}

void EvalProtocol::validate() const {
  if (folds < 1) throw ConfigError("eval config: folds must be >= 1");
  if (genuine_per_fold < 1 || imposter_per_fold < 1)
    throw ConfigError("eval config: pairs per fold must be >= 1");
  for (double f : far_targets)
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("eval config: far_targets must lie in (0, 1)");
}

nlohmann::json eval_protocol_to_json(const EvalProtocol& p) {
  return {{"folds", p.folds},
          {"genuine_per_fold", p.genuine_per_fold},
          {"imposter_per_fold", p.imposter_per_fold},
          {"seed", p.seed},
          {"far_targets", p.far_targets}};
}

EvalProtocol eval_protocol_from_json(const nlohmann::json& j) {
  constexpr const char* ctx = "eval config";
  if (!j.is_object()) throw ConfigError("eval config must be a JSON object");
  json_io::reject_unknown_keys(
      j, {"folds", "genuine_per_fold", "imposter_per_fold", "seed", "far_targets"}, ctx);
  EvalProtocol p;
  json_io::get_if_present(j, "folds", p.folds, ctx);
  json_io::get_if_present(j, "genuine_per_fold", p.genuine_per_fold, ctx);
  json_io::get_if_present(j, "imposter_per_fold", p.imposter_per_fold, ctx);
  json_io::get_if_present(j, "seed", p.seed, ctx);
  json_io::get_if_present(j, "far_targets", p.far_targets, ctx);
  p.validate();
  return p;
}

EvalReport evaluate_protocol(const MlpParams& frontal_encoder, const MlpParams& profile_encoder,
                             const MultiviewDataset& dataset, const EvalProtocol& protocol) {
  protocol.validate();
  const MultiviewDataset held = dataset.heldout_part();
  if (held.identities().size() < 2)
    throw ProtocolError("evaluation needs at least two held-out identities");
  if (!held.complete()) throw ProtocolError("held-out identities must appear in both views");

  const Matrix zf = embed(frontal_encoder, held.all_features(View::frontal));
  const Matrix zp = embed(profile_encoder, held.all_features(View::profile));
  const Matrix sims = zf * zp.transpose();

  std::mt19937_64 rng(protocol.seed);
  std::vector<PairIndex> genuine;
  for (int id : held.identities())
    for (auto f : held.indices_of(View::frontal, id))
      for (auto p : held.indices_of(View::profile, id)) genuine.push_back({f, p});
  const auto folds = static_cast<std::size_t>(protocol.folds);
  const std::size_t want_g = folds * static_cast<std::size_t>(protocol.genuine_per_fold);
  const std::size_t want_i = folds * static_cast<std::size_t>(protocol.imposter_per_fold);
  const std::size_t possible_i = held.frontal().size() * held.profile().size() - genuine.size();
  if (want_g > genuine.size())
    throw ProtocolError("requested " + std::to_string(want_g) + " genuine pairs but the held-out " +
                        "identities only form " + std::to_string(genuine.size()));
  if (want_i > possible_i)
    throw ProtocolError("requested " + std::to_string(want_i) + " imposter pairs but the " +
                        "held-out identities only form " + std::to_string(possible_i));
  std::shuffle(genuine.begin(), genuine.end(), rng);
  genuine.resize(want_g);

  std::vector<PairIndex> imposter;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (imposter.size() < want_i) {
    const auto p = sample_imposter_pair(held, rng);
    if (seen.insert({p.frontal, p.profile}).second) imposter.push_back(p);
  }

  auto score = [&](const PairIndex& p) {
    return sims(static_cast<Eigen::Index>(p.frontal), static_cast<Eigen::Index>(p.profile));
  };
  std::vector<ScoreSet> fold_scores(folds);
  ScoreSet pooled;
  for (std::size_t k = 0; k < folds; ++k) {
    const auto g0 = k * static_cast<std::size_t>(protocol.genuine_per_fold);
    const auto i0 = k * static_cast<std::size_t>(protocol.imposter_per_fold);
    for (int n = 0; n < protocol.genuine_per_fold; ++n)
      fold_scores[k].genuine.push_back(score(genuine[g0 + static_cast<std::size_t>(n)]));
    for (int n = 0; n < protocol.imposter_per_fold; ++n)
      fold_scores[k].imposter.push_back(score(imposter[i0 + static_cast<std::size_t>(n)]));
    pooled.genuine.insert(pooled.genuine.end(), fold_scores[k].genuine.begin(),
                          fold_scores[k].genuine.end());
    pooled.imposter.insert(pooled.imposter.end(), fold_scores[k].imposter.begin(),
                           fold_scores[k].imposter.end());
  }

  EvalReport r;
  r.protocol = protocol;
  r.verification = summarize_folds(fold_scores);
  r.tar = tar_at_far(pooled, protocol.far_targets);
  r.histogram = distance_histogram(pooled);
  r.overlap = overlap_coefficient(r.histogram);

  // Identification: first frontal sample of each identity against every profile sample.
  std::vector<std::size_t> gallery_rows;
  std::vector<int> gallery_ids;
  for (int id : held.identities()) {
    gallery_rows.push_back(held.indices_of(View::frontal, id).front());
    gallery_ids.push_back(id);
  }
  Matrix gallery(static_cast<Eigen::Index>(gallery_rows.size()), zf.cols());
  for (std::size_t g = 0; g < gallery_rows.size(); ++g)
    gallery.row(static_cast<Eigen::Index>(g)) = zf.row(static_cast<Eigen::Index>(gallery_rows[g]));
  std::vector<int> probe_ids, probe_tiers;
  for (const auto& s : held.profile()) {
    probe_ids.push_back(s.identity);
    probe_tiers.push_back(s.tier);
  }
  const int tiers = held.num_tiers();
  r.rank1 = rank1_identification(gallery, gallery_ids, zp, probe_ids, probe_tiers, tiers);

  const Matrix gp = zp * gallery.transpose();
  std::vector<ScoreSet> per_tier(static_cast<std::size_t>(tiers));
  for (Eigen::Index p = 0; p < gp.rows(); ++p)
    for (Eigen::Index g = 0; g < gp.cols(); ++g) {
      auto& set = per_tier[static_cast<std::size_t>(probe_tiers[static_cast<std::size_t>(p)])];
      const bool same = gallery_ids[static_cast<std::size_t>(g)] ==
                        probe_ids[static_cast<std::size_t>(p)];
      (same ? set.genuine : set.imposter).push_back(gp(p, g));
    }
  for (const auto& set : per_tier) {
    r.tier_histogram.push_back(distance_histogram(set));
    r.tier_overlap.push_back(set.genuine.empty() || set.imposter.empty()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : overlap_coefficient(r.tier_histogram.back()));
  }
  return r;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json folds = json::array();
  for (std::size_t k = 0; k < r.verification.folds.size(); ++k) {
    const auto& f = r.verification.folds[k];
    folds.push_back({{"fold", k}, {"accuracy", f.accuracy}, {"eer", f.eer},
                     {"threshold", f.threshold}});
  }
  json tar = json::array();
  for (const auto& t : r.tar)
    tar.push_back({{"far", t.far_target},
                   {"tar", t.tar},
                   {"threshold", t.threshold},
                   {"achieved_far", t.achieved_far},
                   {"resolved", t.resolved}});
  json rank1 = json::array();
  for (std::size_t t = 0; t < r.rank1.accuracy.size(); ++t)
    rank1.push_back({{"tier", t},
                     {"accuracy", number_or_null(r.rank1.accuracy[t])},
                     {"probes", r.rank1.probes[t]},
                     {"overlap", number_or_null(r.tier_overlap[t])}});
  json hist = json::array();
  for (std::size_t b = 0; b < r.histogram.genuine.size(); ++b)
    hist.push_back({{"bin_low", r.histogram.bin_low(static_cast<int>(b))},
                    {"bin_high", r.histogram.bin_high(static_cast<int>(b))},
                    {"genuine_count", r.histogram.genuine[b]},
                    {"imposter_count", r.histogram.imposter[b]}});
  return {{"protocol", eval_protocol_to_json(r.protocol)},
          {"threshold_rule", "best accuracy on the same fold"},
          {"verification_accuracy", r.verification.accuracy_mean},
          {"verification_accuracy_std", r.verification.accuracy_std},
          {"eer", r.verification.eer_mean},
          {"eer_std", r.verification.eer_std},
          {"folds", folds},
          {"tar_at_far", tar},
          {"rank1_overall", number_or_null(r.rank1.overall)},
          {"rank1_per_tier", rank1},
          {"overlap_coefficient", r.overlap},
          {"histogram", hist}};
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot open " + path.string() + " for writing");
  f << "bin_low,bin_high,genuine_count,imposter_count\n" << std::setprecision(17);
  for (std::size_t b = 0; b < h.genuine.size(); ++b)
    f << h.bin_low(static_cast<int>(b)) << ',' << h.bin_high(static_cast<int>(b)) << ','
      << h.genuine[b] << ',' << h.imposter[b] << '\n';
  if (!f) throw UsageError("failed writing " + path.string());
}

}  // namespace pacm
