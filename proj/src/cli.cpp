#include "pacm/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pacm/checkpoint.hpp"
#include "pacm/errors.hpp"
#include "pacm/eval.hpp"
#include "pacm/gradcheck.hpp"
#include "pacm/json_io.hpp"
#include "pacm/mi_study.hpp"
#include "pacm/synth.hpp"
#include "pacm/trainer.hpp"

namespace pacm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string dataset;
};

json read_config(const Options& o) {
  if (o.config.empty()) return json::object();
  return json_io::read_json_file(o.config);
}

std::string with_suffix(const std::string& path, const std::string& suffix) { return path + suffix; }

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw UsageError(std::string(command) + ": " + flag + " is required");
}

void check_readable(const std::string& path) {
  if (!fs::is_regular_file(path)) throw DataError("cannot read '" + path + "'");
}

int gen_data(const Options& o, std::ostream& out) {
  require(o.out, "--out", "gen-data");
  json j = read_config(o);
  SynthConfig c = j.empty() ? default_synth_config() : synth_config_from_json(j);
  if (o.seed) c.seed = *o.seed;
  const MultiviewDataset d = generate_dataset(c);
  save_dataset(d, o.out);
  out << "wrote " << o.out << ": " << d.frontal().size() << " frontal, " << d.profile().size()
      << " profile samples\n";
  return 0;
}

int train_cmd(const Options& o, std::ostream& out) {
  require(o.out, "--out", "train");
  require(o.dataset, "--dataset", "train");
  check_readable(o.dataset);
  const MultiviewDataset data = load_dataset(o.dataset);
  std::optional<Trainer> trainer;
  if (!o.checkpoint.empty()) {
    if (!o.config.empty() || o.seed)
      throw UsageError("train: --config and --seed cannot be combined with --checkpoint");
    check_readable(o.checkpoint);
    trainer.emplace(Trainer::resume(load_checkpoint(o.checkpoint), data.train_part()));
  } else {
    TrainConfig c = train_config_from_json(read_config(o));
    if (o.seed) c.seed = *o.seed;
    trainer.emplace(c, data.train_part());
  }
  const auto log = trainer->run();
  save_checkpoint(trainer->checkpoint(), o.out);
  const std::string csv = with_suffix(o.out, ".metrics.csv");
  write_metrics_csv(log, csv);
  json_io::write_json_file({{"train", train_config_to_json(trainer->config())},
                            {"dataset", o.dataset},
                            {"resumed_from", o.checkpoint}},
                           with_suffix(csv, ".config.json"));
  out << "wrote " << o.out << " and " << csv << " (" << log.size() << " iterations)\n";
  if (!log.empty())
    out << "final l_total " << std::setprecision(6) << log.back().l_total << "\n";
  return 0;
}

struct Loaded {
  Checkpoint checkpoint;
  MultiviewDataset data;
  EvalProtocol protocol;
};

Loaded load_for_eval(const Options& o, const char* command) {
  require(o.checkpoint, "--checkpoint", command);
  require(o.dataset, "--dataset", command);
  check_readable(o.checkpoint);
  check_readable(o.dataset);
  EvalProtocol p = eval_protocol_from_json(read_config(o));
  if (o.seed) p.seed = *o.seed;
  return {load_checkpoint(o.checkpoint), load_dataset(o.dataset), p};
}

json eval_echo(const Options& o, const Loaded& l) {
  return {{"protocol", eval_protocol_to_json(l.protocol)},
          {"train", train_config_to_json(l.checkpoint.config)},
          {"checkpoint", o.checkpoint},
          {"dataset", o.dataset}};
}

int eval_cmd(const Options& o, std::ostream& out) {
  require(o.out, "--out", "eval");
  const Loaded l = load_for_eval(o, "eval");
  const EvalReport r = evaluate_protocol(l.checkpoint.frontal, l.checkpoint.profile, l.data, l.protocol);
  json j = eval_report_to_json(r);
  j["config"] = eval_echo(o, l);
  json_io::write_json_file(j, o.out);
  const std::string csv = with_suffix(o.out, ".hist.csv");
  write_histogram_csv(r.histogram, csv);
  json_io::write_json_file(eval_echo(o, l), with_suffix(csv, ".config.json"));
  out << std::setprecision(4) << "accuracy " << r.verification.accuracy_mean << "  eer "
      << r.verification.eer_mean << "  rank1 " << r.rank1.overall << "  overlap " << r.overlap
      << "\n";
  return 0;
}

int export_hist(const Options& o, std::ostream& out) {
  require(o.out, "--out", "export-hist");
  const Loaded l = load_for_eval(o, "export-hist");
  const EvalReport r = evaluate_protocol(l.checkpoint.frontal, l.checkpoint.profile, l.data, l.protocol);
  write_histogram_csv(r.histogram, o.out);
  json_io::write_json_file(eval_echo(o, l), with_suffix(o.out, ".config.json"));
  out << "wrote " << o.out << "\n";
  for (std::size_t t = 0; t < r.tier_histogram.size(); ++t) {
    const std::string path = with_suffix(o.out, ".tier" + std::to_string(t) + ".csv");
    write_histogram_csv(r.tier_histogram[t], path);
    out << "wrote " << path << "\n";
  }
  return 0;
}

int gradcheck_cmd(const Options& o, std::ostream& out) {
  GradcheckConfig c = gradcheck_config_from_json(read_config(o));
  if (o.seed) c.seed = *o.seed;
  const GradcheckReport r = run_gradcheck(c);
  json rows = json::array();
  out << std::left << std::setw(10) << "loss" << std::setw(15) << "network"
      << "worst_relative_error\n";
  for (const char* loss : {"pac", "pacm", "disc", "enc_batch", "enc_eval", "total"}) {
    for (const char* net : {"frontal", "profile", "discriminator"}) {
      double worst = -1.0;
      std::size_t coords = 0, skipped = 0;
      for (const auto& e : r.entries)
        if (e.loss == loss && e.network == net) {
          worst = std::max(worst, e.worst_relative_error);
          coords += e.coordinates;
          skipped += e.skipped;
        }
      if (worst < 0.0) continue;
      out << std::setw(10) << loss << std::setw(15) << net << std::scientific
          << std::setprecision(3) << worst << std::defaultfloat << "\n";
      rows.push_back({{"loss", loss}, {"network", net}, {"worst_relative_error", worst},
                      {"coordinates", coords}, {"skipped", skipped}});
    }
  }
  out << "worst " << std::scientific << std::setprecision(3) << r.worst() << std::defaultfloat
      << " tolerance " << r.tolerance << " in " << std::fixed << std::setprecision(2) << r.seconds
      << " s: " << (r.passed() ? "ok" : "FAILED") << std::defaultfloat << "\n";
  if (!o.out.empty())
    json_io::write_json_file({{"config", gradcheck_config_to_json(c)},
                              {"results", rows},
                              {"worst", r.worst()},
                              {"passed", r.passed()}},
                             o.out);
  if (!r.passed()) throw NumericError("gradient check exceeded tolerance");
  return 0;
}

int mi_bound(const Options& o, std::ostream& out) {
  MiStudyConfig c = mi_study_config_from_json(read_config(o));
  if (o.seed) c.seed = *o.seed;
  const MiStudyReport r = run_mi_study(c);
  json rows = json::array();
  out << std::fixed << std::setprecision(4) << "temperature " << r.temperature << "\n"
      << "k        L   ln k - L       SE  exact MI\n";
  for (const auto& row : r.rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%-4d %8.4f %10.4f %8.4f %9.4f\n", row.k, row.mean_loss,
                  row.mean_bound, row.standard_error, r.exact_mi);
    out << line;
    rows.push_back({{"k", row.k}, {"loss", row.mean_loss}, {"bound", row.mean_bound},
                    {"standard_error", row.standard_error}, {"exact_mi", r.exact_mi},
                    {"within_exact", row.within_exact}});
  }
  out << "non-decreasing in k: " << (r.non_decreasing ? "yes" : "no") << "\n" << std::defaultfloat;
  if (!o.out.empty())
    json_io::write_json_file({{"config", mi_study_config_to_json(c)},
                              {"temperature", r.temperature},
                              {"rows", rows},
                              {"non_decreasing", r.non_decreasing},
                              {"passed", r.passed()}},
                             o.out);
  if (!r.passed()) throw ValidationError("mutual information bound check failed");
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pose-aware contrastive learning on synthetic two-view data", "pacm"};
  app.require_subcommand(1, 1);
  Options o;
  auto add = [&](CLI::App* sub, bool checkpoint, bool dataset) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_option("--out", o.out, "output path");
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    if (dataset) sub->add_option("--dataset", o.dataset, "dataset JSON");
    return sub;
  };
  auto* gen = add(app.add_subcommand("gen-data", "generate a synthetic dataset"), false, false);
  auto* tr = add(app.add_subcommand("train", "train encoders, write checkpoint and metrics"), true, true);
  auto* ev = add(app.add_subcommand("eval", "evaluate a checkpoint on held-out identities"), true, true);
  auto* gc = add(app.add_subcommand("gradcheck", "finite-difference gradient audit"), false, false);
  auto* mi = add(app.add_subcommand("mi-bound", "contrastive bound on the discrete toy"), false, false);
  auto* eh = add(app.add_subcommand("export-hist", "distance histograms from a checkpoint"), true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (gen->parsed()) return gen_data(o, out);
    if (tr->parsed()) return train_cmd(o, out);
    if (ev->parsed()) return eval_cmd(o, out);
    if (gc->parsed()) return gradcheck_cmd(o, out);
    if (mi->parsed()) return mi_bound(o, out);
    if (eh->parsed()) return export_hist(o, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pacm
