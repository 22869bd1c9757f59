#include "pacm/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "pacm/json_io.hpp"
#include "pacm/memory.hpp"
#include "pacm/pada.hpp"
#include "pacm/synth.hpp"
#include "pacm/trainer.hpp"

namespace pacm {

namespace {

using Signature = std::vector<std::uint8_t>;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

GradcheckEntry check_network(const std::string& loss_name, const std::string& network, int config,
                             MlpParams& params, const MlpGradients& grads,
                             const std::function<double()>& loss,
                             const std::function<Signature()>& signature, double h) {
  GradcheckEntry e{loss_name, network, config, 0.0, 0, 0};
  auto values = trainable_blocks(params);
  const auto analytic = gradient_blocks(grads);
  for (std::size_t b = 0; b < values.size(); ++b) {
    for (std::size_t i = 0; i < values[b].size(); ++i) {
      double& v = values[b][i];
      const double saved = v;
      v = saved + h;
      const double plus = loss();
      const Signature sig_plus = signature();
      v = saved - h;
      const double minus = loss();
      const Signature sig_minus = signature();
      v = saved;
      ++e.coordinates;
      if (sig_plus != sig_minus) {
        ++e.skipped;
        continue;
      }
      e.worst_relative_error =
          std::max(e.worst_relative_error, relative_error(analytic[b][i], (plus - minus) / (2 * h)));
    }
  }
  return e;
}

void jitter(Vector& v, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += n(rng);
}

}  // namespace

void GradcheckConfig::validate() const {
  if (configurations < 1) throw ConfigError("gradcheck config: configurations must be >= 1");
  if (batch_size < 2) throw ConfigError("gradcheck config: batch_size must be >= 2");
  if (input_dim < 2) throw ConfigError("gradcheck config: input_dim must be >= 2");
  if (encoder_dims.empty() || encoder_dims.back() < 2)
    throw ConfigError("gradcheck config: embedding width must be >= 2");
  for (int d : encoder_dims)
    if (d < 1) throw ConfigError("gradcheck config: encoder_dims must be positive");
  for (int d : discriminator_dims)
    if (d < 1) throw ConfigError("gradcheck config: discriminator_dims must be positive");
  if (num_negatives < 1) throw ConfigError("gradcheck config: num_negatives must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("gradcheck config: temperature must be > 0");
  if (!(step > 0.0)) throw ConfigError("gradcheck config: step must be > 0");
  if (!(tolerance > 0.0)) throw ConfigError("gradcheck config: tolerance must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("gradcheck config: lambdas must be >= 0");
}

nlohmann::json gradcheck_config_to_json(const GradcheckConfig& c) {
  return {{"configurations", c.configurations},
          {"seed", c.seed},
          {"batch_size", c.batch_size},
          {"input_dim", c.input_dim},
          {"encoder_dims", c.encoder_dims},
          {"discriminator_dims", c.discriminator_dims},
          {"num_negatives", c.num_negatives},
          {"temperature", c.temperature},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"step", c.step},
          {"tolerance", c.tolerance}};
}

GradcheckConfig gradcheck_config_from_json(const nlohmann::json& j) {
  constexpr const char* ctx = "gradcheck config";
  if (!j.is_object()) throw ConfigError("gradcheck config must be a JSON object");
  json_io::reject_unknown_keys(j,
                               {"configurations", "seed", "batch_size", "input_dim",
                                "encoder_dims", "discriminator_dims", "num_negatives",
                                "temperature", "lambda1", "lambda2", "step", "tolerance"},
                               ctx);
  GradcheckConfig c;
  json_io::get_if_present(j, "configurations", c.configurations, ctx);
  json_io::get_if_present(j, "seed", c.seed, ctx);
  json_io::get_if_present(j, "batch_size", c.batch_size, ctx);
  json_io::get_if_present(j, "input_dim", c.input_dim, ctx);
  json_io::get_if_present(j, "encoder_dims", c.encoder_dims, ctx);
  json_io::get_if_present(j, "discriminator_dims", c.discriminator_dims, ctx);
  json_io::get_if_present(j, "num_negatives", c.num_negatives, ctx);
  json_io::get_if_present(j, "temperature", c.temperature, ctx);
  json_io::get_if_present(j, "lambda1", c.lambda1, ctx);
  json_io::get_if_present(j, "lambda2", c.lambda2, ctx);
  json_io::get_if_present(j, "step", c.step, ctx);
  json_io::get_if_present(j, "tolerance", c.tolerance, ctx);
  c.validate();
  return c;
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.worst_relative_error);
  return w;
}

double GradcheckReport::worst_for(const std::string& loss) const {
  double w = 0.0;
  for (const auto& e : entries)
    if (e.loss == loss) w = std::max(w, e.worst_relative_error);
  return w;
}

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.tolerance = cfg.tolerance;
  const double h = cfg.step;

  for (int c = 0; c < cfg.configurations; ++c) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(c);
    std::mt19937_64 rng(seed);

    // Enough identities that every anchor has num_negatives memory rows of others.
    SynthConfig sc = default_synth_config();
    sc.seed = seed;
    sc.samples_per_identity_per_view = 2;
    sc.num_identities = std::max(cfg.batch_size, cfg.num_negatives / 2 + 2);
    sc.heldout_identities = 0;
    sc.input_dim = cfg.input_dim;
    sc.latent_dim = std::min(cfg.input_dim, 4);
    const MultiviewDataset data = generate_dataset(sc).train_part();

    std::vector<int> dims{cfg.input_dim};
    dims.insert(dims.end(), cfg.encoder_dims.begin(), cfg.encoder_dims.end());
    MlpParams f = make_mlp(dims, Activation::leaky_relu, false, rng);
    MlpParams p = make_mlp(dims, Activation::leaky_relu, false, rng);
    for (auto* net : {&f, &p})
      for (auto& b : net->biases) jitter(b, rng, 0.1);
    Discriminator disc = make_discriminator(cfg.encoder_dims.back(), cfg.discriminator_dims, rng);
    for (auto& b : disc.net.biases) jitter(b, rng, 0.1);
    for (auto& bn : disc.net.norm) {
      jitter(bn.gamma, rng, 0.2);
      jitter(bn.beta, rng, 0.2);
      jitter(bn.running_mean, rng, 0.1);
      bn.running_var = bn.running_var.array() + 0.5 * bn.running_var.array().square();
    }
    const MemoryBuffer memory =
        init_buffer(data, cfg.encoder_dims.back(), kDefaultMemoryMomentum, seed);

    BatchInputs batch;
    std::vector<std::size_t> fi, pi;
    for (const auto& pick : sample_genuine_batch(data, static_cast<std::size_t>(cfg.batch_size), rng)) {
      fi.push_back(pick.frontal);
      pi.push_back(pick.profile);
      const auto& s = data.frontal()[pick.frontal];
      batch.pairs.push_back({s.instance_id, data.profile()[pick.profile].instance_id, s.identity});
    }
    batch.frontal = data.features(View::frontal, fi);
    batch.profile = data.features(View::profile, pi);

    auto signature = [&]() {
      Signature s = kink_signature(mlp_forward(f, batch.frontal).cache);
      const auto sp = kink_signature(mlp_forward(p, batch.profile).cache);
      s.insert(s.end(), sp.begin(), sp.end());
      const Matrix zf = embed(f, batch.frontal);
      const Matrix zp = embed(p, batch.profile);
      Matrix both(zf.rows() + zp.rows(), zf.cols());
      both << zf, zp;
      for (Mode m : {Mode::train, Mode::eval}) {
        const auto sd = kink_signature(discriminator_forward(disc, both, m).cache);
        s.insert(s.end(), sd.begin(), sd.end());
      }
      return s;
    };

    TrainConfig tc;
    tc.temperature = cfg.temperature;
    tc.num_negatives = cfg.num_negatives;
    tc.lambda1 = cfg.lambda1;
    tc.lambda2 = cfg.lambda2;

    // Contrastive and total losses through the full encoder chain.
    struct Variant {
      const char* name;
      bool memory;
      bool adversary;
      double lambda1;
      double lambda2;
      bool check_frontal;
    };
    const Variant variants[] = {{"pac", false, false, 0.0, 1.0, true},
                                {"pacm", true, false, 0.0, 1.0, true},
                                {"enc_batch", false, true, 1.0, 0.0, false},
                                {"total", true, true, cfg.lambda1, cfg.lambda2, true}};
    for (const auto& v : variants) {
      TrainConfig vc = tc;
      vc.lambda1 = v.lambda1;
      vc.lambda2 = v.lambda2;
      auto evaluate = [&] {
        std::mt19937_64 draw(seed + 17);
        return total_loss_and_gradients(f, p, v.adversary ? &disc : nullptr,
                                        v.memory ? &memory : nullptr, batch, vc, draw);
      };
      const auto r = evaluate();
      auto loss = [&] { return evaluate().l_total; };
      // Frontal embeddings only set batch-norm context for the adversarial
      // term, so that term is held at its base value here.
      auto frontal_loss = [&] { return total_loss(evaluate().l_pacm, r.l_enc, vc); };
      if (v.check_frontal)
        report.entries.push_back(
            check_network(v.name, "frontal", c, f, r.grad_frontal, frontal_loss, signature, h));
      report.entries.push_back(
          check_network(v.name, "profile", c, p, r.grad_profile, loss, signature, h));
    }

    // Adversarial term with running batch-norm statistics.
    {
      auto evaluate = [&] {
        const auto fwd = mlp_forward(p, batch.profile);
        const auto z = l2_normalize_rows(fwd.output);
        const auto enc = encoder_adversarial_loss(disc, z.unit);
        const Matrix up = l2_normalize_backward(z, enc.grad_profile);
        return std::make_pair(enc.value, mlp_backward(p, fwd.cache, up).params);
      };
      const auto grads = evaluate().second;
      report.entries.push_back(check_network("enc_eval", "profile", c, p, grads,
                                             [&] { return evaluate().first; }, signature, h));
    }

    // Discriminator objective on fixed embeddings.
    {
      const Matrix zf = embed(f, batch.frontal);
      const Matrix zp = embed(p, batch.profile);
      const auto r = discriminator_loss(disc, zf, zp);
      auto loss = [&] { return discriminator_loss(disc, zf, zp).value; };
      Matrix both(zf.rows() + zp.rows(), zf.cols());
      both << zf, zp;
      auto disc_signature = [&] {
        return kink_signature(discriminator_forward(disc, both, Mode::train).cache);
      };
      report.entries.push_back(
          check_network("disc", "discriminator", c, disc.net, r.grads, loss, disc_signature, h));
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pacm
