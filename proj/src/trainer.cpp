#include "pacm/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pacm/contrastive.hpp"

namespace pacm {

double total_loss(double l_pacm, double l_enc, const TrainConfig& config) {
  if (!std::isfinite(l_pacm) || !std::isfinite(l_enc))
    throw NumericError("total loss: non-finite component");
  return config.lambda1 * (-l_enc) + config.lambda2 * l_pacm;
}

TotalLossResult total_loss_and_gradients(const MlpParams& frontal_encoder,
                                         const MlpParams& profile_encoder,
                                         const Discriminator* discriminator,
                                         const MemoryBuffer* memory, const BatchInputs& batch,
                                         const TrainConfig& config, std::mt19937_64& rng) {
  const auto fwd_f = mlp_forward(frontal_encoder, batch.frontal);
  const auto fwd_p = mlp_forward(profile_encoder, batch.profile);
  TotalLossResult out;
  out.z_frontal = l2_normalize_rows(fwd_f.output);
  out.z_profile = l2_normalize_rows(fwd_p.output);

  Matrix g_f, g_p;
  if (memory) {
    auto r = pacm_loss(out.z_frontal.unit, out.z_profile.unit, *memory, batch.pairs,
                       static_cast<std::size_t>(config.num_negatives), config.temperature, rng);
    out.l_pacm = r.loss;
    g_f = config.lambda2 * r.grad_frontal;
    g_p = config.lambda2 * r.grad_profile;
  } else {
    auto r = in_batch_pac_loss(out.z_frontal.unit, out.z_profile.unit, config.temperature);
    out.l_pacm = r.loss;
    g_f = config.lambda2 * r.grad_frontal;
    g_p = config.lambda2 * r.grad_profile;
  }
  if (discriminator) {
    const auto enc = encoder_adversarial_loss(*discriminator, out.z_profile.unit,
                                              out.z_frontal.unit);
    out.l_enc = enc.value;
    g_p -= config.lambda1 * enc.grad_profile;
  }
  out.l_total = total_loss(out.l_pacm, out.l_enc, config);
  out.grad_frontal =
      mlp_backward(frontal_encoder, fwd_f.cache, l2_normalize_backward(out.z_frontal, g_f)).params;
  out.grad_profile =
      mlp_backward(profile_encoder, fwd_p.cache, l2_normalize_backward(out.z_profile, g_p)).params;
  return out;
}

Matrix embed(const MlpParams& encoder, const Matrix& features) {
  return l2_normalize_rows(mlp_forward(encoder, features, Mode::eval).output).unit;
}

Trainer::Trainer(TrainConfig config, MultiviewDataset train_data)
    : config_(std::move(config)), data_(std::move(train_data)) {
  config_.validate();
  check_data();
  std::vector<int> dims{data_.input_dim()};
  dims.insert(dims.end(), config_.encoder_dims.begin(), config_.encoder_dims.end());
  std::mt19937_64 init(config_.seed);
  const int n_encoders = config_.couple_encoders ? 2 : 1;
  for (int i = 0; i < n_encoders; ++i) {
    encoders_.push_back(make_mlp(dims, Activation::leaky_relu, false, init));
    encoder_opts_.push_back(make_optimizer(encoders_.back(), config_.lr_initial,
                                           config_.optimizer_momentum, config_.weight_decay));
  }
  discriminator_ = make_discriminator(config_.embedding_dim(), config_.discriminator_dims, init);
  discriminator_opt_ = make_optimizer(discriminator_.net, config_.lr_initial,
                                      config_.optimizer_momentum, config_.weight_decay);
  batch_rng_.seed(config_.seed + 1);
  memory_ = init_buffer(data_, config_.embedding_dim(), config_.memory_momentum, config_.seed + 2);
  negative_rng_.seed(config_.seed + 3);
}

void Trainer::check_data() const {
  if (!data_.complete() || data_.frontal().empty())
    throw DataError("training data must cover every identity in both views");
  const auto b = static_cast<std::size_t>(config_.batch_size);
  if (data_.identities().size() < b)
    throw DataError("batch size " + std::to_string(b) + " exceeds the " +
                    std::to_string(data_.identities().size()) + " training identities");
  if (!config_.use_memory) return;
  for (View v : {View::frontal, View::profile}) {
    const auto& samples = data_.samples(v);
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].instance_id != samples.front().instance_id + static_cast<int>(i))
        throw DataError("training data needs contiguous instance ids per view");
    std::size_t largest = 0;
    for (int id : data_.identities()) largest = std::max(largest, data_.indices_of(v, id).size());
    const std::size_t eligible = samples.size() - largest;
    if (static_cast<std::size_t>(config_.num_negatives) > eligible)
      throw CapacityError("num_negatives " + std::to_string(config_.num_negatives) +
                          " exceeds the " + std::to_string(eligible) + " " + to_string(v) +
                          " memory rows available to some anchor (short by " +
                          std::to_string(config_.num_negatives - eligible) + ")");
  }
}

int Trainer::iterations_per_epoch() const {
  return std::max<int>(1, static_cast<int>(data_.frontal().size()) / config_.batch_size);
}

bool Trainer::pada_active() const {
  return config_.use_pada && epoch_ > config_.pada_warmup_epochs;
}

IterationLog Trainer::step() {
  if (finished()) throw UsageError("training already finished");
  const double lr = learning_rate_at(config_, epoch_);
  for (auto& o : encoder_opts_) o.learning_rate = lr;
  discriminator_opt_.learning_rate = lr;

  const auto picks =
      sample_genuine_batch(data_, static_cast<std::size_t>(config_.batch_size), batch_rng_);
  BatchInputs batch;
  std::vector<std::size_t> fi, pi;
  for (const auto& p : picks) {
    fi.push_back(p.frontal);
    pi.push_back(p.profile);
    const auto& f = data_.frontal()[p.frontal];
    batch.pairs.push_back({f.instance_id, data_.profile()[p.profile].instance_id, f.identity});
  }
  batch.frontal = data_.features(View::frontal, fi);
  batch.profile = data_.features(View::profile, pi);

  IterationLog log;
  log.epoch = epoch_;
  log.iteration = iteration_in_epoch_;
  log.lr = lr;
  log.l_pada_d = std::numeric_limits<double>::quiet_NaN();
  log.l_pada_enc = std::numeric_limits<double>::quiet_NaN();

  const bool pada = pada_active();
  if (pada) {
    log.l_pada_d = discriminator_step(discriminator_, discriminator_opt_,
                                      embed(frontal_encoder(), batch.frontal),
                                      embed(profile_encoder(), batch.profile));
  }
  auto r = total_loss_and_gradients(frontal_encoder(), profile_encoder(),
                                    pada ? &discriminator_ : nullptr,
                                    config_.use_memory ? &memory_ : nullptr, batch, config_,
                                    negative_rng_);
  log.l_pacm = r.l_pacm;
  log.l_total = r.l_total;
  if (pada) log.l_pada_enc = r.l_enc;

  if (encoders_.size() == 1) {
    r.grad_frontal += r.grad_profile;
    sgd_step(encoders_[0], r.grad_frontal, encoder_opts_[0]);
  } else {
    // The frontal encoder only sees the contrastive term.
    if (config_.lambda2 > 0.0) sgd_step(encoders_[0], r.grad_frontal, encoder_opts_[0]);
    sgd_step(encoders_[1], r.grad_profile, encoder_opts_[1]);
  }

  if (config_.use_memory) {
    for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      memory_.update_entry(View::frontal, batch.pairs[i].frontal_instance,
                           r.z_frontal.unit.row(row).transpose());
      memory_.update_entry(View::profile, batch.pairs[i].profile_instance,
                           r.z_profile.unit.row(row).transpose());
    }
  }

  ++global_iteration_;
  if (++iteration_in_epoch_ >= iterations_per_epoch()) {
    iteration_in_epoch_ = 0;
    ++epoch_;
  }
  return log;
}

std::vector<IterationLog> Trainer::run_epoch() {
  std::vector<IterationLog> logs;
  const int current = epoch_;
  while (!finished() && epoch_ == current) logs.push_back(step());
  return logs;
}

std::vector<IterationLog> Trainer::run() {
  std::vector<IterationLog> logs;
  while (!finished()) logs.push_back(step());
  return logs;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.shared_encoder = encoders_.size() == 1;
  c.frontal = encoders_.front();
  c.profile = encoders_.back();
  c.frontal_opt = encoder_opts_.front();
  c.profile_opt = encoder_opts_.back();
  c.discriminator = discriminator_;
  c.discriminator_opt = discriminator_opt_;
  c.memory = memory_;
  c.epoch = epoch_;
  c.iteration_in_epoch = iteration_in_epoch_;
  c.global_iteration = global_iteration_;
  std::ostringstream rng;
  rng << batch_rng_ << '\n' << negative_rng_;
  c.rng_state = rng.str();
  return c;
}

Trainer Trainer::resume(const Checkpoint& c, MultiviewDataset train_data) {
  Trainer t;
  t.config_ = c.config;
  t.config_.validate();
  t.data_ = std::move(train_data);
  t.check_data();
  if (c.shared_encoder == c.config.couple_encoders)
    throw CheckpointError("checkpoint encoder sharing disagrees with its config");
  if (c.frontal.input_dim() != t.data_.input_dim())
    throw CheckpointError("checkpoint encoder input width differs from the data");
  for (View v : {View::frontal, View::profile}) {
    const auto& samples = t.data_.samples(v);
    const auto& ids = c.memory.identities(v);
    bool match = ids.size() == samples.size() &&
                 (samples.empty() || c.memory.first_instance(v) == samples.front().instance_id);
    for (std::size_t i = 0; match && i < ids.size(); ++i) match = ids[i] == samples[i].identity;
    if (!match) throw CheckpointError("checkpoint memory does not match the training data");
  }
  t.encoders_.push_back(c.frontal);
  t.encoder_opts_.push_back(c.frontal_opt);
  if (!c.shared_encoder) {
    t.encoders_.push_back(c.profile);
    t.encoder_opts_.push_back(c.profile_opt);
  }
  t.discriminator_ = c.discriminator;
  t.discriminator_opt_ = c.discriminator_opt;
  t.memory_ = c.memory;
  t.epoch_ = c.epoch;
  t.iteration_in_epoch_ = c.iteration_in_epoch;
  t.global_iteration_ = c.global_iteration;
  std::istringstream rng(c.rng_state);
  rng >> t.batch_rng_ >> t.negative_rng_;
  if (!rng) throw CheckpointError("unreadable rng state in checkpoint");
  if (t.epoch_ < 1 || t.iteration_in_epoch_ < 0 ||
      t.iteration_in_epoch_ >= t.iterations_per_epoch())
    throw CheckpointError("checkpoint counters are out of range");
  return t;
}

TrainResult train(const TrainConfig& config, const MultiviewDataset& dataset) {
  Trainer t(config, dataset.train_part());
  TrainResult r;
  r.log = t.run();
  r.checkpoint = t.checkpoint();
  return r;
}

void write_metrics_csv(const std::vector<IterationLog>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot open " + path.string() + " for writing");
  f << "epoch,iter,l_pacm,l_pada_d,l_pada_enc,l_total,lr\n";
  f << std::setprecision(17);
  for (const auto& r : log)
    f << r.epoch << ',' << r.iteration << ',' << r.l_pacm << ',' << r.l_pada_d << ','
      << r.l_pada_enc << ',' << r.l_total << ',' << r.lr << '\n';
  if (!f) throw UsageError("failed writing " + path.string());
}

}  // namespace pacm
