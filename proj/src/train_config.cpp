#include "pacm/train_config.hpp"

#include <cmath>
#include <string>

#include "pacm/errors.hpp"
#include "pacm/json_io.hpp"

namespace pacm {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("train config: " + message);
}

}  // namespace

void TrainConfig::validate() const {
  require(std::isfinite(lambda1) && lambda1 >= 0.0, "lambda1 must be >= 0");
  require(std::isfinite(lambda2) && lambda2 >= 0.0, "lambda2 must be >= 0");
  require(std::isfinite(temperature) && temperature > 0.0, "temperature must be > 0");
  require(memory_momentum >= 0.0 && memory_momentum <= 1.0, "memory_momentum must lie in [0, 1]");
  require(num_negatives >= 1, "num_negatives must be >= 1");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(epochs >= 0, "epochs must be >= 0");
  require(std::isfinite(lr_initial) && lr_initial > 0.0, "lr_initial must be > 0");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must lie in (0, 1]");
  require(lr_decay_period >= 1, "lr_decay_period must be >= 1");
  require(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0,
          "optimizer_momentum must lie in [0, 1)");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
  require(!encoder_dims.empty(), "encoder_dims must name at least the output width");
  for (int d : encoder_dims) require(d >= 1, "encoder_dims entries must be positive");
  require(encoder_dims.back() >= 2, "embedding width must be >= 2");
  for (int d : discriminator_dims) require(d >= 1, "discriminator_dims entries must be positive");
  require(pada_warmup_epochs >= 0, "pada_warmup_epochs must be >= 0");
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  if (epoch < 1) throw UsageError("epochs are numbered from 1");
  const int drops = (epoch - 1) / config.lr_decay_period;
  return config.lr_initial * std::pow(config.lr_decay, drops);
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"temperature", c.temperature},
          {"memory_momentum", c.memory_momentum},
          {"num_negatives", c.num_negatives},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_initial", c.lr_initial},
          {"lr_decay", c.lr_decay},
          {"lr_decay_period", c.lr_decay_period},
          {"optimizer_momentum", c.optimizer_momentum},
          {"weight_decay", c.weight_decay},
          {"encoder_dims", c.encoder_dims},
          {"discriminator_dims", c.discriminator_dims},
          {"use_memory", c.use_memory},
          {"use_pada", c.use_pada},
          {"couple_encoders", c.couple_encoders},
          {"seed", c.seed},
          {"pada_warmup_epochs", c.pada_warmup_epochs}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  using json_io::get_if_present;
  constexpr const char* ctx = "train config";
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  json_io::reject_unknown_keys(
      j,
      {"lambda1", "lambda2", "temperature", "memory_momentum", "num_negatives", "batch_size",
       "epochs", "lr_initial", "lr_decay", "lr_decay_period", "optimizer_momentum",
       "weight_decay", "encoder_dims", "discriminator_dims", "use_memory", "use_pada",
       "couple_encoders", "seed", "pada_warmup_epochs"},
      ctx);
  TrainConfig c;
  get_if_present(j, "lambda1", c.lambda1, ctx);
  get_if_present(j, "lambda2", c.lambda2, ctx);
  get_if_present(j, "temperature", c.temperature, ctx);
  get_if_present(j, "memory_momentum", c.memory_momentum, ctx);
  get_if_present(j, "num_negatives", c.num_negatives, ctx);
  get_if_present(j, "batch_size", c.batch_size, ctx);
  get_if_present(j, "epochs", c.epochs, ctx);
  get_if_present(j, "lr_initial", c.lr_initial, ctx);
  get_if_present(j, "lr_decay", c.lr_decay, ctx);
  get_if_present(j, "lr_decay_period", c.lr_decay_period, ctx);
  get_if_present(j, "optimizer_momentum", c.optimizer_momentum, ctx);
  get_if_present(j, "weight_decay", c.weight_decay, ctx);
  get_if_present(j, "encoder_dims", c.encoder_dims, ctx);
  get_if_present(j, "discriminator_dims", c.discriminator_dims, ctx);
  get_if_present(j, "use_memory", c.use_memory, ctx);
  get_if_present(j, "use_pada", c.use_pada, ctx);
  get_if_present(j, "couple_encoders", c.couple_encoders, ctx);
  get_if_present(j, "seed", c.seed, ctx);
  get_if_present(j, "pada_warmup_epochs", c.pada_warmup_epochs, ctx);
  c.validate();
  return c;
}

}  // namespace pacm
