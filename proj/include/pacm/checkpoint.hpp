#pragma once

// Complete training state and its on-disk form:
//   8 bytes  "PACMCKPT"
//   u32      format version (little endian)
//   u64      manifest length in bytes (little endian)
//   manifest UTF-8 JSON: config, shapes, counters, rng state, block list
//   blocks   little-endian float64 values, row-major, in manifest order

#include <cstdint>
#include <filesystem>
#include <string>

#include "pacm/memory.hpp"
#include "pacm/numeric.hpp"
#include "pacm/pada.hpp"
#include "pacm/train_config.hpp"

namespace pacm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  bool shared_encoder = false;  // profile fields mirror frontal ones when true
  MlpParams frontal;
  MlpParams profile;
  Discriminator discriminator;
  MemoryBuffer memory;
  OptimizerState frontal_opt;
  OptimizerState profile_opt;
  OptimizerState discriminator_opt;
  int epoch = 1;  // 1-based epoch the next iteration belongs to
  int iteration_in_epoch = 0;
  std::uint64_t global_iteration = 0;
  std::string rng_state;
};

// Bit-exact equality of every field.
bool same_checkpoint(const Checkpoint& a, const Checkpoint& b);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Validates the whole file before building anything; throws CheckpointError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pacm
