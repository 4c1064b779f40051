#pragma once

// Checkpoint container:
//
//   SFCAP-CHECKPOINT\n
//   version <n>\n
//   header-bytes <n>\n
//   <JSON header: config, model shape, vocabulary, style, tensor table,
//    optimizer step counters, RNG state>\n
//   <payload: every tensor as little-endian IEEE-754 doubles in table order,
//    then Adam first/second moments per block when an optimizer is stored>
//
// save -> load -> save reproduces the file byte for byte.

#include <filesystem>
#include <string>

#include "sfcap/trainer.hpp"

namespace sfcap {

std::string serialize_checkpoint(const Checkpoint& checkpoint);

// When `expected_vocab` is given, every vocabulary-shaped tensor is checked
// against its size.
Checkpoint deserialize_checkpoint(const std::string& bytes,
                                  const Vocabulary* expected_vocab = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const Vocabulary* expected_vocab = nullptr);

// Trainer configuration as JSON (used by checkpoints and --config files).
std::string trainer_config_to_json(const TrainerConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainerConfig trainer_config_from_json(const std::string& text,
                                       const TrainerConfig& defaults = {});

}  // namespace sfcap
