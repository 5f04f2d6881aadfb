#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "semmod/losses.hpp"
#include "semmod/modulation.hpp"
#include "semmod/trainer.hpp"
#include "semmod/world.hpp"

namespace semmod {

// Full run configuration, parsed from the sectioned key-value text format.
// Unknown sections or keys are rejected. Seeds for the world, the model
// initialization and the training stream derive from the single run seed.
struct RunConfig {
  std::uint64_t seed = 1;
  SynthWorld::Params world;  // world.seed is derived, not configured
  StackConfig stack;
  TrainConfig train;  // train.seed is derived, not configured
  LossWeights loss;
  std::size_t eval_samples = 64;
  std::uint64_t eval_seed = 97;
  std::size_t ablate_seeds = 5;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// The generated reference: every key with its default and a short note.
std::string config_reference_text();

}  // namespace semmod
