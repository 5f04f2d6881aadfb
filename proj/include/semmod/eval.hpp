#pragma once

#include <cstdint>
#include <vector>

#include "semmod/losses.hpp"
#include "semmod/modulation.hpp"
#include "semmod/world.hpp"

namespace semmod {

// Per-prompt comparison of the model's edits against the least-squares edit
// oracle over a shared set of evaluation latents.
struct PromptEval {
  Prompt prompt;
  double model_text_loss = 0.0;   // mean over samples
  double oracle_text_loss = 0.0;  // mean over samples
  double gap = 0.0;               // model - oracle
  LossBreakdown mean_loss;        // model loss means over samples
  bool has_scale = false;         // variant computes a position-attention scale
  std::vector<double> scale_mean; // first block's S averaged over samples
  std::size_t scale_argmax = 0;
  std::size_t host_layer = 0;
  bool argmax_match = false;
};

struct EvalResult {
  std::vector<PromptEval> prompts;
  LossBreakdown mean_loss;  // over every prompt and sample
};

// Evaluates the model on `samples` seed-deterministic latents for every
// listed prompt (all attribute/polarity pairs when `prompts` is empty).
EvalResult evaluate_model(const SynthWorld& world, const ModulationModel& model,
                          const LossWeights& weights, std::size_t samples, std::uint64_t seed,
                          const std::vector<Prompt>& prompts = {});

// Per-attribute argmax of the first block's S averaged over samples and both
// polarities; the subspace-recovery measurement.
struct AttributeAlignment {
  std::size_t attribute = 0;
  std::size_t host_layer = 0;
  std::size_t scale_argmax = 0;
  bool match = false;
};
std::vector<AttributeAlignment> attribute_alignment(const EvalResult& eval,
                                                    const SynthWorld& world);

}  // namespace semmod
