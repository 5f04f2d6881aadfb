#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "semmod/losses.hpp"
#include "semmod/modulation.hpp"
#include "semmod/rng.hpp"
#include "semmod/world.hpp"

namespace semmod {

struct TrainConfig {
  std::size_t iterations = 2000;  // desk-scale default
  std::size_t batch_size = 8;
  double lr0 = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Iterations at which the learning rate decays by `decay`. Empty means the
  // conventional placement at 50% and 80% of the run.
  std::vector<std::size_t> milestones;
  double decay = 0.1;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0: only the final checkpoint is written
  std::vector<Prompt> prompts; // empty: every (attribute, polarity) pair

  void validate() const;
  std::vector<std::size_t> effective_milestones() const;
};

// First/second moment buffers, one per model parameter, plus the step count.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  static AdamState init_for(const ModulationModel& model);
};

// One bias-corrected Adam update over all parameters. Throws NumericError
// naming the parameter if a gradient is non-finite.
void adam_step(std::vector<NamedArray>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps);

// lr0 * decay^(number of milestones at or before iter); non-increasing in iter.
double lr_at(const TrainConfig& config, std::size_t iter);

struct IterRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<IterRecord> history;
};

// Optimizes the model in place on seed-deterministic (latent, prompt) batches.
// When out_dir is non-empty, checkpoints go there (model.ckpt at the end,
// model_iter<N>.ckpt every eval_every). A non-finite batch loss aborts with
// the last good parameters saved.
TrainResult train(const TrainConfig& config, ModulationModel& model, const SynthWorld& world,
                  const LossWeights& weights, const std::filesystem::path& out_dir = {});

// Header "iter,lr,total,sp,t,embd,norm,id,bg"; floats with 17 significant digits.
void write_metrics_csv(std::ostream& out, const std::vector<IterRecord>& history);
void write_metrics_csv_file(const std::filesystem::path& path,
                            const std::vector<IterRecord>& history);

// Standard-normal latent of the world's shape, drawn row-major.
Array sample_latent(const SynthWorld& world, Rng& rng);

}  // namespace semmod
