#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semmod/config.hpp"
#include "semmod/eval.hpp"
#include "semmod/trainer.hpp"

namespace semmod {

struct TrainingJob {
  SynthWorld world;
  ModulationModel model;
  TrainResult result;
};

// Builds the world, initializes the model and trains it, all from seeds
// derived from cfg.seed. When out_dir is non-empty, writes world.world,
// model.ckpt and metrics.csv there.
TrainingJob run_training_job(const RunConfig& cfg, const std::filesystem::path& out_dir);

// One ablation cell: a variant trained under one seed index, then evaluated
// on the shared evaluation set.
struct AblationCell {
  std::string column;
  std::size_t seed_index = 0;
  EvalResult eval;
};

struct AblationSummary {
  std::vector<std::string> columns;  // w/o S, w/o T, w/o S&T, full, k=0..k=10
  std::vector<AblationCell> cells;
  // median over seeds, one entry per column
  std::vector<LossBreakdown> median_loss;
};

// Trains {no_s, no_t, no_st, full} at the configured block count plus the
// full variant at k in {0 (mapper baseline), 2, 4, 6, 10}, each over
// cfg.ablate_seeds seed indices sharing one world per index. Honors the
// FFC_THREADS cap on parallel jobs. Deterministic for a fixed config.
AblationSummary run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir);

void write_ablation_summary_csv(std::ostream& out, const AblationSummary& summary);

double median(std::vector<double> values);

// Worker cap: FFC_THREADS when set, hardware concurrency otherwise.
std::size_t worker_limit();

}  // namespace semmod
