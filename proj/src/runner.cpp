#include "semmod/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "semmod/errors.hpp"
#include "semmod/rng.hpp"
#include "semmod/serialize.hpp"

namespace semmod {

TrainingJob run_training_job(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  SynthWorld::Params wp = cfg.world;
  wp.seed = derive_seed(cfg.seed, 0);
  SynthWorld world = SynthWorld::make(wp);

  StackConfig sc = cfg.stack;
  sc.validate();
  ModulationModel model(sc, derive_seed(cfg.seed, 1));

  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 2);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    world.save_file(out_dir / "world.world");
  }
  TrainResult result = train(tc, model, world, cfg.loss, out_dir);
  if (!out_dir.empty()) write_metrics_csv_file(out_dir / "metrics.csv", result.history);
  return TrainingJob{std::move(world), std::move(model), std::move(result)};
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::size_t worker_limit() {
  if (const char* env = std::getenv("FFC_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError("FFC_THREADS must be a positive integer");
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

namespace {

struct AblationJob {
  std::string column;
  std::size_t seed_index = 0;
  RunConfig cfg;  // fully resolved (variant, blocks, seed)
  std::filesystem::path out_dir;
};

LossBreakdown median_breakdown(const std::vector<LossBreakdown>& xs) {
  auto collect = [&](double LossBreakdown::* field) {
    std::vector<double> v;
    v.reserve(xs.size());
    for (const LossBreakdown& x : xs) v.push_back(x.*field);
    return median(std::move(v));
  };
  LossBreakdown out;
  out.embd = collect(&LossBreakdown::embd);
  out.norm = collect(&LossBreakdown::norm);
  out.id = collect(&LossBreakdown::id);
  out.bg = collect(&LossBreakdown::bg);
  out.sp = collect(&LossBreakdown::sp);
  out.t = collect(&LossBreakdown::t);
  out.total = collect(&LossBreakdown::total);
  return out;
}

}  // namespace

AblationSummary run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.ablate_seeds == 0) throw ContractViolation("ablate: needs at least one seed");

  // Columns mirror the ablation table: alignment variants at the configured
  // block count, then the block-count sweep with the mapper baseline at k=0.
  struct ColumnSpec {
    std::string label;
    Variant variant;
    int blocks;
  };
  std::vector<ColumnSpec> columns = {
      {"no_s", Variant::no_s, cfg.stack.blocks},
      {"no_t", Variant::no_t, cfg.stack.blocks},
      {"no_st", Variant::no_st, cfg.stack.blocks},
      {"full", Variant::full, cfg.stack.blocks},
      {"k0", Variant::mapper_baseline, 0},
      {"k2", Variant::full, 2},
      {"k4", Variant::full, 4},
      {"k6", Variant::full, 6},
      {"k10", Variant::full, 10},
  };

  // Identical (variant, blocks) settings share one training per seed index.
  std::vector<AblationJob> jobs;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> column_cells(columns.size());
  for (std::size_t s = 0; s < cfg.ablate_seeds; ++s) {
    const std::uint64_t sub_seed = derive_seed(cfg.seed, 100 + s);
    std::vector<std::pair<std::string, std::size_t>> trained;  // key -> job index
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::string key =
          std::string(variant_name(columns[c].variant)) + "/" + std::to_string(columns[c].blocks);
      std::size_t job_index = jobs.size();
      bool found = false;
      for (const auto& [k, idx] : trained)
        if (k == key) {
          job_index = idx;
          found = true;
          break;
        }
      if (!found) {
        AblationJob job;
        job.column = columns[c].label;
        job.seed_index = s;
        job.cfg = cfg;
        job.cfg.seed = sub_seed;
        job.cfg.stack.variant = columns[c].variant;
        job.cfg.stack.blocks = columns[c].blocks;
        if (!out_dir.empty())
          job.out_dir = out_dir / columns[c].label / ("seed" + std::to_string(s));
        jobs.push_back(std::move(job));
        trained.emplace_back(key, job_index);
      }
      column_cells[c].emplace_back(s, job_index);
    }
  }

  // Independent jobs; results land in pre-sized slots so worker count never
  // changes the output.
  std::vector<EvalResult> evals(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      TrainingJob done = run_training_job(jobs[i].cfg, jobs[i].out_dir);
      evals[i] = evaluate_model(done.world, done.model, jobs[i].cfg.loss, jobs[i].cfg.eval_samples,
                                jobs[i].cfg.eval_seed);
    }
  };
  const std::size_t workers = std::min(worker_limit(), jobs.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  AblationSummary summary;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    summary.columns.push_back(columns[c].label);
    std::vector<LossBreakdown> per_seed;
    for (const auto& [seed_index, job_index] : column_cells[c]) {
      AblationCell cell;
      cell.column = columns[c].label;
      cell.seed_index = seed_index;
      cell.eval = evals[job_index];
      per_seed.push_back(cell.eval.mean_loss);
      summary.cells.push_back(std::move(cell));
    }
    summary.median_loss.push_back(median_breakdown(per_seed));
  }
  return summary;
}

void write_ablation_summary_csv(std::ostream& out, const AblationSummary& summary) {
  out << "metric";
  for (const std::string& c : summary.columns) out << ',' << c;
  out << '\n';
  auto row = [&](const char* name, double LossBreakdown::* field) {
    out << name;
    for (const LossBreakdown& b : summary.median_loss) out << ',' << format_g17(b.*field);
    out << '\n';
  };
  row("total", &LossBreakdown::total);
  row("sp", &LossBreakdown::sp);
  row("t", &LossBreakdown::t);
  row("embd", &LossBreakdown::embd);
  row("norm", &LossBreakdown::norm);
  row("id", &LossBreakdown::id);
  row("bg", &LossBreakdown::bg);
}

}  // namespace semmod
