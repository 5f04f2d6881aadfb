#include "semmod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "semmod/errors.hpp"
#include "semmod/serialize.hpp"

namespace semmod {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractViolation("train: batch_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ContractViolation("train: betas must lie in [0, 1)");
  if (!(lr0 > 0.0)) throw ContractViolation("train: lr0 must be positive");
  if (!(decay > 0.0)) throw ContractViolation("train: decay must be positive");
  std::vector<std::size_t> ms = effective_milestones();
  for (std::size_t i = 1; i < ms.size(); ++i)
    if (ms[i] <= ms[i - 1]) throw ContractViolation("train: milestones must strictly increase");
}

std::vector<std::size_t> TrainConfig::effective_milestones() const {
  if (!milestones.empty()) return milestones;
  // Conventional placement at 50% and 80% of the run; degenerate or
  // coinciding points collapse away for very short runs.
  std::vector<std::size_t> out;
  for (std::size_t m : {iterations / 2, iterations * 4 / 5})
    if (m > 0 && (out.empty() || m > out.back())) out.push_back(m);
  return out;
}

double lr_at(const TrainConfig& config, std::size_t iter) {
  double lr = config.lr0;
  for (std::size_t m : config.effective_milestones())
    if (iter >= m) lr *= config.decay;
  return lr;
}

AdamState AdamState::init_for(const ModulationModel& model) {
  AdamState s;
  for (const NamedArray& p : model.params()) {
    s.m.emplace_back(p.value.size(), 0.0);
    s.v.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<NamedArray>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ContractViolation("adam_step: buffer counts disagree");
  // Validate every gradient before touching any parameter so an abort leaves
  // the model in its pre-step state.
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].value.size())
      throw ContractViolation("adam_step: gradient shape mismatch for " + params[p].name);
    for (double gv : grads[p])
      if (!std::isfinite(gv))
        throw NumericError("adam_step: non-finite gradient for parameter " + params[p].name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].value.data;
    const auto& g = grads[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

Array sample_latent(const SynthWorld& world, Rng& rng) {
  Array w = Array::zeros(Shape::mat(world.layers(), world.channels()));
  for (double& v : w.data) v = rng.gaussian();
  return w;
}

TrainResult train(const TrainConfig& config, ModulationModel& model, const SynthWorld& world,
                  const LossWeights& weights, const std::filesystem::path& out_dir) {
  config.validate();
  weights.validate();
  std::vector<Prompt> prompts = config.prompts;
  if (prompts.empty()) {
    for (std::size_t a = 0; a < world.attribute_count(); ++a) {
      prompts.push_back(Prompt{a, +1});
      prompts.push_back(Prompt{a, -1});
    }
  }
  if (prompts.empty()) throw ContractViolation("train: the world has no attributes to prompt");
  for (const Prompt& p : prompts) (void)world.attribute(p.attribute);

  const bool writing = !out_dir.empty();
  if (writing) std::filesystem::create_directories(out_dir);

  Rng rng(config.seed);
  AdamState state = AdamState::init_for(model);
  TrainResult result;
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const double lr = lr_at(config, iter);

    Tape tape;
    StagedModel staged = stage(tape, model, true);
    WorldStage ws = world.stage(tape);

    Tensor batch_total;
    LossBreakdown mean{};
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      Tensor w = tape.leaf(sample_latent(world, rng), false);
      const Prompt prompt = prompts[rng.index(prompts.size())];
      Tensor e_t = tape.leaf(world.text_embedding(prompt), false);
      ModulationForward fwd = forward(tape, model, staged, w, e_t);
      LossTensors lt = total_loss(tape, world, ws, weights, w, fwd.w_edit, fwd.delta, prompt);
      LossBreakdown bd = lt.values();
      mean.embd += bd.embd * inv_batch;
      mean.norm += bd.norm * inv_batch;
      mean.id += bd.id * inv_batch;
      mean.bg += bd.bg * inv_batch;
      mean.sp += bd.sp * inv_batch;
      mean.t += bd.t * inv_batch;
      mean.total += bd.total * inv_batch;
      batch_total = b == 0 ? lt.total : add(batch_total, lt.total);
    }
    Tensor objective = scale(batch_total, inv_batch);

    if (!std::isfinite(objective[0])) {
      if (writing) model.save(out_dir / "model.ckpt");  // last good parameters
      throw NumericError("train: non-finite loss at iteration " + std::to_string(iter));
    }

    tape.backward(objective);
    std::vector<std::vector<double>> grads;
    grads.reserve(staged.leaves.size());
    for (const Tensor& leaf : staged.leaves) grads.push_back(leaf.grad());
    try {
      adam_step(model.params(), grads, state, lr, config.beta1, config.beta2, config.adam_eps);
    } catch (const NumericError&) {
      if (writing) model.save(out_dir / "model.ckpt");  // pre-step parameters
      throw;
    }

    result.history.push_back(IterRecord{iter, lr, mean});
    if (writing && config.eval_every > 0 && (iter + 1) % config.eval_every == 0) {
      char name[40];
      std::snprintf(name, sizeof(name), "model_iter%06zu.ckpt", iter + 1);
      model.save(out_dir / name);
    }
  }
  if (writing) model.save(out_dir / "model.ckpt");
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<IterRecord>& history) {
  out << "iter,lr,total,sp,t,embd,norm,id,bg\n";
  for (const IterRecord& r : history) {
    out << r.iter << ',' << format_g17(r.lr) << ',' << format_g17(r.loss.total) << ','
        << format_g17(r.loss.sp) << ',' << format_g17(r.loss.t) << ',' << format_g17(r.loss.embd)
        << ',' << format_g17(r.loss.norm) << ',' << format_g17(r.loss.id) << ','
        << format_g17(r.loss.bg) << '\n';
  }
}

void write_metrics_csv_file(const std::filesystem::path& path,
                            const std::vector<IterRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  write_metrics_csv(out, history);
}

}  // namespace semmod
