#include "semmod/eval.hpp"

#include <algorithm>

#include "semmod/errors.hpp"
#include "semmod/rng.hpp"
#include "semmod/trainer.hpp"

namespace semmod {

EvalResult evaluate_model(const SynthWorld& world, const ModulationModel& model,
                          const LossWeights& weights, std::size_t samples, std::uint64_t seed,
                          const std::vector<Prompt>& prompts_in) {
  if (samples == 0) throw ContractViolation("evaluate_model: needs at least one sample");
  std::vector<Prompt> prompts = prompts_in;
  if (prompts.empty()) {
    for (std::size_t a = 0; a < world.attribute_count(); ++a) {
      prompts.push_back(Prompt{a, +1});
      prompts.push_back(Prompt{a, -1});
    }
  }
  const StackConfig& cfg = model.config();
  const bool has_scale =
      cfg.blocks > 0 && (cfg.variant == Variant::full || cfg.variant == Variant::no_t);

  // All prompts share one latent set.
  Rng rng(seed);
  std::vector<Array> latents;
  latents.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) latents.push_back(sample_latent(world, rng));

  EvalResult out;
  const double inv_total = 1.0 / static_cast<double>(samples * prompts.size());
  for (const Prompt& prompt : prompts) {
    PromptEval pe;
    pe.prompt = prompt;
    pe.host_layer = world.attribute(prompt.attribute).host_layer;
    pe.has_scale = has_scale;
    if (has_scale) pe.scale_mean.assign(world.layers(), 0.0);

    const Array delta_star = world.oracle_edit(latents[0], prompt);
    const double inv = 1.0 / static_cast<double>(samples);
    for (const Array& w0 : latents) {
      Tape tape;
      StagedModel staged = stage(tape, model, false);
      WorldStage ws = world.stage(tape);
      Tensor w = tape.leaf(w0, false);
      Tensor e_t = tape.leaf(world.text_embedding(prompt), false);
      ModulationForward fwd = forward(tape, model, staged, w, e_t);
      LossTensors lt = total_loss(tape, world, ws, weights, w, fwd.w_edit, fwd.delta, prompt);
      LossBreakdown bd = lt.values();
      pe.mean_loss.embd += bd.embd * inv;
      pe.mean_loss.norm += bd.norm * inv;
      pe.mean_loss.id += bd.id * inv;
      pe.mean_loss.bg += bd.bg * inv;
      pe.mean_loss.sp += bd.sp * inv;
      pe.mean_loss.t += bd.t * inv;
      pe.mean_loss.total += bd.total * inv;
      pe.model_text_loss += bd.t * inv;

      Array w_star = w0;
      for (std::size_t i = 0; i < w_star.size(); ++i) w_star.data[i] += delta_star.data[i];
      Tensor oracle_edit = tape.leaf(w_star, false);
      pe.oracle_text_loss += text_loss(world, ws, oracle_edit, prompt)[0] * inv;

      if (has_scale) {
        const auto& s = fwd.blocks.front().scale.values();
        for (std::size_t l = 0; l < s.size(); ++l) pe.scale_mean[l] += s[l] * inv;
      }

      out.mean_loss.embd += bd.embd * inv_total;
      out.mean_loss.norm += bd.norm * inv_total;
      out.mean_loss.id += bd.id * inv_total;
      out.mean_loss.bg += bd.bg * inv_total;
      out.mean_loss.sp += bd.sp * inv_total;
      out.mean_loss.t += bd.t * inv_total;
      out.mean_loss.total += bd.total * inv_total;
    }
    pe.gap = pe.model_text_loss - pe.oracle_text_loss;
    if (has_scale) {
      pe.scale_argmax = static_cast<std::size_t>(
          std::max_element(pe.scale_mean.begin(), pe.scale_mean.end()) - pe.scale_mean.begin());
      pe.argmax_match = pe.scale_argmax == pe.host_layer;
    }
    out.prompts.push_back(std::move(pe));
  }
  return out;
}

std::vector<AttributeAlignment> attribute_alignment(const EvalResult& eval,
                                                    const SynthWorld& world) {
  std::vector<AttributeAlignment> out;
  for (std::size_t a = 0; a < world.attribute_count(); ++a) {
    AttributeAlignment al;
    al.attribute = a;
    al.host_layer = world.attribute(a).host_layer;
    std::vector<double> merged(world.layers(), 0.0);
    std::size_t contributing = 0;
    for (const PromptEval& pe : eval.prompts) {
      if (pe.prompt.attribute != a || !pe.has_scale) continue;
      for (std::size_t l = 0; l < merged.size(); ++l) merged[l] += pe.scale_mean[l];
      ++contributing;
    }
    if (contributing == 0) continue;  // variant without a scale path
    al.scale_argmax = static_cast<std::size_t>(
        std::max_element(merged.begin(), merged.end()) - merged.begin());
    al.match = al.scale_argmax == al.host_layer;
    out.push_back(al);
  }
  return out;
}

}  // namespace semmod
