#pragma once

#include "semmod/tensor.hpp"
#include "semmod/world.hpp"

namespace semmod {

struct LossWeights {
  double embd = 1.0;
  double norm = 1.5;
  double id = 1.0;
  double bg = 2.0;
  double sp = 1.0;
  double t = 1.5;
  // Identity and background terms apply to face-like worlds; both stay on by
  // default here because the synthetic world always has those bands.
  bool use_id = true;
  bool use_bg = true;

  void validate() const;
};

// Scalar view of one loss evaluation. sp and total satisfy the weighted-sum
// identities exactly (disabled terms enter as zero).
struct LossBreakdown {
  double embd = 0, norm = 0, id = 0, bg = 0, sp = 0, t = 0, total = 0;
};

// Tape handles for the same terms, for backpropagation.
struct LossTensors {
  Tensor embd, norm, id, bg, sp, t, total;
  LossBreakdown values() const;
};

// Individual terms. Cosine-based terms are 1 - cos(...) and lie in [0, 2].
Tensor embd_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
                 const Tensor& w);
Tensor norm_loss(const Tensor& delta);
Tensor id_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
               const Tensor& w);
Tensor bg_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
               const Tensor& w);
Tensor text_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
                 const Prompt& prompt);

// Convenience overloads staging the world on the tensors' tape.
Tensor embd_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w);
Tensor id_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w);
Tensor bg_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w);
Tensor text_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Prompt& prompt);

// Full objective: sp = le*embd + ln*norm + li*id + lb*bg, total = ls*sp + lt*t.
LossTensors total_loss(Tape& tape, const SynthWorld& world, const WorldStage& s,
                       const LossWeights& weights, const Tensor& w, const Tensor& w_edit,
                       const Tensor& delta, const Prompt& prompt);
LossTensors total_loss(Tape& tape, const SynthWorld& world, const LossWeights& weights,
                       const Tensor& w, const Tensor& w_edit, const Tensor& delta,
                       const Prompt& prompt);

}  // namespace semmod
