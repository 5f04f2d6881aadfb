#include "semmod/losses.hpp"

#include "semmod/errors.hpp"

namespace semmod {

void LossWeights::validate() const {
  if (embd < 0 || norm < 0 || id < 0 || bg < 0 || sp < 0 || t < 0)
    throw ContractViolation("loss weights must be nonnegative");
}

LossBreakdown LossTensors::values() const {
  LossBreakdown b;
  b.embd = embd[0];
  b.norm = norm[0];
  b.id = id[0];
  b.bg = bg[0];
  b.sp = sp[0];
  b.t = t[0];
  b.total = total[0];
  return b;
}

namespace {

// 1 - cos(u, v)
Tensor cosine_distance(const Tensor& u, const Tensor& v) {
  return add_scalar(scale(cosine_similarity(u, v), -1.0), 1.0);
}

}  // namespace

Tensor embd_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
                 const Tensor& w) {
  Tensor e_edit = world.encode_image(s, world.generate(s, w_edit));
  Tensor e_orig = world.encode_image(s, world.generate(s, w));
  return cosine_distance(e_edit, e_orig);
}

Tensor norm_loss(const Tensor& delta) { return l1_norm(delta); }

Tensor id_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
               const Tensor& w) {
  Tensor r_edit = world.identity_features(s, world.generate(s, w_edit));
  Tensor r_orig = world.identity_features(s, world.generate(s, w));
  return cosine_distance(r_edit, r_orig);
}

Tensor bg_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
               const Tensor& w) {
  Tensor diff = sub(world.generate(s, w_edit), world.generate(s, w));
  return masked_l2(diff, s.mask);  // mask = P cap P; P is input independent
}

Tensor text_loss(const SynthWorld& world, const WorldStage& s, const Tensor& w_edit,
                 const Prompt& prompt) {
  Tensor e_edit = world.encode_image(s, world.generate(s, w_edit));
  Tensor e_t = w_edit.owner().leaf(world.text_embedding(prompt), false);
  return cosine_distance(e_edit, e_t);
}

Tensor embd_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w) {
  return embd_loss(world, world.stage(tape), w_edit, w);
}
Tensor id_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w) {
  return id_loss(world, world.stage(tape), w_edit, w);
}
Tensor bg_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Tensor& w) {
  return bg_loss(world, world.stage(tape), w_edit, w);
}
Tensor text_loss(Tape& tape, const SynthWorld& world, const Tensor& w_edit, const Prompt& prompt) {
  return text_loss(world, world.stage(tape), w_edit, prompt);
}

LossTensors total_loss(Tape& tape, const SynthWorld& world, const WorldStage& s,
                       const LossWeights& weights, const Tensor& w, const Tensor& w_edit,
                       const Tensor& delta, const Prompt& prompt) {
  weights.validate();
  LossTensors out;
  out.embd = embd_loss(world, s, w_edit, w);
  out.norm = norm_loss(delta);
  out.id = weights.use_id ? id_loss(world, s, w_edit, w) : tape.scalar(0.0);
  out.bg = weights.use_bg ? bg_loss(world, s, w_edit, w) : tape.scalar(0.0);
  out.t = text_loss(world, s, w_edit, prompt);
  Tensor sp = add(add(add(scale(out.embd, weights.embd), scale(out.norm, weights.norm)),
                      scale(out.id, weights.id)),
                  scale(out.bg, weights.bg));
  out.sp = sp;
  out.total = add(scale(out.sp, weights.sp), scale(out.t, weights.t));
  return out;
}

LossTensors total_loss(Tape& tape, const SynthWorld& world, const LossWeights& weights,
                       const Tensor& w, const Tensor& w_edit, const Tensor& delta,
                       const Prompt& prompt) {
  return total_loss(tape, world, world.stage(tape), weights, w, w_edit, delta, prompt);
}

}  // namespace semmod
