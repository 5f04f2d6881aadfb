#include "semmod/alignment.hpp"

#include <string>

#include "semmod/errors.hpp"

namespace semmod {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_s: return "no_s";
    case Variant::no_t: return "no_t";
    case Variant::no_st: return "no_st";
    case Variant::mapper_baseline: return "mapper_baseline";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_s") return Variant::no_s;
  if (name == "no_t") return Variant::no_t;
  if (name == "no_st") return Variant::no_st;
  if (name == "mapper_baseline") return Variant::mapper_baseline;
  throw ConfigError("unknown variant: " + name);
}

namespace {

struct ChannelPath {
  Tensor attention;    // [D, D]
  Tensor translation;  // [D]
};

ChannelPath channel_path(const Tensor& e_t, const Tensor& delta_prev, const AlignmentWeights& w) {
  if (e_t.shape().rank != 1 || delta_prev.shape().rank != 2)
    throw ContractViolation("channel_attention: e_t must be a vector, delta_prev a matrix");
  const std::size_t layers = delta_prev.rows();
  const std::size_t channels = delta_prev.cols();
  if (e_t.size() != channels)
    throw ContractViolation("channel_attention: requires embedding size equal to channel count");
  if (w.wqc.rows() != 1 || w.wqc.cols() != layers)
    throw ContractViolation("channel_attention: Wqc must be 1 x layer-count");
  // Q_c = e_t^T Wqc is the outer product of e_t with the learned row: D x L.
  Tensor e_row = stack_rows({e_t});             // [1, D]
  Tensor qc = matmul(transpose(e_row), w.wqc);  // [D, L]
  Tensor k = matmul(delta_prev, w.wk);          // [L, D]
  ChannelPath out;
  out.attention = softmax_row(matmul(qc, k));   // [D, D], rows sum to one
  Tensor v = matmul(delta_prev, w.wv);          // [L, D]
  Tensor pooled = matmul(out.attention, transpose(v));  // [D, L]
  out.translation = adaptive_avg_pool_cols(pooled);     // [D]
  return out;
}

}  // namespace

Tensor position_attention(const Tensor& e_t, const Tensor& delta_prev, const AlignmentWeights& w) {
  if (e_t.shape().rank != 1 || delta_prev.shape().rank != 2)
    throw ContractViolation("position_attention: e_t must be a vector, delta_prev a matrix");
  if (e_t.size() != w.wq.rows() || w.wq.cols() != delta_prev.cols())
    throw ContractViolation("position_attention: projection shapes disagree");
  Tensor qp = vecmat(e_t, w.wq);        // [D]
  Tensor k = matmul(delta_prev, w.wk);  // [L, D]
  Tensor logits = matvec(k, qp);        // [L]
  return softmax_row(logits);
}

Tensor channel_attention(const Tensor& e_t, const Tensor& delta_prev, const AlignmentWeights& w) {
  return channel_path(e_t, delta_prev, w).translation;
}

AlignmentResult align(Variant variant, const Tensor& e_t, const Tensor& delta_prev,
                      const AlignmentWeights& w) {
  if (variant == Variant::mapper_baseline)
    throw ContractViolation("align: the mapper baseline has no alignment module");
  AlignmentResult out;
  Tensor v = matmul(delta_prev, w.wv);
  Tensor x = v;
  if (variant == Variant::full || variant == Variant::no_t) {
    out.scale = position_attention(e_t, delta_prev, w);
    out.attention_p = out.scale;
    x = scale_rows(x, out.scale);
  }
  if (variant == Variant::full || variant == Variant::no_s) {
    ChannelPath ch = channel_path(e_t, delta_prev, w);
    out.attention_c = ch.attention;
    out.translation = ch.translation;
    x = add_cols(x, out.translation);
  }
  out.aligned = x;
  return out;
}

}  // namespace semmod
