#pragma once

#include <string>

#include "semmod/tensor.hpp"

namespace semmod {

// Which parts of the linear alignment a model variant keeps. The ablations
// drop the scale path, the translation path, or both; the mapper baseline
// replaces the whole block stack.
enum class Variant { full, no_s, no_t, no_st, mapper_baseline };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Staged projection weights of one block's alignment module. Handles are
// left invalid for paths the variant does not use.
struct AlignmentWeights {
  Tensor wq;   // [De, D]  query projection, position path
  Tensor wk;   // [D, D]   key projection, shared by both paths
  Tensor wv;   // [D, D]   value projection, shared by both paths
  Tensor wqc;  // [1, L]   query seed, channel path
};

struct AlignmentResult {
  Tensor aligned;      // [L, D]  the linearly aligned code
  Tensor scale;        // [L]     softmax attention over layer positions (invalid for no_s/no_st)
  Tensor translation;  // [D]     pooled channel attention output (invalid for no_t/no_st)
  Tensor attention_p;  // alias of scale
  Tensor attention_c;  // [D, D]  row-stochastic channel attention map
};

// Cross attention over the L layer positions: softmax of (e_t Wq) (dp Wk)^T.
// The result is nonnegative and sums to one.
Tensor position_attention(const Tensor& e_t, const Tensor& delta_prev, const AlignmentWeights& w);

// Cross attention over the D channels, pooled to a translation vector:
// adaptive average pooling of softmax_row((e_t^T Wqc) K) V^T. Requires the
// embedding size to equal the channel count.
Tensor channel_attention(const Tensor& e_t, const Tensor& delta_prev, const AlignmentWeights& w);

// Applies the variant's linear transformation to V = delta_prev Wv:
// full: S x V + T, no_s: V + T, no_t: S x V, no_st: V.
AlignmentResult align(Variant variant, const Tensor& e_t, const Tensor& delta_prev,
                      const AlignmentWeights& w);

}  // namespace semmod
