#pragma once

#include <utility>

#include "semmod/tensor.hpp"

namespace semmod {

// Staged fully-connected maps that turn a text embedding into the two
// injection parameter vectors. Single affine layers, no hidden layer.
struct InjectionWeights {
  Tensor w_beta;   // [De, D]
  Tensor b_beta;   // [D]
  Tensor w_gamma;  // [De, D]
  Tensor b_gamma;  // [D]
};

// beta = fc_beta(e_t), gamma = fc_gamma(e_t).
std::pair<Tensor, Tensor> injection_params(const Tensor& e_t, const InjectionWeights& w);

// Normalizes each row of x to zero mean and unit population deviation
// (deviation floored at kSigmaFloor), then applies the channel-wise
// modulation (1 + gamma) * n + beta.
Tensor inject(const Tensor& x, const Tensor& beta, const Tensor& gamma);

}  // namespace semmod
