#include "semmod/injection.hpp"

#include "semmod/errors.hpp"

namespace semmod {

std::pair<Tensor, Tensor> injection_params(const Tensor& e_t, const InjectionWeights& w) {
  Tensor beta = affine(e_t, w.w_beta, w.b_beta);
  Tensor gamma = affine(e_t, w.w_gamma, w.b_gamma);
  return {beta, gamma};
}

Tensor inject(const Tensor& x, const Tensor& beta, const Tensor& gamma) {
  if (x.shape().rank != 2) throw ContractViolation("inject: x must be rank 2");
  if (beta.size() != x.cols() || gamma.size() != x.cols())
    throw ContractViolation("inject: beta/gamma length must equal channel count");
  auto [mean, dev] = row_stats(x);
  Tensor normalized = div_rows(sub_rows(x, mean), dev);
  return add_cols(scale_cols(normalized, add_scalar(gamma, 1.0)), beta);
}

}  // namespace semmod
