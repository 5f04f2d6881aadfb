#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "semmod/tensor.hpp"

namespace semmod {

// Scalar-valued function of several tensors, built on a caller-owned tape.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of f against central finite differences
// (step h) for every coordinate of every input. Returns the largest
// elementwise relative error |g_ad - g_fd| / max(1, |g_fd|).
double check_gradient(const LossFn& f, const std::vector<Array>& inputs, double h = 1e-3);

struct GradCheckDims {
  std::size_t layers = 3;
  std::size_t channels = 4;
  std::size_t embed = 4;
};

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Runs `trials` randomized gradient checks for every differentiable
// operation, for both attention paths, for the injection, and for the full
// modulation-plus-losses objective on a small world.
std::vector<GradCheckReport> run_gradient_suite(const GradCheckDims& dims, std::size_t trials,
                                                std::uint64_t seed);

bool all_pass(const std::vector<GradCheckReport>& reports);

}  // namespace semmod
