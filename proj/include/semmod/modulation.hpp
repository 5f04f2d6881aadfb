#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "semmod/alignment.hpp"
#include "semmod/injection.hpp"
#include "semmod/serialize.hpp"
#include "semmod/tensor.hpp"

namespace semmod {

// Geometry and variant of a block stack.
struct StackConfig {
  int blocks = 4;              // k, number of semantic modulation blocks
  std::size_t layers = 6;      // L, latent layer count
  std::size_t channels = 16;   // D, channels per layer
  std::size_t embed = 16;      // De, text embedding size
  Variant variant = Variant::full;
  double offset_scale = 1.0;   // alpha, scales the final offset

  // Throws ContractViolation on inconsistent settings. The mapper baseline
  // requires blocks == 0; alignment variants require embed == channels.
  void validate() const;
  bool operator==(const StackConfig&) const = default;
};

// Expected parameter layout (names and shapes, in serialization order) for a
// configuration. Shared by initialization, checkpoint validation and staging.
struct ParamSpec {
  std::string name;
  Shape shape;
};
std::vector<ParamSpec> param_layout(const StackConfig& cfg);

// Owns the learnable parameters of the block stack (or of the elementwise
// mapper when the variant is mapper_baseline).
class ModulationModel {
 public:
  ModulationModel(const StackConfig& cfg, std::uint64_t seed);

  const StackConfig& config() const { return cfg_; }
  std::vector<NamedArray>& params() { return params_; }
  const std::vector<NamedArray>& params() const { return params_; }

  // Checkpoints are self-describing: configuration scalars are stored as
  // meta.* entries ahead of the parameters. Round-trips are bit-exact.
  void save(const std::filesystem::path& path) const;
  static ModulationModel load(const std::filesystem::path& path);
  static ModulationModel load(const std::filesystem::path& path, const StackConfig& expected);

 private:
  explicit ModulationModel(const StackConfig& cfg) : cfg_(cfg) {}
  StackConfig cfg_;
  std::vector<NamedArray> params_;
};

// Parameter leaves staged onto a tape, parallel to model.params().
struct StagedModel {
  std::vector<Tensor> leaves;
};
StagedModel stage(Tape& tape, const ModulationModel& model, bool requires_grad);

struct BlockTrace {
  Tensor scale;        // invalid when the variant drops the scale path
  Tensor translation;  // invalid when the variant drops the translation path
  Tensor attention_c;
  Tensor aligned;      // x_i, the alignment output fed to the injection
  Tensor delta;        // this block's refined offset
};

struct ModulationForward {
  Tensor delta;   // alpha * dw_k, what is added to the latent code
  Tensor w_edit;  // w + delta
  std::vector<BlockTrace> blocks;
};

// Runs the stack: dw_0 = w; block i maps (dw_{i-1}, e_t) to dw_i; the final
// offset is alpha * dw_k.
ModulationForward forward(Tape& tape, const ModulationModel& model, const StagedModel& staged,
                          const Tensor& w, const Tensor& e_t);
// Convenience overload that stages the parameters without gradients.
ModulationForward forward(Tape& tape, const ModulationModel& model, const Tensor& w,
                          const Tensor& e_t);

// Exact affine combination w_a + lambda * (w_b - w_a). The endpoints return
// the inputs bitwise; lambda outside [0, 1] is a contract violation.
Array interpolate(const Array& w_a, const Array& w_b, double lambda);

}  // namespace semmod
