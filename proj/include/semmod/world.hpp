#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semmod/tensor.hpp"

namespace semmod {

// A prompt names an attribute of the synthetic world and a target polarity.
struct Prompt {
  std::size_t attribute = 0;
  int value = +1;  // -1 or +1
};

// Parses "attr<K>:+1" / "attr<K>:-1" (also accepts bare "+" / "-").
Prompt parse_prompt(const std::string& spec);
std::string prompt_name(const Prompt& p);

// World tensors staged onto a tape for differentiable use.
struct WorldStage {
  Tensor gen;      // [D_img, L*D] linearized generator (band maps plus leakage)
  Tensor enc;      // [De, D_img] image encoder rows
  Tensor id_proj;  // [Wb, Wb]    identity head projection
  Tensor mask;     // [D_img]     non-facial indicator
};

// Frozen synthetic generator, encoders, identity head and parser mask with
// known per-layer semantics.
//
// The image-feature space splits into layers() + 2 equal bands: band l is
// written by latent layer l alone (plus leakage scaled by epsilon from every
// other layer); the last latent layer is the designated identity layer whose
// band the identity head reads; the two trailing bands receive only leakage
// and form the non-facial region.
class SynthWorld {
 public:
  struct Params {
    std::uint64_t seed = 1;
    std::size_t layers = 6;           // L
    std::size_t channels = 16;        // D
    std::size_t embed = 16;           // De
    std::size_t image_features = 128; // D_img
    std::size_t attributes = 4;
    double leakage = 0.05;            // epsilon
    double edit_strength = 3.0;       // pre-activation shift magnitude used by the oracle
  };

  struct Attribute {
    std::size_t host_layer = 0;
    Array direction;  // [D_img] unit vector supported on the host band
    Array readout;    // [D_img] pre-activation readout vector
  };

  static SynthWorld make(const Params& p);

  const Params& params() const { return p_; }
  std::size_t layers() const { return p_.layers; }
  std::size_t channels() const { return p_.channels; }
  std::size_t embed() const { return p_.embed; }
  std::size_t image_features() const { return p_.image_features; }
  std::size_t attribute_count() const { return attrs_.size(); }
  double leakage() const { return p_.leakage; }

  std::size_t band_width() const { return p_.image_features / (p_.layers + 2); }
  std::size_t band_start(std::size_t band) const { return band * band_width(); }
  std::size_t identity_layer() const { return p_.layers - 1; }
  const Attribute& attribute(std::size_t a) const;
  const std::vector<double>& parse_mask() const { return non_facial_; }
  const Array& generator_matrix() const { return gen_matrix_; }

  // --- differentiable surfaces -------------------------------------------
  WorldStage stage(Tape& tape) const;
  Tensor pre_activation(const WorldStage& s, const Tensor& w) const;
  Tensor generate(const WorldStage& s, const Tensor& w) const;       // tanh of the pre-activation
  Tensor encode_image(const WorldStage& s, const Tensor& img) const; // unit-norm embedding
  Tensor identity_features(const WorldStage& s, const Tensor& img) const;
  // Convenience overloads that stage internally.
  Tensor generate(Tape& tape, const Tensor& w) const;
  Tensor encode_image(Tape& tape, const Tensor& img) const;
  Tensor identity_features(Tape& tape, const Tensor& img) const;

  // --- plain (non-tape) surfaces -----------------------------------------
  // Unit-norm embedding of the clamp-free target image direction v * d_a.
  Array text_embedding(const Prompt& prompt) const;
  // Ridge-regularized least squares on the linearized generator: the offset
  // whose pre-activation shift best matches edit_strength * v * d_a.
  Array oracle_edit(const Array& w, const Prompt& prompt) const;
  double attribute_readout(const Array& w, std::size_t attr) const;

  // --- serialization -------------------------------------------------------
  void save(std::ostream& out) const;
  static SynthWorld load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static SynthWorld load_file(const std::filesystem::path& path);

 private:
  SynthWorld() = default;
  void assemble_generator();

  Params p_;
  std::vector<Array> band_maps_;  // per layer, [Wb, D]
  std::vector<Array> leak_maps_;  // per layer, [D_img, D], zero on the layer's own band
  Array gen_matrix_;              // [D_img, L*D]
  Array encoder_;                 // [De, D_img], orthonormal rows
  Array identity_proj_;           // [Wb, Wb]
  std::vector<Attribute> attrs_;
  std::vector<double> non_facial_;
};

inline constexpr double kOracleRidge = 1e-6;

}  // namespace semmod
