#include "semmod/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "semmod/errors.hpp"
#include "semmod/rng.hpp"
#include "semmod/serialize.hpp"

namespace semmod {

Prompt parse_prompt(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || spec.substr(0, 4) != "attr")
    throw ConfigError("bad prompt (expected attr<K>:+1 or attr<K>:-1): " + spec);
  Prompt p;
  try {
    p.attribute = static_cast<std::size_t>(std::stoul(spec.substr(4, colon - 4)));
  } catch (const std::exception&) {
    throw ConfigError("bad prompt attribute index: " + spec);
  }
  const std::string v = spec.substr(colon + 1);
  if (v == "+1" || v == "+")
    p.value = +1;
  else if (v == "-1" || v == "-")
    p.value = -1;
  else
    throw ConfigError("bad prompt value (expected +1 or -1): " + spec);
  return p;
}

std::string prompt_name(const Prompt& p) {
  return "attr" + std::to_string(p.attribute) + (p.value > 0 ? ":+1" : ":-1");
}

// Construction -----------------------------------------------------------------

SynthWorld SynthWorld::make(const Params& p) {
  const std::size_t bands = p.layers + 2;
  if (p.layers < 2) throw ContractViolation("world: needs at least two layers");
  if (p.image_features == 0 || p.image_features % bands != 0)
    throw ContractViolation("world: image_features must divide into layers + 2 equal bands");
  if (p.attributes > p.layers - 1)
    throw ContractViolation("world: attribute count must leave the identity layer free");
  if (p.embed > p.image_features)
    throw ContractViolation("world: embedding size exceeds image feature size");
  if (p.channels == 0 || p.embed == 0) throw ContractViolation("world: zero-sized extents");
  if (p.leakage < 0.0) throw ContractViolation("world: leakage must be nonnegative");

  SynthWorld w;
  w.p_ = p;
  const std::size_t wb = p.image_features / bands;
  const double gain = 1.0 / std::sqrt(static_cast<double>(p.channels));
  Rng rng(p.seed);

  // Per-layer band maps, then leakage maps (band rows zeroed after drawing so
  // the draw count never depends on the band geometry).
  for (std::size_t l = 0; l < p.layers; ++l) {
    Array a = Array::zeros(Shape::mat(wb, p.channels));
    for (double& v : a.data) v = gain * rng.gaussian();
    w.band_maps_.push_back(std::move(a));
  }
  for (std::size_t l = 0; l < p.layers; ++l) {
    Array b = Array::zeros(Shape::mat(p.image_features, p.channels));
    for (double& v : b.data) v = gain * rng.gaussian();
    const std::size_t start = l * wb;
    for (std::size_t r = start; r < start + wb; ++r)
      for (std::size_t c = 0; c < p.channels; ++c) b.at(r, c) = 0.0;
    w.leak_maps_.push_back(std::move(b));
  }

  // Image encoder with orthonormal rows (two Gram-Schmidt sweeps).
  w.encoder_ = Array::zeros(Shape::mat(p.embed, p.image_features));
  for (double& v : w.encoder_.data) v = rng.gaussian();
  for (std::size_t i = 0; i < p.embed; ++i) {
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (std::size_t j = 0; j < i; ++j) {
        double proj = 0.0;
        for (std::size_t c = 0; c < p.image_features; ++c)
          proj += w.encoder_.at(i, c) * w.encoder_.at(j, c);
        for (std::size_t c = 0; c < p.image_features; ++c)
          w.encoder_.at(i, c) -= proj * w.encoder_.at(j, c);
      }
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < p.image_features; ++c)
      norm += w.encoder_.at(i, c) * w.encoder_.at(i, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("world: encoder construction degenerated");
    for (std::size_t c = 0; c < p.image_features; ++c) w.encoder_.at(i, c) /= norm;
  }

  w.identity_proj_ = Array::zeros(Shape::mat(wb, wb));
  const double id_gain = 1.0 / std::sqrt(static_cast<double>(wb));
  for (double& v : w.identity_proj_.data) v = id_gain * rng.gaussian();

  // Attribute hosts: distinct non-identity layers, deterministic shuffle.
  std::vector<std::size_t> hosts(p.layers - 1);
  std::iota(hosts.begin(), hosts.end(), 0);
  for (std::size_t i = hosts.size(); i > 1; --i) std::swap(hosts[i - 1], hosts[rng.index(i)]);
  for (std::size_t a = 0; a < p.attributes; ++a) {
    Attribute attr;
    attr.host_layer = hosts[a];
    attr.direction = Array::zeros(Shape::vec(p.image_features));
    const std::size_t start = attr.host_layer * wb;
    double norm = 0.0;
    for (std::size_t i = 0; i < wb; ++i) {
      double v = rng.gaussian();
      attr.direction.data[start + i] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("world: attribute direction degenerated");
    for (std::size_t i = 0; i < wb; ++i) attr.direction.data[start + i] /= norm;
    attr.readout = attr.direction;
    w.attrs_.push_back(std::move(attr));
  }

  // The two trailing bands receive only leakage; they are the non-facial
  // region the parser mask marks.
  w.non_facial_.assign(p.image_features, 0.0);
  for (std::size_t i = p.layers * wb; i < p.image_features; ++i) w.non_facial_[i] = 1.0;

  w.assemble_generator();
  return w;
}

void SynthWorld::assemble_generator() {
  const std::size_t wb = band_width();
  const std::size_t n = p_.layers * p_.channels;
  gen_matrix_ = Array::zeros(Shape::mat(p_.image_features, n));
  for (std::size_t l = 0; l < p_.layers; ++l) {
    const std::size_t start = l * wb;
    for (std::size_t r = 0; r < p_.image_features; ++r) {
      const bool in_band = r >= start && r < start + wb;
      for (std::size_t c = 0; c < p_.channels; ++c) {
        gen_matrix_.at(r, l * p_.channels + c) =
            in_band ? band_maps_[l].at(r - start, c) : p_.leakage * leak_maps_[l].at(r, c);
      }
    }
  }
}

const SynthWorld::Attribute& SynthWorld::attribute(std::size_t a) const {
  if (a >= attrs_.size())
    throw ContractViolation("world: unknown attribute " + std::to_string(a));
  return attrs_[a];
}

// Differentiable surfaces --------------------------------------------------------

WorldStage SynthWorld::stage(Tape& tape) const {
  WorldStage s;
  s.gen = tape.leaf(gen_matrix_, false);
  s.enc = tape.leaf(encoder_, false);
  s.id_proj = tape.leaf(identity_proj_, false);
  s.mask = tape.leaf(Shape::vec(non_facial_.size()), non_facial_, false);
  return s;
}

Tensor SynthWorld::pre_activation(const WorldStage& s, const Tensor& w) const {
  if (w.shape().rank != 2 || w.rows() != p_.layers || w.cols() != p_.channels)
    throw ContractViolation("generate: latent shape does not match world");
  return matvec(s.gen, flatten(w));
}

Tensor SynthWorld::generate(const WorldStage& s, const Tensor& w) const {
  return tanh(pre_activation(s, w));
}

Tensor SynthWorld::encode_image(const WorldStage& s, const Tensor& img) const {
  if (img.shape().rank != 1 || img.size() != p_.image_features)
    throw ContractViolation("encode_image: feature length does not match world");
  return l2_normalize(matvec(s.enc, img));  // l2_normalize rejects norms below 1e-9
}

Tensor SynthWorld::identity_features(const WorldStage& s, const Tensor& img) const {
  if (img.shape().rank != 1 || img.size() != p_.image_features)
    throw ContractViolation("identity_features: feature length does not match world");
  return matvec(s.id_proj, slice(img, band_start(identity_layer()), band_width()));
}

Tensor SynthWorld::generate(Tape& tape, const Tensor& w) const { return generate(stage(tape), w); }
Tensor SynthWorld::encode_image(Tape& tape, const Tensor& img) const {
  return encode_image(stage(tape), img);
}
Tensor SynthWorld::identity_features(Tape& tape, const Tensor& img) const {
  return identity_features(stage(tape), img);
}

// Plain surfaces -------------------------------------------------------------------

Array SynthWorld::text_embedding(const Prompt& prompt) const {
  const Attribute& attr = attribute(prompt.attribute);
  if (prompt.value != 1 && prompt.value != -1)
    throw ContractViolation("text_embedding: prompt value must be -1 or +1");
  Array out = Array::zeros(Shape::vec(p_.embed));
  double norm = 0.0;
  for (std::size_t i = 0; i < p_.embed; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < p_.image_features; ++c)
      acc += encoder_.at(i, c) * (prompt.value * attr.direction.data[c]);
    out.data[i] = acc;
    norm += acc * acc;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-9) throw DegenerateInput("text_embedding: direction is invisible to the encoder");
  for (double& v : out.data) v /= norm;
  return out;
}

Array SynthWorld::oracle_edit(const Array& w, const Prompt& prompt) const {
  if (!(w.shape == Shape::mat(p_.layers, p_.channels)))
    throw ContractViolation("oracle_edit: latent shape does not match world");
  const Attribute& attr = attribute(prompt.attribute);
  const std::size_t n = p_.layers * p_.channels;
  const std::size_t m = p_.image_features;

  // Normal equations (J^T J + ridge I) x = J^T tau with J the linearized
  // generator and tau the target pre-activation shift.
  std::vector<double> tau(m);
  for (std::size_t r = 0; r < m; ++r)
    tau[r] = p_.edit_strength * prompt.value * attr.direction.data[r];

  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = i == j ? kOracleRidge : 0.0;
      for (std::size_t r = 0; r < m; ++r) acc += gen_matrix_.at(r, i) * gen_matrix_.at(r, j);
      g[i * n + j] = acc;
    }
  std::vector<double> b(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) acc += gen_matrix_.at(r, i) * tau[r];
    b[i] = acc;
  }

  // Cholesky factorization, then two triangular solves.
  std::vector<double> chol(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = g[i * n + j];
      for (std::size_t k = 0; k < j; ++k) acc -= chol[i * n + k] * chol[j * n + k];
      if (i == j) {
        if (acc <= 0.0) throw NumericError("oracle_edit: normal matrix not positive definite");
        chol[i * n + i] = std::sqrt(acc);
      } else {
        chol[i * n + j] = acc / chol[j * n + j];
      }
    }
  }
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= chol[i * n + k] * y[k];
    y[i] = acc / chol[i * n + i];
  }
  Array delta = Array::zeros(Shape::mat(p_.layers, p_.channels));
  for (std::size_t i = n; i-- > 0;) {
    double acc = y[i];
    for (std::size_t k = i + 1; k < n; ++k) acc -= chol[k * n + i] * delta.data[k];
    delta.data[i] = acc / chol[i * n + i];
  }
  return delta;
}

double SynthWorld::attribute_readout(const Array& w, std::size_t attr_id) const {
  if (!(w.shape == Shape::mat(p_.layers, p_.channels)))
    throw ContractViolation("attribute_readout: latent shape does not match world");
  const Attribute& attr = attribute(attr_id);
  double acc = 0.0;
  for (std::size_t r = 0; r < p_.image_features; ++r) {
    double pre = 0.0;
    for (std::size_t i = 0; i < p_.layers * p_.channels; ++i)
      pre += gen_matrix_.at(r, i) * w.data[i];
    acc += attr.readout.data[r] * pre;
  }
  return acc;
}

// Serialization ---------------------------------------------------------------------

void SynthWorld::save(std::ostream& out) const {
  out << "semmod-world v1\n";
  out << "seed=" << p_.seed << "\n";
  out << "layers=" << p_.layers << "\n";
  out << "channels=" << p_.channels << "\n";
  out << "embed=" << p_.embed << "\n";
  out << "image_features=" << p_.image_features << "\n";
  out << "attributes=" << p_.attributes << "\n";
  out << "leakage=" << format_g17(p_.leakage) << "\n";
  out << "edit_strength=" << format_g17(p_.edit_strength) << "\n";
  for (std::size_t a = 0; a < attrs_.size(); ++a)
    out << "attr" << a << ".host_layer=" << attrs_[a].host_layer << "\n";
  out << "end-header\n";

  std::vector<NamedArray> entries;
  for (std::size_t l = 0; l < p_.layers; ++l)
    entries.push_back({"gen.band" + std::to_string(l), band_maps_[l]});
  for (std::size_t l = 0; l < p_.layers; ++l)
    entries.push_back({"gen.leak" + std::to_string(l), leak_maps_[l]});
  entries.push_back({"encoder", encoder_});
  entries.push_back({"identity.proj", identity_proj_});
  for (std::size_t a = 0; a < attrs_.size(); ++a) {
    entries.push_back({"attr" + std::to_string(a) + ".direction", attrs_[a].direction});
    entries.push_back({"attr" + std::to_string(a) + ".readout", attrs_[a].readout});
  }
  entries.push_back({"mask.nonfacial", Array{Shape::vec(non_facial_.size()), non_facial_}});
  write_container(out, entries);
}

SynthWorld SynthWorld::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "semmod-world v1")
    throw ParseError("world: bad header line", 0);
  std::map<std::string, std::string> kv;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    offset += line.size() + 1;
    if (line == "end-header") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("world: bad header entry: " + line, offset);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("world: missing header key " + key, offset);
    return it->second;
  };
  SynthWorld w;
  w.p_.seed = std::stoull(need("seed"));
  w.p_.layers = std::stoul(need("layers"));
  w.p_.channels = std::stoul(need("channels"));
  w.p_.embed = std::stoul(need("embed"));
  w.p_.image_features = std::stoul(need("image_features"));
  w.p_.attributes = std::stoul(need("attributes"));
  w.p_.leakage = std::stod(need("leakage"));
  w.p_.edit_strength = std::stod(need("edit_strength"));

  std::vector<NamedArray> entries = read_container(in);
  std::size_t idx = 0;
  auto take = [&](const std::string& name) -> Array {
    if (idx >= entries.size() || entries[idx].name != name)
      throw ParseError("world: expected container entry " + name, offset);
    return entries[idx++].value;
  };
  for (std::size_t l = 0; l < w.p_.layers; ++l)
    w.band_maps_.push_back(take("gen.band" + std::to_string(l)));
  for (std::size_t l = 0; l < w.p_.layers; ++l)
    w.leak_maps_.push_back(take("gen.leak" + std::to_string(l)));
  w.encoder_ = take("encoder");
  w.identity_proj_ = take("identity.proj");
  for (std::size_t a = 0; a < w.p_.attributes; ++a) {
    Attribute attr;
    attr.host_layer = std::stoul(need("attr" + std::to_string(a) + ".host_layer"));
    attr.direction = take("attr" + std::to_string(a) + ".direction");
    attr.readout = take("attr" + std::to_string(a) + ".readout");
    w.attrs_.push_back(std::move(attr));
  }
  Array mask = take("mask.nonfacial");
  w.non_facial_ = mask.data;
  w.assemble_generator();
  return w;
}

void SynthWorld::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  save(out);
  if (!out) throw NumericError("write failed: " + path.string());
}

SynthWorld SynthWorld::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  return load(in);
}

}  // namespace semmod
