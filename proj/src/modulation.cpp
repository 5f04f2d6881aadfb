#include "semmod/modulation.hpp"

#include <cmath>
#include <string>

#include "semmod/errors.hpp"
#include "semmod/rng.hpp"

namespace semmod {

void StackConfig::validate() const {
  if (blocks < 0) throw ContractViolation("stack: blocks must be >= 0");
  if (layers == 0 || channels == 0 || embed == 0)
    throw ContractViolation("stack: layers/channels/embed must be positive");
  if (!(offset_scale > 0.0)) throw ContractViolation("stack: offset_scale must be positive");
  if (variant == Variant::mapper_baseline) {
    if (blocks != 0) throw ContractViolation("stack: the mapper baseline runs with blocks == 0");
  } else if (embed != channels) {
    throw ContractViolation("stack: channel attention requires embed == channels");
  }
}

std::vector<ParamSpec> param_layout(const StackConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const std::size_t L = cfg.layers, D = cfg.channels, De = cfg.embed;
  if (cfg.variant == Variant::mapper_baseline) {
    // Four affine layers applied per latent row: (D + De) -> D -> D -> D -> D.
    std::size_t in = D + De;
    for (int layer = 0; layer < 4; ++layer) {
      std::string base = "mapper.fc" + std::to_string(layer);
      out.push_back({base + ".w", Shape::mat(in, D)});
      out.push_back({base + ".b", Shape::vec(D)});
      in = D;
    }
    return out;
  }
  const bool has_s = cfg.variant == Variant::full || cfg.variant == Variant::no_t;
  const bool has_t = cfg.variant == Variant::full || cfg.variant == Variant::no_s;
  for (int b = 0; b < cfg.blocks; ++b) {
    std::string base = "block" + std::to_string(b) + ".";
    if (has_s) out.push_back({base + "wq", Shape::mat(De, D)});
    if (has_s || has_t) out.push_back({base + "wk", Shape::mat(D, D)});
    out.push_back({base + "wv", Shape::mat(D, D)});
    if (has_t) out.push_back({base + "wqc", Shape::mat(1, L)});
    out.push_back({base + "fc_beta.w", Shape::mat(De, D)});
    out.push_back({base + "fc_beta.b", Shape::vec(D)});
    out.push_back({base + "fc_gamma.w", Shape::mat(De, D)});
    out.push_back({base + "fc_gamma.b", Shape::vec(D)});
  }
  return out;
}

namespace {

bool is_zero_init(const std::string& name) {
  // Injection maps start at zero; the mapper's last layer starts at zero so
  // the initial edit direction is learned, not random.
  return name.find("fc_beta") != std::string::npos ||
         name.find("fc_gamma") != std::string::npos ||
         name.find("mapper.fc3") != std::string::npos;
}

}  // namespace

ModulationModel::ModulationModel(const StackConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  for (const ParamSpec& spec : param_layout(cfg)) {
    Array a = Array::zeros(spec.shape);
    if (!is_zero_init(spec.name)) {
      double bound;
      if (spec.name.find("mapper.") != std::string::npos) {
        bound = 1.0 / std::sqrt(static_cast<double>(spec.shape.d0));  // fan-in
      } else {
        bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
      }
      for (double& v : a.data) v = rng.uniform(-bound, bound);
    }
    params_.push_back(NamedArray{spec.name, std::move(a)});
  }
}

// Checkpoint io ---------------------------------------------------------------

namespace {

constexpr const char* kMetaNames[] = {"meta.blocks",  "meta.layers",  "meta.channels",
                                      "meta.embed",   "meta.variant", "meta.offset_scale"};

std::vector<NamedArray> meta_entries(const StackConfig& cfg) {
  auto scalar = [](const char* name, double v) {
    return NamedArray{name, Array::vec({v})};
  };
  return {scalar(kMetaNames[0], static_cast<double>(cfg.blocks)),
          scalar(kMetaNames[1], static_cast<double>(cfg.layers)),
          scalar(kMetaNames[2], static_cast<double>(cfg.channels)),
          scalar(kMetaNames[3], static_cast<double>(cfg.embed)),
          scalar(kMetaNames[4], static_cast<double>(static_cast<int>(cfg.variant))),
          scalar(kMetaNames[5], cfg.offset_scale)};
}

StackConfig config_from_meta(const std::vector<NamedArray>& entries) {
  StackConfig cfg;
  if (entries.size() < 6) throw ContractViolation("checkpoint: missing meta entries");
  for (int i = 0; i < 6; ++i) {
    if (entries[static_cast<std::size_t>(i)].name != kMetaNames[i] ||
        entries[static_cast<std::size_t>(i)].value.size() != 1)
      throw ContractViolation(std::string("checkpoint: expected meta entry ") + kMetaNames[i]);
  }
  cfg.blocks = static_cast<int>(entries[0].value[0]);
  cfg.layers = static_cast<std::size_t>(entries[1].value[0]);
  cfg.channels = static_cast<std::size_t>(entries[2].value[0]);
  cfg.embed = static_cast<std::size_t>(entries[3].value[0]);
  int vcode = static_cast<int>(entries[4].value[0]);
  if (vcode < 0 || vcode > 4) throw ContractViolation("checkpoint: bad variant code");
  cfg.variant = static_cast<Variant>(vcode);
  cfg.offset_scale = entries[5].value[0];
  cfg.validate();
  return cfg;
}

}  // namespace

void ModulationModel::save(const std::filesystem::path& path) const {
  std::vector<NamedArray> entries = meta_entries(cfg_);
  entries.insert(entries.end(), params_.begin(), params_.end());
  write_container_file(path, entries);
}

ModulationModel ModulationModel::load(const std::filesystem::path& path) {
  std::vector<NamedArray> entries = read_container_file(path);
  StackConfig cfg = config_from_meta(entries);
  std::vector<ParamSpec> layout = param_layout(cfg);
  if (entries.size() != 6 + layout.size())
    throw ContractViolation("checkpoint: parameter count does not match configuration");
  ModulationModel model(cfg);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const NamedArray& e = entries[6 + i];
    if (e.name != layout[i].name || !(e.value.shape == layout[i].shape))
      throw ContractViolation("checkpoint: entry " + e.name + " does not match expected layout");
    model.params_.push_back(e);
  }
  return model;
}

ModulationModel ModulationModel::load(const std::filesystem::path& path,
                                      const StackConfig& expected) {
  ModulationModel model = load(path);
  if (!(model.cfg_ == expected))
    throw ContractViolation("checkpoint: stored configuration does not match the requested one");
  return model;
}

// Forward ----------------------------------------------------------------------

StagedModel stage(Tape& tape, const ModulationModel& model, bool requires_grad) {
  StagedModel staged;
  staged.leaves.reserve(model.params().size());
  for (const NamedArray& p : model.params())
    staged.leaves.push_back(tape.leaf(p.value, requires_grad));
  return staged;
}

namespace {

// Walks the staged leaves in layout order.
struct Cursor {
  const std::vector<Tensor>& leaves;
  std::size_t i = 0;
  Tensor next() { return leaves.at(i++); }
};

ModulationForward forward_mapper(const ModulationModel& model, const StagedModel& staged,
                                 const Tensor& w, const Tensor& e_t) {
  Cursor cur{staged.leaves};
  Tensor w0 = cur.next(), b0 = cur.next();
  Tensor w1 = cur.next(), b1 = cur.next();
  Tensor w2 = cur.next(), b2 = cur.next();
  Tensor w3 = cur.next(), b3 = cur.next();
  std::vector<Tensor> rows;
  rows.reserve(w.rows());
  for (std::size_t l = 0; l < w.rows(); ++l) {
    Tensor h = concat(row_of(w, l), e_t);
    h = tanh(affine(h, w0, b0));
    h = tanh(affine(h, w1, b1));
    h = tanh(affine(h, w2, b2));
    rows.push_back(affine(h, w3, b3));
  }
  ModulationForward out;
  out.delta = scale(stack_rows(rows), model.config().offset_scale);
  out.w_edit = add(w, out.delta);
  return out;
}

}  // namespace

ModulationForward forward(Tape& tape, const ModulationModel& model, const StagedModel& staged,
                          const Tensor& w, const Tensor& e_t) {
  const StackConfig& cfg = model.config();
  if (w.shape().rank != 2 || w.rows() != cfg.layers || w.cols() != cfg.channels)
    throw ContractViolation("forward: latent code shape does not match configuration");
  if (e_t.shape().rank != 1 || e_t.size() != cfg.embed)
    throw ContractViolation("forward: embedding length does not match configuration");
  if (staged.leaves.size() != model.params().size())
    throw ContractViolation("forward: staged parameter count mismatch");
  (void)tape;

  if (cfg.variant == Variant::mapper_baseline) return forward_mapper(model, staged, w, e_t);

  const bool has_s = cfg.variant == Variant::full || cfg.variant == Variant::no_t;
  const bool has_t = cfg.variant == Variant::full || cfg.variant == Variant::no_s;

  ModulationForward out;
  Cursor cur{staged.leaves};
  Tensor delta_prev = w;  // dw_0 = w
  for (int b = 0; b < cfg.blocks; ++b) {
    AlignmentWeights aw;
    if (has_s) aw.wq = cur.next();
    if (has_s || has_t) aw.wk = cur.next();
    aw.wv = cur.next();
    if (has_t) aw.wqc = cur.next();
    InjectionWeights iw;
    iw.w_beta = cur.next();
    iw.b_beta = cur.next();
    iw.w_gamma = cur.next();
    iw.b_gamma = cur.next();

    AlignmentResult ar = align(cfg.variant, e_t, delta_prev, aw);
    auto [beta, gamma] = injection_params(e_t, iw);
    Tensor dw = inject(ar.aligned, beta, gamma);
    out.blocks.push_back(BlockTrace{ar.scale, ar.translation, ar.attention_c, ar.aligned, dw});
    delta_prev = dw;
  }
  out.delta = scale(delta_prev, cfg.offset_scale);
  out.w_edit = add(w, out.delta);
  return out;
}

ModulationForward forward(Tape& tape, const ModulationModel& model, const Tensor& w,
                          const Tensor& e_t) {
  StagedModel staged = stage(tape, model, false);
  return forward(tape, model, staged, w, e_t);
}

Array interpolate(const Array& w_a, const Array& w_b, double lambda) {
  if (!(w_a.shape == w_b.shape)) throw ContractViolation("interpolate: shapes disagree");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ContractViolation("interpolate: lambda must lie in [0, 1]");
  if (lambda == 0.0) return w_a;
  if (lambda == 1.0) return w_b;
  Array out = Array::zeros(w_a.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = w_a.data[i] + lambda * (w_b.data[i] - w_a.data[i]);
  return out;
}

}  // namespace semmod
