#include "semmod/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "semmod/errors.hpp"

namespace semmod {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct KeyValue {
  std::string key;  // "section.key"
  std::string value;
};

std::vector<KeyValue> tokenize(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    out.push_back(KeyValue{section + "." + key, trim(line.substr(eq + 1))});
  }
  return out;
}

double parse_double(const KeyValue& kv) {
  try {
    std::size_t pos = 0;
    double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + kv.key + ": expected a number, got '" + kv.value + "'");
  }
}

std::uint64_t parse_u64(const KeyValue& kv) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + kv.key + ": expected a nonnegative integer, got '" +
                      kv.value + "'");
  }
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1" || kv.value == "on") return true;
  if (kv.value == "false" || kv.value == "0" || kv.value == "off") return false;
  throw ConfigError("config key " + kv.key + ": expected true/false, got '" + kv.value + "'");
}

std::vector<std::size_t> parse_size_list(const KeyValue& kv) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream in(kv.value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(parse_u64(KeyValue{kv.key, item})));
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::vector<KeyValue> entries = tokenize(text);

  // The preset applies first so explicit keys can override it regardless of
  // their position in the file.
  for (const KeyValue& kv : entries) {
    if (kv.key != "train.preset") continue;
    if (kv.value.empty()) continue;
    if (kv.value == "face") {
      cfg.train.iterations = 150000;
      cfg.train.batch_size = 8;
    } else if (kv.value == "church") {
      cfg.train.iterations = 200000;
      cfg.train.batch_size = 4;
    } else if (kv.value == "car") {
      cfg.train.iterations = 100000;
      cfg.train.batch_size = 8;
    } else {
      throw ConfigError("config key train.preset: expected face, car or church, got '" + kv.value +
                        "'");
    }
  }

  for (const KeyValue& kv : entries) {
    const std::string& k = kv.key;
    if (k == "run.seed") cfg.seed = parse_u64(kv);
    else if (k == "world.layers") cfg.world.layers = parse_u64(kv);
    else if (k == "world.channels") cfg.world.channels = parse_u64(kv);
    else if (k == "world.embed") cfg.world.embed = parse_u64(kv);
    else if (k == "world.image_features") cfg.world.image_features = parse_u64(kv);
    else if (k == "world.attributes") cfg.world.attributes = parse_u64(kv);
    else if (k == "world.leakage") cfg.world.leakage = parse_double(kv);
    else if (k == "world.edit_strength") cfg.world.edit_strength = parse_double(kv);
    else if (k == "stack.blocks") cfg.stack.blocks = static_cast<int>(parse_u64(kv));
    else if (k == "stack.variant") cfg.stack.variant = variant_from_name(kv.value);
    else if (k == "stack.offset_scale") cfg.stack.offset_scale = parse_double(kv);
    else if (k == "train.preset") { /* handled above */ }
    else if (k == "train.iterations") cfg.train.iterations = parse_u64(kv);
    else if (k == "train.batch_size") cfg.train.batch_size = parse_u64(kv);
    else if (k == "train.lr") cfg.train.lr0 = parse_double(kv);
    else if (k == "train.beta1") cfg.train.beta1 = parse_double(kv);
    else if (k == "train.beta2") cfg.train.beta2 = parse_double(kv);
    else if (k == "train.adam_eps") cfg.train.adam_eps = parse_double(kv);
    else if (k == "train.milestones") cfg.train.milestones = parse_size_list(kv);
    else if (k == "train.decay") cfg.train.decay = parse_double(kv);
    else if (k == "train.eval_every") cfg.train.eval_every = parse_u64(kv);
    else if (k == "loss.lambda_embd") cfg.loss.embd = parse_double(kv);
    else if (k == "loss.lambda_norm") cfg.loss.norm = parse_double(kv);
    else if (k == "loss.lambda_id") cfg.loss.id = parse_double(kv);
    else if (k == "loss.lambda_bg") cfg.loss.bg = parse_double(kv);
    else if (k == "loss.lambda_sp") cfg.loss.sp = parse_double(kv);
    else if (k == "loss.lambda_t") cfg.loss.t = parse_double(kv);
    else if (k == "loss.use_id") cfg.loss.use_id = parse_bool(kv);
    else if (k == "loss.use_bg") cfg.loss.use_bg = parse_bool(kv);
    else if (k == "eval.samples") cfg.eval_samples = parse_u64(kv);
    else if (k == "eval.seed") cfg.eval_seed = parse_u64(kv);
    else if (k == "ablate.seeds") cfg.ablate_seeds = parse_u64(kv);
    else throw ConfigError("config: unknown key " + k);
  }
  // Stack geometry follows the world unless the config pins it explicitly;
  // here they are always tied.
  cfg.stack.layers = cfg.world.layers;
  cfg.stack.channels = cfg.world.channels;
  cfg.stack.embed = cfg.world.embed;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string config_reference_text() {
  return R"(# semmod run configuration reference.
# Every key is optional; the values below are the built-in defaults.
# The single run seed drives everything: the world construction, the model
# initialization and the training stream use seeds derived from it.

[run]
seed = 1

[world]
layers = 6            # latent layer count L
channels = 16         # channels per layer D
embed = 16            # text/image embedding size (must equal channels)
image_features = 128  # must divide into layers + 2 equal bands
attributes = 4        # hosted on distinct non-identity layers
leakage = 0.05        # cross-band bleed of the generator
edit_strength = 3     # pre-activation shift magnitude targeted by the oracle

[stack]
blocks = 4            # semantic modulation block count k
variant = full        # full | no_s | no_t | no_st | mapper_baseline (forces blocks = 0)
offset_scale = 1      # scales the final offset added to the latent code

[train]
preset =              # face | car | church: iteration/batch presets
                      # (face: 150000/8, church: 200000/4, car: 100000/8)
iterations = 2000
batch_size = 8
lr = 0.0005
beta1 = 0.9
beta2 = 0.999
adam_eps = 1e-08
milestones =          # comma-separated decay iterations; empty = 50% and 80% of the run
decay = 0.1
eval_every = 0        # periodic checkpoint cadence; 0 keeps only the final one

[loss]
lambda_embd = 1
lambda_norm = 1.5
lambda_id = 1
lambda_bg = 2
lambda_sp = 1
lambda_t = 1.5
use_id = true
use_bg = true

[eval]
samples = 64
seed = 97

[ablate]
seeds = 5
)";
}

}  // namespace semmod
