#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "semmod/config.hpp"
#include "semmod/errors.hpp"
#include "semmod/eval.hpp"
#include "semmod/gradcheck.hpp"
#include "semmod/runner.hpp"
#include "semmod/serialize.hpp"

namespace fs = std::filesystem;
using namespace semmod;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  return out;
}

RunConfig load_config_with_overrides(const std::string& config_path,
                                     std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

void write_loss_row(std::ostream& out, const LossBreakdown& b) {
  out << format_g17(b.total) << ',' << format_g17(b.sp) << ',' << format_g17(b.t) << ','
      << format_g17(b.embd) << ',' << format_g17(b.norm) << ',' << format_g17(b.id) << ','
      << format_g17(b.bg);
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_config_with_overrides(config_path, seed);
  TrainingJob job = run_training_job(cfg, out_dir);
  std::cout << "trained " << variant_name(cfg.stack.variant) << " k=" << cfg.stack.blocks << " for "
            << job.result.history.size() << " iterations; final total "
            << format_g17(job.result.history.back().loss.total) << "\n";
  return 0;
}

int cmd_edit(const std::string& checkpoint, const std::string& world_path,
             const std::string& prompt_spec, std::size_t samples, std::uint64_t seed,
             const std::string& out_dir) {
  SynthWorld world = SynthWorld::load_file(world_path);
  ModulationModel model = ModulationModel::load(checkpoint);
  Prompt prompt = parse_prompt(prompt_spec);
  if (prompt.attribute >= world.attribute_count())
    throw ConfigError("prompt names attribute " + std::to_string(prompt.attribute) +
                      " but the world has " + std::to_string(world.attribute_count()));
  fs::create_directories(out_dir);
  const LossWeights weights;

  std::ofstream edits = open_out(fs::path(out_dir) / "edits.csv");
  edits << "sample,total,sp,t,embd,norm,id,bg,t_unedited\n";
  std::ofstream diag = open_out(fs::path(out_dir) / "s_diagnostics.csv");
  diag << "sample,block";
  for (std::size_t l = 0; l < world.layers(); ++l) diag << ",s" << l;
  diag << '\n';

  const StackConfig& sc = model.config();
  const bool has_scale =
      sc.blocks > 0 && (sc.variant == Variant::full || sc.variant == Variant::no_t);
  Rng rng(seed);
  for (std::size_t i = 0; i < samples; ++i) {
    Tape tape;
    StagedModel staged = stage(tape, model, false);
    WorldStage ws = world.stage(tape);
    Tensor w = tape.leaf(sample_latent(world, rng), false);
    Tensor e_t = tape.leaf(world.text_embedding(prompt), false);
    ModulationForward fwd = forward(tape, model, staged, w, e_t);
    LossTensors lt = total_loss(tape, world, ws, weights, w, fwd.w_edit, fwd.delta, prompt);
    const double t_unedited = text_loss(world, ws, w, prompt)[0];
    edits << i << ',';
    write_loss_row(edits, lt.values());
    edits << ',' << format_g17(t_unedited) << '\n';
    if (has_scale) {
      for (std::size_t b = 0; b < fwd.blocks.size(); ++b) {
        diag << i << ',' << b;
        for (double s : fwd.blocks[b].scale.values()) diag << ',' << format_g17(s);
        diag << '\n';
      }
    }
  }
  return 0;
}

int cmd_interpolate(const std::string& checkpoint, const std::string& world_path,
                    const std::vector<std::string>& prompt_specs, std::size_t steps,
                    std::uint64_t seed, const std::string& out_dir) {
  if (prompt_specs.size() != 2)
    throw ConfigError("interpolate needs exactly two --prompt options");
  if (steps < 2) throw ConfigError("interpolate needs --lambda-steps >= 2");
  SynthWorld world = SynthWorld::load_file(world_path);
  ModulationModel model = ModulationModel::load(checkpoint);
  Prompt prompt_a = parse_prompt(prompt_specs[0]);
  Prompt prompt_b = parse_prompt(prompt_specs[1]);
  for (const Prompt& p : {prompt_a, prompt_b})
    if (p.attribute >= world.attribute_count())
      throw ConfigError("prompt names attribute " + std::to_string(p.attribute) +
                        " but the world has " + std::to_string(world.attribute_count()));

  Rng rng(seed);
  Array w0 = sample_latent(world, rng);
  auto edit_under = [&](const Prompt& p) {
    Tape tape;
    Tensor w = tape.leaf(w0, false);
    Tensor e_t = tape.leaf(world.text_embedding(p), false);
    return forward(tape, model, w, e_t).w_edit.to_array();
  };
  Array edit_a = edit_under(prompt_a);
  Array edit_b = edit_under(prompt_b);

  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "interpolation.csv");
  out << "lambda";
  for (std::size_t a = 0; a < world.attribute_count(); ++a) out << ",attr" << a;
  out << '\n';
  for (std::size_t i = 0; i < steps; ++i) {
    const double lambda =
        i == 0 ? 0.0 : (i + 1 == steps ? 1.0 : static_cast<double>(i) / static_cast<double>(steps - 1));
    Array wc = interpolate(edit_a, edit_b, lambda);
    out << format_g17(lambda);
    for (std::size_t a = 0; a < world.attribute_count(); ++a)
      out << ',' << format_g17(world.attribute_readout(wc, a));
    out << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_config_with_overrides(config_path, seed);
  AblationSummary summary = run_ablation(cfg, out_dir);
  {
    std::ofstream out = open_out(fs::path(out_dir) / "summary.csv");
    write_ablation_summary_csv(out, summary);
  }
  {
    std::ofstream out = open_out(fs::path(out_dir) / "evals.csv");
    out << "column,seed_index,total,sp,t,embd,norm,id,bg\n";
    for (const AblationCell& cell : summary.cells) {
      out << cell.column << ',' << cell.seed_index << ',';
      write_loss_row(out, cell.eval.mean_loss);
      out << '\n';
    }
  }
  std::cout << "ablation summary written to " << (fs::path(out_dir) / "summary.csv").string()
            << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& dims_spec, std::size_t trials, std::uint64_t seed) {
  GradCheckDims dims;
  if (!dims_spec.empty()) {
    const auto x = dims_spec.find('x');
    if (x == std::string::npos)
      throw ConfigError("--dims expects <layers>x<channels>, e.g. 3x4");
    try {
      dims.layers = std::stoul(dims_spec.substr(0, x));
      dims.channels = std::stoul(dims_spec.substr(x + 1));
    } catch (const std::exception&) {
      throw ConfigError("--dims expects <layers>x<channels>, e.g. 3x4");
    }
    dims.embed = dims.channels;
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<GradCheckReport> reports = run_gradient_suite(dims, trials, seed);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const GradCheckReport& r : reports)
    std::printf("%-24s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "pass" : "FAIL");
  std::printf("%zu checks, %zu trials each, %.1f s\n", reports.size(), trials, elapsed);
  return all_pass(reports) ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint, const std::string& world_path, std::size_t samples,
             std::uint64_t seed, const std::vector<std::string>& prompt_specs,
             const std::string& out_dir) {
  SynthWorld world = SynthWorld::load_file(world_path);
  ModulationModel model = ModulationModel::load(checkpoint);
  std::vector<Prompt> prompts;
  for (const std::string& spec : prompt_specs) {
    Prompt p = parse_prompt(spec);
    if (p.attribute >= world.attribute_count())
      throw ConfigError("prompt names attribute " + std::to_string(p.attribute) +
                        " but the world has " + std::to_string(world.attribute_count()));
    prompts.push_back(p);
  }
  const LossWeights weights;
  EvalResult eval = evaluate_model(world, model, weights, samples, seed, prompts);

  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "eval.csv");
  out << "prompt,text_model,text_oracle,gap,s_argmax,host_layer,match,total,sp,t,embd,norm,id,bg\n";
  for (const PromptEval& pe : eval.prompts) {
    out << prompt_name(pe.prompt) << ',' << format_g17(pe.model_text_loss) << ','
        << format_g17(pe.oracle_text_loss) << ',' << format_g17(pe.gap) << ',';
    if (pe.has_scale)
      out << pe.scale_argmax << ',' << pe.host_layer << ',' << (pe.argmax_match ? 1 : 0);
    else
      out << ',' << pe.host_layer << ',';
    out << ',';
    write_loss_row(out, pe.mean_loss);
    out << '\n';
  }
  std::cout << "eval written over " << eval.prompts.size() << " prompts; mean total "
            << format_g17(eval.mean_loss.total) << "\n";
  return 0;
}

int cmd_config_reference(const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << config_reference_text();
  } else {
    std::ofstream out = open_out(out_path);
    out << config_reference_text();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic modulation toolkit: text-conditioned editing of layered latent codes "
               "on a synthetic world"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, world_path, dims_spec, ref_out;
  std::vector<std::string> prompts;
  std::optional<std::uint64_t> seed_override;
  std::uint64_t seed = 1;
  std::size_t samples = 16, steps = 5, trials = 100;

  CLI::App* train = app.add_subcommand("train", "train a model from a run configuration");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed_override, "override the run seed");

  CLI::App* edit = app.add_subcommand("edit", "edit sampled latents under one prompt");
  edit->add_option("--checkpoint", checkpoint)->required();
  edit->add_option("--world", world_path)->required();
  edit->add_option("--prompt", prompts, "prompt, e.g. attr0:+1")->required();
  edit->add_option("--samples", samples, "latent sample count");
  edit->add_option("--seed", seed, "latent sampling seed");
  edit->add_option("--out", out_dir)->required();

  CLI::App* interp = app.add_subcommand("interpolate", "blend the edits of two prompts");
  interp->add_option("--checkpoint", checkpoint)->required();
  interp->add_option("--world", world_path)->required();
  interp->add_option("--prompt", prompts, "two prompts")->required()->expected(1, 2);
  interp->add_option("--lambda-steps", steps, "number of blend values from 0 to 1");
  interp->add_option("--seed", seed, "latent sampling seed");
  interp->add_option("--out", out_dir)->required();

  CLI::App* ablate = app.add_subcommand("ablate", "variant and block-count sweep");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--out", out_dir)->required();
  ablate->add_option("--seed", seed_override, "override the run seed");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--dims", dims_spec, "instance size as <layers>x<channels> (default 3x4)");
  gradcheck->add_option("--trials", trials, "random trials per operation");
  gradcheck->add_option("--seed", seed, "suite seed");

  CLI::App* eval = app.add_subcommand("eval", "compare model edits against the oracle");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--world", world_path)->required();
  eval->add_option("--samples", samples, "evaluation latents per prompt")->default_val(64);
  eval->add_option("--seed", seed, "evaluation latent seed")->default_val(97);
  eval->add_option("--prompt", prompts, "restrict to listed prompts");
  eval->add_option("--out", out_dir)->required();

  CLI::App* ref = app.add_subcommand("config-reference", "print the annotated default configuration");
  ref->add_option("--out", ref_out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, seed_override);
    if (edit->parsed()) {
      if (prompts.size() != 1) throw ConfigError("edit takes exactly one --prompt");
      return cmd_edit(checkpoint, world_path, prompts[0], samples, seed, out_dir);
    }
    if (interp->parsed()) return cmd_interpolate(checkpoint, world_path, prompts, steps, seed, out_dir);
    if (ablate->parsed()) return cmd_ablate(config_path, out_dir, seed_override);
    if (gradcheck->parsed()) return cmd_gradcheck(dims_spec, trials, seed);
    if (eval->parsed())
      return cmd_eval(checkpoint, world_path, samples, seed, prompts, out_dir);
    if (ref->parsed()) return cmd_config_reference(ref_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
