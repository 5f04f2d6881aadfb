#include <cstdlib>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "semmod/config.hpp"
#include "semmod/errors.hpp"

using namespace semmod;
namespace fs = std::filesystem;

namespace {

const char* cli = SEMMOD_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("semmod_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Tiny world and a short run keep the CLI tests quick.
const char* kSmokeConfig = R"(
[world]
layers = 4
channels = 5
embed = 5
image_features = 30
attributes = 2

[stack]
blocks = 2

[train]
iterations = 25
batch_size = 4

[eval]
samples = 8
)";

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("the generated reference parses back to the defaults") {
    RunConfig cfg = parse_run_config(config_reference_text());
    RunConfig defaults;
    CHECK(cfg.seed == defaults.seed);
    CHECK(cfg.world.layers == defaults.world.layers);
    CHECK(cfg.world.image_features == defaults.world.image_features);
    CHECK(cfg.stack.blocks == defaults.stack.blocks);
    CHECK(cfg.train.iterations == defaults.train.iterations);
    CHECK(cfg.train.lr0 == defaults.train.lr0);
    CHECK(cfg.loss.bg == defaults.loss.bg);
    CHECK(cfg.eval_samples == defaults.eval_samples);
    CHECK(cfg.ablate_seeds == defaults.ablate_seeds);
  }
  SUBCASE("unknown keys are rejected by name") {
    try {
      parse_run_config("[world]\nlayer_count = 6\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("world.layer_count") != std::string::npos);
    }
  }
  SUBCASE("paper-scale presets") {
    RunConfig face = parse_run_config("[train]\npreset = face\n");
    CHECK(face.train.iterations == 150000);
    CHECK(face.train.batch_size == 8);
    RunConfig church = parse_run_config("[train]\npreset = church\n");
    CHECK(church.train.iterations == 200000);
    CHECK(church.train.batch_size == 4);
    RunConfig car = parse_run_config("[train]\npreset = car\n");
    CHECK(car.train.iterations == 100000);
    CHECK(car.train.batch_size == 8);
    // explicit keys override the preset regardless of order
    RunConfig tuned = parse_run_config("[train]\niterations = 10\npreset = face\n");
    CHECK(tuned.train.iterations == 10);
  }
  SUBCASE("malformed values are rejected") {
    CHECK_THROWS_AS(parse_run_config("[train]\nlr = fast\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\npreset = boats\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("key_without_section = 1\n"), ConfigError);
  }
}

TEST_CASE("cli exit codes and artifacts") {
  fs::path dir = scratch("flow");
  const fs::path config = dir / "run.cfg";
  write_file(config, kSmokeConfig);

  SUBCASE("bad config exits 2") {
    write_file(dir / "bad.cfg", "[world]\nnope = 1\n");
    CHECK(run("train --config " + (dir / "bad.cfg").string() + " --out " + (dir / "o").string()) ==
          2);
    CHECK(run("train --config " + (dir / "missing.cfg").string() + " --out " +
              (dir / "o").string()) == 2);
    CHECK(run("definitely-not-a-command") == 2);
  }

  SUBCASE("train, edit, interpolate, eval round trip") {
    const fs::path out_a = dir / "a";
    const fs::path out_b = dir / "b";
    REQUIRE(run("train --config " + config.string() + " --out " + out_a.string()) == 0);
    REQUIRE(run("train --config " + config.string() + " --out " + out_b.string()) == 0);
    CHECK(fs::exists(out_a / "model.ckpt"));
    CHECK(fs::exists(out_a / "world.world"));
    CHECK(fs::exists(out_a / "metrics.csv"));
    // identical seeds give byte-identical outputs
    CHECK(file_bytes(out_a / "metrics.csv") == file_bytes(out_b / "metrics.csv"));
    CHECK(file_bytes(out_a / "model.ckpt") == file_bytes(out_b / "model.ckpt"));
    CHECK(file_bytes(out_a / "world.world") == file_bytes(out_b / "world.world"));
    // a different seed changes the run
    const fs::path out_c = dir / "c";
    REQUIRE(run("train --config " + config.string() + " --out " + out_c.string() + " --seed 9") ==
            0);
    CHECK(file_bytes(out_a / "metrics.csv") != file_bytes(out_c / "metrics.csv"));

    const std::string common = " --checkpoint " + (out_a / "model.ckpt").string() + " --world " +
                               (out_a / "world.world").string();
    SUBCASE("edit artifacts") {
      REQUIRE(run("edit" + common + " --prompt attr0:+1 --samples 5 --out " +
                  (dir / "edit").string()) == 0);
      std::ifstream edits(dir / "edit" / "edits.csv");
      std::string header;
      std::getline(edits, header);
      CHECK(header == "sample,total,sp,t,embd,norm,id,bg,t_unedited");
      int rows = 0;
      for (std::string line; std::getline(edits, line);) ++rows;
      CHECK(rows == 5);
      // diagnostics rows: sample,block,s0..s3 summing to one
      std::ifstream diag(dir / "edit" / "s_diagnostics.csv");
      std::getline(diag, header);
      CHECK(header == "sample,block,s0,s1,s2,s3");
      int diag_rows = 0;
      for (std::string line; std::getline(diag, line);) {
        ++diag_rows;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        std::getline(row, cell, ',');
        double total = 0.0;
        while (std::getline(row, cell, ',')) total += std::stod(cell);
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
      CHECK(diag_rows == 5 * 2);  // samples x blocks
    }
    SUBCASE("empty edit keeps the headers") {
      REQUIRE(run("edit" + common + " --prompt attr1:-1 --samples 0 --out " +
                  (dir / "edit0").string()) == 0);
      std::ifstream edits(dir / "edit0" / "edits.csv");
      std::string header;
      std::getline(edits, header);
      CHECK(header == "sample,total,sp,t,embd,norm,id,bg,t_unedited");
      std::string rest;
      CHECK_FALSE(std::getline(edits, rest));
    }
    SUBCASE("unknown prompt attribute exits 2") {
      CHECK(run("edit" + common + " --prompt attr7:+1 --out " + (dir / "edit_bad").string()) == 2);
      CHECK(run("edit" + common + " --prompt hello --out " + (dir / "edit_bad").string()) == 2);
    }
    SUBCASE("interpolate endpoints and steps") {
      REQUIRE(run("interpolate" + common +
                  " --prompt attr0:+1 --prompt attr1:+1 --lambda-steps 2 --out " +
                  (dir / "interp2").string()) == 0);
      std::ifstream csv(dir / "interp2" / "interpolation.csv");
      std::string header;
      std::getline(csv, header);
      CHECK(header == "lambda,attr0,attr1");
      std::vector<std::string> rows;
      for (std::string line; std::getline(csv, line);) rows.push_back(line);
      REQUIRE(rows.size() == 2);  // steps=2 gives just the endpoints
      CHECK(rows[0].substr(0, 2) == "0,");
      CHECK(rows[1].substr(0, 2) == "1,");
      CHECK(run("interpolate" + common + " --prompt attr0:+1 --lambda-steps 1 --out " +
                (dir / "interp1").string()) == 2);
    }
    SUBCASE("eval emits one row per prompt") {
      REQUIRE(run("eval" + common + " --samples 8 --out " + (dir / "eval").string()) == 0);
      std::ifstream csv(dir / "eval" / "eval.csv");
      std::string header;
      std::getline(csv, header);
      CHECK(header ==
            "prompt,text_model,text_oracle,gap,s_argmax,host_layer,match,total,sp,t,embd,norm,id,"
            "bg");
      int rows = 0;
      for (std::string line; std::getline(csv, line);) ++rows;
      CHECK(rows == 4);  // 2 attributes x 2 polarities
    }
  }

  SUBCASE("config reference is printed and parseable") {
    const fs::path ref = dir / "reference.cfg";
    REQUIRE(run("config-reference --out " + ref.string()) == 0);
    CHECK_NOTHROW(load_run_config(ref));
  }

  SUBCASE("gradcheck smoke") {
    CHECK(run("gradcheck --trials 2 --seed 5") == 0);
  }
}
