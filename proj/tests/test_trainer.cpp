#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <limits>
#include <sstream>

#include "semmod/errors.hpp"
#include "semmod/runner.hpp"
#include "semmod/trainer.hpp"

using namespace semmod;
namespace fs = std::filesystem;

namespace {

SynthWorld small_world(double leakage = 0.05) {
  SynthWorld::Params p;
  p.seed = 7;
  p.layers = 4;
  p.channels = 5;
  p.embed = 5;
  p.image_features = 30;
  p.attributes = 2;
  p.leakage = leakage;
  return SynthWorld::make(p);
}

StackConfig small_stack(int blocks = 2) {
  StackConfig cfg;
  cfg.blocks = blocks;
  cfg.layers = 4;
  cfg.channels = 5;
  cfg.embed = 5;
  return cfg;
}

TrainConfig smoke_config(std::size_t iterations) {
  TrainConfig tc;
  tc.iterations = iterations;
  tc.batch_size = 4;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST_CASE("adam single step matches the formula oracle") {
  std::vector<NamedArray> params = {{"theta", Array::vec({0.0})}};
  std::vector<std::vector<double>> grads = {{1.0}};
  AdamState state;
  state.m = {{0.0}};
  state.v = {{0.0}};
  const double lr = 0.0005, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam_step(params, grads, state, lr, b1, b2, eps);

  const double m = 0.1;    // (1 - b1) * g
  const double v = 0.001;  // (1 - b2) * g^2
  const double mhat = 1.0; // m / (1 - b1^1)
  const double vhat = 1.0; // v / (1 - b2^1)
  const double expected = 0.0 - lr * mhat / (std::sqrt(vhat) + eps);
  CHECK(std::abs(state.m[0][0] - m) < 1e-15);
  CHECK(std::abs(state.v[0][0] - v) < 1e-15);
  CHECK(std::abs(params[0].value[0] - expected) < 1e-15);
  CHECK(state.step == 1);
}

TEST_CASE("adam with zero gradients is the identity") {
  std::vector<NamedArray> params = {{"a", Array::vec({1.5, -2.5})},
                                    {"b", Array::mat(1, 2, {0.25, 4.0})}};
  const std::vector<NamedArray> before = params;
  std::vector<std::vector<double>> grads = {{0.0, 0.0}, {0.0, 0.0}};
  AdamState state;
  state.m = {{0, 0}, {0, 0}};
  state.v = {{0, 0}, {0, 0}};
  for (int i = 0; i < 3; ++i) adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8);
  for (std::size_t p = 0; p < params.size(); ++p)
    CHECK(params[p].value.data == before[p].value.data);
}

TEST_CASE("adam rejects non-finite gradients by name") {
  std::vector<NamedArray> params = {{"block0.wq", Array::vec({1.0})}};
  std::vector<std::vector<double>> grads = {{std::numeric_limits<double>::quiet_NaN()}};
  AdamState state;
  state.m = {{0.0}};
  state.v = {{0.0}};
  try {
    adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("block0.wq") != std::string::npos);
    CHECK(params[0].value[0] == 1.0);  // untouched
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  tc.iterations = 2000;
  SUBCASE("paper initial rate, then decade drops at the milestones") {
    CHECK(lr_at(tc, 0) == 0.0005);
    CHECK(lr_at(tc, 999) == 0.0005);
    CHECK(lr_at(tc, 1000) == doctest::Approx(0.00005).epsilon(1e-12));
    CHECK(lr_at(tc, 1599) == doctest::Approx(0.00005).epsilon(1e-12));
    CHECK(lr_at(tc, 1600) == doctest::Approx(0.000005).epsilon(1e-12));
    CHECK(lr_at(tc, 1999) == doctest::Approx(0.000005).epsilon(1e-12));
  }
  SUBCASE("explicit milestones") {
    tc.milestones = {10, 20};
    CHECK(lr_at(tc, 9) == 0.0005);
    CHECK(lr_at(tc, 10) == doctest::Approx(0.00005).epsilon(1e-12));
    CHECK(lr_at(tc, 25) == doctest::Approx(0.000005).epsilon(1e-12));
  }
  SUBCASE("never increases") {
    double prev = lr_at(tc, 0);
    for (std::size_t i = 1; i < tc.iterations; ++i) {
      const double cur = lr_at(tc, i);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
  SUBCASE("non-increasing milestone lists are rejected") {
    tc.milestones = {20, 20};
    CHECK_THROWS_AS(tc.validate(), ContractViolation);
  }
}

TEST_CASE("zero-iteration training is a no-op") {
  SynthWorld world = small_world();
  ModulationModel model(small_stack(), 3);
  const std::vector<NamedArray> before = model.params();
  TrainConfig tc = smoke_config(0);
  TrainResult result = train(tc, model, world, LossWeights{});
  CHECK(result.history.empty());
  for (std::size_t p = 0; p < before.size(); ++p)
    CHECK(model.params()[p].value.data == before[p].value.data);
}

TEST_CASE("smoke training run reduces the loss") {
  SynthWorld world = small_world();
  ModulationModel model(small_stack(), 3);
  TrainConfig tc = smoke_config(50);
  TrainResult result = train(tc, model, world, LossWeights{});
  REQUIRE(result.history.size() == 50);
  CHECK(result.history.back().loss.total < result.history.front().loss.total);
}

TEST_CASE("training is seed deterministic, including the metrics bytes") {
  SynthWorld world = small_world();
  auto run = [&]() {
    ModulationModel model(small_stack(), 3);
    TrainConfig tc = smoke_config(12);
    TrainResult result = train(tc, model, world, LossWeights{});
    std::ostringstream csv;
    write_metrics_csv(csv, result.history);
    return std::make_pair(csv.str(), model.params());
  };
  auto [csv_a, params_a] = run();
  auto [csv_b, params_b] = run();
  CHECK(csv_a == csv_b);
  REQUIRE(params_a.size() == params_b.size());
  for (std::size_t p = 0; p < params_a.size(); ++p)
    CHECK(params_a[p].value.data == params_b[p].value.data);
  CHECK(csv_a.substr(0, csv_a.find('\n')) == "iter,lr,total,sp,t,embd,norm,id,bg");
}

TEST_CASE("periodic and final checkpoints") {
  fs::path dir = fs::temp_directory_path() / "semmod_test_trainer_ckpt";
  fs::remove_all(dir);
  SynthWorld world = small_world();
  ModulationModel model(small_stack(), 3);
  TrainConfig tc = smoke_config(20);
  tc.eval_every = 10;
  train(tc, model, world, LossWeights{}, dir);
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(fs::exists(dir / "model_iter000010.ckpt"));
  CHECK(fs::exists(dir / "model_iter000020.ckpt"));
  ModulationModel final_model = ModulationModel::load(dir / "model.ckpt");
  CHECK(final_model.params().size() == model.params().size());
}

TEST_CASE("non-finite loss aborts and keeps the last good checkpoint") {
  fs::path dir = fs::temp_directory_path() / "semmod_test_trainer_abort";
  fs::remove_all(dir);
  SynthWorld world = small_world();
  ModulationModel model(small_stack(), 3);
  model.params()[0].value.data[0] = std::numeric_limits<double>::infinity();
  TrainConfig tc = smoke_config(5);
  CHECK_THROWS_AS(train(tc, model, world, LossWeights{}, dir), NumericError);
  CHECK(fs::exists(dir / "model.ckpt"));
}

TEST_CASE("median helper") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ContractViolation);
}
