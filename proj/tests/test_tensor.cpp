#include <cmath>
#include <doctest.h>

#include "semmod/errors.hpp"
#include "semmod/gradcheck.hpp"
#include "semmod/rng.hpp"
#include "semmod/tensor.hpp"

using namespace semmod;

namespace {

Array rand_array(Shape s, Rng& rng) {
  Array a = Array::zeros(s);
  for (double& v : a.data) v = rng.gaussian();
  return a;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape tape;
  SUBCASE("identity is a no-op") {
    Tensor eye = tape.leaf(Array::mat(2, 2, {1, 0, 0, 1}));
    Tensor a = tape.leaf(Array::mat(2, 3, {1, 2, 3, 4, 5, 6}));
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == a[i]);
  }
  SUBCASE("hand product") {
    Tensor a = tape.leaf(Array::mat(2, 2, {1, 2, 3, 4}));
    Tensor b = tape.leaf(Array::mat(2, 1, {1, 1}));
    Tensor out = matmul(a, b);
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 7.0);
  }
  SUBCASE("inner dimension mismatch") {
    Tensor a = tape.leaf(Array::mat(2, 3, {1, 2, 3, 4, 5, 6}));
    Tensor b = tape.leaf(Array::mat(2, 2, {1, 0, 0, 1}));
    CHECK_THROWS_AS(matmul(a, b), ContractViolation);
  }
}

TEST_CASE("softmax_row") {
  Tape tape;
  SUBCASE("symmetric input") {
    Tensor out = softmax_row(tape.leaf(Array::vec({0.0, 0.0})));
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("logits [1, 0]") {
    Tensor out = softmax_row(tape.leaf(Array::vec({1.0, 0.0})));
    // e / (e + 1) and 1 / (e + 1)
    CHECK(std::abs(out[0] - 0.73105857863000490) < 1e-5);
    CHECK(std::abs(out[1] - 0.26894142136999512) < 1e-5);
  }
  SUBCASE("rows sum to one and shifts cancel") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Array x = rand_array(Shape::mat(3, 5), rng);
      Tensor base = softmax_row(tape.leaf(x));
      Tensor shifted = softmax_row(add_scalar(tape.leaf(x), rng.uniform(-10.0, 10.0)));
      for (std::size_t r = 0; r < 3; ++r) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) row_sum += base.at(r, c);
        CHECK(std::abs(row_sum - 1.0) < 1e-9);
      }
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(base[i] - shifted[i]) < 1e-9);
    }
  }
  SUBCASE("stable under large logits") {
    Tensor out = softmax_row(tape.leaf(Array::vec({1000.0, 999.0})));
    CHECK(std::isfinite(out[0]));
    CHECK(std::abs(out[0] + out[1] - 1.0) < 1e-12);
  }
}

TEST_CASE("cosine_similarity") {
  Tape tape;
  Tensor v = tape.leaf(Array::vec({0.3, -0.8, 2.5}));
  SUBCASE("self and antipodal") {
    CHECK(cosine_similarity(v, v)[0] == doctest::Approx(1.0).epsilon(1e-12));
    Tensor neg = scale(v, -1.0);
    CHECK(cosine_similarity(v, neg)[0] == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("45 degrees") {
    Tensor a = tape.leaf(Array::vec({1.0, 0.0}));
    Tensor b = tape.leaf(Array::vec({1.0, 1.0}));
    CHECK(std::abs(cosine_similarity(a, b)[0] - 0.70710678118654746) < 1e-5);
  }
  SUBCASE("zero norm is degenerate") {
    Tensor zero = tape.leaf(Array::vec({0.0, 0.0, 0.0}));
    CHECK_THROWS_AS(cosine_similarity(v, zero), DegenerateInput);
  }
}

TEST_CASE("l1_norm") {
  Tape tape;
  CHECK(l1_norm(tape.leaf(Array::mat(2, 2, {1, -2, 0, 3})))[0] == 6.0);
  CHECK(l1_norm(tape.leaf(Array::mat(2, 2, {0, 0, 0, 0})))[0] == 0.0);
  SUBCASE("gradient is the sign pattern, zero at zero") {
    Tensor x = tape.leaf(Array::mat(2, 2, {1.5, -2.0, 0.0, 3.0}), true);
    Tensor loss = l1_norm(x);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1.0, -1.0, 0.0, 1.0});
  }
}

TEST_CASE("row statistics") {
  Tape tape;
  SUBCASE("population stats of [1, 3]") {
    auto [mean, dev] = row_stats(tape.leaf(Array::mat(1, 2, {1, 3})));
    CHECK(mean[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(dev[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("constant row hits the floor") {
    auto [mean, dev] = row_stats(tape.leaf(Array::mat(1, 2, {5, 5})));
    CHECK(mean[0] == 5.0);
    CHECK(dev[0] == kSigmaFloor);
  }
  SUBCASE("single column floors everywhere") {
    Tensor dev = row_std(tape.leaf(Array::mat(3, 1, {1, -4, 9})));
    for (std::size_t i = 0; i < 3; ++i) CHECK(dev[i] == kSigmaFloor);
  }
}

TEST_CASE("adaptive_avg_pool_cols") {
  Tape tape;
  SUBCASE("hand case") {
    Tensor out = adaptive_avg_pool_cols(tape.leaf(Array::mat(2, 2, {1, 3, 2, 2})));
    CHECK(out[0] == 2.0);
    CHECK(out[1] == 2.0);
  }
  SUBCASE("single column is the identity") {
    Tensor out = adaptive_avg_pool_cols(tape.leaf(Array::mat(3, 1, {4, -1, 7})));
    CHECK(out[0] == 4.0);
    CHECK(out[1] == -1.0);
    CHECK(out[2] == 7.0);
  }
  SUBCASE("gradient spreads 1/n to each column") {
    Tensor x = tape.leaf(Array::mat(1, 4, {1, 2, 3, 4}), true);
    tape.backward(sum(adaptive_avg_pool_cols(x)));
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("backward") {
  SUBCASE("sum seeds ones") {
    Tape tape;
    Tensor x = tape.leaf(Array::mat(2, 3, {1, 2, 3, 4, 5, 6}), true);
    tape.backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("quadratic form") {
    Tape tape;
    Tensor x = tape.leaf(Array::vec({1.0, 2.0}), true);
    tape.backward(dot(x, x));
    CHECK(x.grad() == std::vector<double>{2.0, 4.0});
  }
  SUBCASE("non-scalar root is rejected") {
    Tape tape;
    Tensor x = tape.leaf(Array::vec({1.0, 2.0}), true);
    CHECK_THROWS_AS(tape.backward(x), ContractViolation);
  }
  SUBCASE("cross-tape operands are rejected") {
    Tape a, b;
    Tensor x = a.leaf(Array::vec({1.0}));
    Tensor y = b.leaf(Array::vec({1.0}));
    CHECK_THROWS_AS(add(x, y), ContractViolation);
  }
}

TEST_CASE("interior ops agree with hand arithmetic") {
  Tape tape;
  Tensor m = tape.leaf(Array::mat(2, 2, {1, 2, 3, 4}));
  SUBCASE("broadcast family") {
    Tensor rv = tape.leaf(Array::vec({10.0, 100.0}));
    CHECK(scale_rows(m, rv).values() == std::vector<double>{10, 20, 300, 400});
    CHECK(add_rows(m, rv).values() == std::vector<double>{11, 12, 103, 104});
    CHECK(sub_rows(m, rv).values() == std::vector<double>{-9, -8, -97, -96});
    CHECK(div_rows(m, rv).values() == std::vector<double>{0.1, 0.2, 0.03, 0.04});
    CHECK(scale_cols(m, rv).values() == std::vector<double>{10, 200, 30, 400});
    CHECK(add_cols(m, rv).values() == std::vector<double>{11, 102, 13, 104});
  }
  SUBCASE("structure ops") {
    CHECK(transpose(m).values() == std::vector<double>{1, 3, 2, 4});
    CHECK(flatten(m).values() == std::vector<double>{1, 2, 3, 4});
    CHECK(row_of(m, 1).values() == std::vector<double>{3, 4});
    Tensor v = tape.leaf(Array::vec({5.0, 6.0, 7.0}));
    CHECK(slice(v, 1, 2).values() == std::vector<double>{6, 7});
    CHECK(concat(row_of(m, 0), v).values() == std::vector<double>{1, 2, 5, 6, 7});
    CHECK(stack_rows({row_of(m, 1), row_of(m, 0)}).values() == std::vector<double>{3, 4, 1, 2});
  }
  SUBCASE("masked_l2") {
    Tensor x = tape.leaf(Array::vec({3.0, -4.0, 100.0}));
    Tensor mask = tape.leaf(Array::vec({1.0, 1.0, 0.0}));
    CHECK(masked_l2(x, mask)[0] == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("affine") {
    Tensor x = tape.leaf(Array::vec({1.0, 2.0}));
    Tensor w = tape.leaf(Array::mat(2, 2, {1, 2, 3, 4}));
    Tensor b = tape.leaf(Array::vec({0.5, -0.5}));
    CHECK(affine(x, w, b).values() == std::vector<double>{7.5, 9.5});
  }
}

TEST_CASE("gradient suite at reduced trial count") {
  // The acceptance run uses 100 trials; a smaller sweep keeps the unit suite
  // quick while covering every operation.
  std::vector<GradCheckReport> reports = run_gradient_suite(GradCheckDims{}, 10, 11);
  for (const GradCheckReport& r : reports) {
    INFO(r.name, " max rel err ", r.max_rel_err);
    CHECK(r.pass);
  }
  CHECK(all_pass(reports));
}

TEST_CASE("the checker flags a wrong gradient") {
  // Sanity of the harness itself: a sign-flipped analytic gradient must land
  // far outside the pass tolerance when compared with finite differences.
  Array x = Array::vec({0.7, -1.3, 2.1});
  const double h = 1e-3;
  double fd_vs_flipped = 0.0;
  Tape tape;
  Tensor leaf = tape.leaf(x, true);
  tape.backward(sum(leaf));
  auto eval = [](const Array& a) {
    Tape t2;
    return sum(t2.leaf(a))[0];
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    Array up = x, down = x;
    up.data[i] += h;
    down.data[i] -= h;
    const double fd = (eval(up) - eval(down)) / (2 * h);
    const double flipped = -leaf.grad()[i];
    fd_vs_flipped = std::max(fd_vs_flipped, std::abs(flipped - fd) / std::max(1.0, std::abs(fd)));
  }
  CHECK(fd_vs_flipped > kGradCheckTolerance);
}

TEST_CASE("bitwise determinism of forward and backward") {
  Rng rng(3);
  Array a = rand_array(Shape::mat(4, 3), rng);
  Array b = rand_array(Shape::mat(3, 4), rng);
  auto run = [&]() {
    Tape tape;
    Tensor ta = tape.leaf(a, true);
    Tensor tb = tape.leaf(b, true);
    Tensor out = softmax_row(matmul(ta, tb));
    Tensor loss = masked_l2(flatten(out), tape.leaf(Array::vec(std::vector<double>(16, 1.0))));
    tape.backward(loss);
    std::vector<double> all = out.values();
    const auto& ga = ta.grad();
    const auto& gb = tb.grad();
    all.insert(all.end(), ga.begin(), ga.end());
    all.insert(all.end(), gb.begin(), gb.end());
    all.push_back(loss[0]);
    return all;
  };
  CHECK(run() == run());
}
