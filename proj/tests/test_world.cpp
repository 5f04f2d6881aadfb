#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semmod/errors.hpp"
#include "semmod/rng.hpp"
#include "semmod/world.hpp"

using namespace semmod;
namespace fs = std::filesystem;

namespace {

SynthWorld::Params small_params(double leakage = 0.05) {
  SynthWorld::Params p;
  p.seed = 42;
  p.layers = 4;
  p.channels = 5;
  p.embed = 5;
  p.image_features = 30;  // (4 + 2) bands of 5
  p.attributes = 2;
  p.leakage = leakage;
  return p;
}

std::string serialized(const SynthWorld& w) {
  std::ostringstream out;
  w.save(out);
  return out.str();
}

Array rand_latent(const SynthWorld& w, Rng& rng) {
  Array a = Array::zeros(Shape::mat(w.layers(), w.channels()));
  for (double& v : a.data) v = rng.gaussian();
  return a;
}

}  // namespace

TEST_CASE("world construction") {
  SUBCASE("same seed reproduces the serialized bytes") {
    SynthWorld a = SynthWorld::make(small_params());
    SynthWorld b = SynthWorld::make(small_params());
    CHECK(serialized(a) == serialized(b));
  }
  SUBCASE("infeasible sizes are rejected") {
    SynthWorld::Params p = small_params();
    p.image_features = 31;  // not divisible into bands
    CHECK_THROWS_AS(SynthWorld::make(p), ContractViolation);
    p = small_params();
    p.attributes = p.layers + 1;
    CHECK_THROWS_AS(SynthWorld::make(p), ContractViolation);
    p = small_params();
    p.attributes = p.layers;  // would need the identity layer as a host
    CHECK_THROWS_AS(SynthWorld::make(p), ContractViolation);
    p = small_params();
    p.embed = p.image_features + 1;
    CHECK_THROWS_AS(SynthWorld::make(p), ContractViolation);
  }
  SUBCASE("attribute hosts are unique non-identity layers") {
    SynthWorld w = SynthWorld::make(small_params());
    std::vector<bool> seen(w.layers(), false);
    for (std::size_t a = 0; a < w.attribute_count(); ++a) {
      const std::size_t host = w.attribute(a).host_layer;
      CHECK(host != w.identity_layer());
      CHECK_FALSE(seen[host]);
      seen[host] = true;
    }
    CHECK_THROWS_AS(w.attribute(w.attribute_count()), ContractViolation);
  }
}

TEST_CASE("generator locality") {
  Rng rng(1);
  SUBCASE("zero latent generates zero features") {
    SynthWorld w = SynthWorld::make(small_params());
    Tape tape;
    Tensor img = w.generate(tape, tape.leaf(Array::zeros(Shape::mat(4, 5))));
    for (std::size_t i = 0; i < w.image_features(); ++i) CHECK(img[i] == 0.0);
  }
  SUBCASE("without leakage a layer only moves its own band") {
    SynthWorld w = SynthWorld::make(small_params(0.0));
    Array base = rand_latent(w, rng);
    const double h = 1e-3;
    for (std::size_t l = 0; l < w.layers(); ++l) {
      for (std::size_t c = 0; c < w.channels(); ++c) {
        Array up = base, down = base;
        up.at(l, c) += h;
        down.at(l, c) -= h;
        Tape tape;
        WorldStage s = w.stage(tape);
        Tensor img_up = w.pre_activation(s, tape.leaf(up));
        Tensor img_down = w.pre_activation(s, tape.leaf(down));
        for (std::size_t r = 0; r < w.image_features(); ++r) {
          const double fd = (img_up[r] - img_down[r]) / (2 * h);
          const bool in_band = r >= w.band_start(l) && r < w.band_start(l) + w.band_width();
          if (!in_band) CHECK(std::abs(fd) < 1e-12);
        }
      }
    }
  }
  SUBCASE("changing layer 2 leaves other bands untouched") {
    SynthWorld w = SynthWorld::make(small_params(0.0));
    Array base = rand_latent(w, rng);
    Array bumped = base;
    for (std::size_t c = 0; c < w.channels(); ++c) bumped.at(2, c) += 0.7;
    Tape tape;
    WorldStage s = w.stage(tape);
    Tensor img_a = w.generate(s, tape.leaf(base));
    Tensor img_b = w.generate(s, tape.leaf(bumped));
    for (std::size_t r = 0; r < w.image_features(); ++r) {
      const bool in_band = r >= w.band_start(2) && r < w.band_start(2) + w.band_width();
      if (!in_band) CHECK(img_a[r] == img_b[r]);
    }
  }
  SUBCASE("pre-activation matches the scalar oracle") {
    SynthWorld w = SynthWorld::make(small_params());
    Array latent = rand_latent(w, rng);
    Tape tape;
    Tensor pre = w.pre_activation(w.stage(tape), tape.leaf(latent));
    const Array& m = w.generator_matrix();
    for (std::size_t r = 0; r < w.image_features(); ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < latent.size(); ++i) acc += m.at(r, i) * latent.data[i];
      CHECK(pre[r] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  SUBCASE("off-band response grows with leakage") {
    Rng rng2(55);
    Array probe;
    std::vector<double> norms;
    for (double eps : {0.0, 0.05, 0.1}) {
      SynthWorld w = SynthWorld::make(small_params(eps));
      if (probe.data.empty()) probe = rand_latent(w, rng2);
      // gradient of the summed off-band pre-activation with respect to layer 0
      double norm = 0.0;
      const Array& m = w.generator_matrix();
      for (std::size_t r = 0; r < w.image_features(); ++r) {
        const bool in_band = r < w.band_width();
        if (in_band) continue;
        for (std::size_t c = 0; c < w.channels(); ++c) norm += m.at(r, c) * m.at(r, c);
      }
      norms.push_back(std::sqrt(norm));
    }
    CHECK(norms[0] == 0.0);
    CHECK(norms[1] > norms[0]);
    CHECK(norms[2] > norms[1]);
  }
}

TEST_CASE("image encoder") {
  SynthWorld w = SynthWorld::make(small_params());
  Rng rng(4);
  SUBCASE("rows are orthonormal") {
    Tape tape;
    WorldStage s = w.stage(tape);
    for (std::size_t i = 0; i < w.embed(); ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.image_features(); ++c)
          acc += s.enc.at(i, c) * s.enc.at(j, c);
        CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-9);
      }
  }
  SUBCASE("unit-norm embeddings") {
    Tape tape;
    Array img = Array::zeros(Shape::vec(w.image_features()));
    for (double& v : img.data) v = rng.gaussian();
    Tensor e = w.encode_image(tape, tape.leaf(img));
    double norm = 0.0;
    for (std::size_t i = 0; i < w.embed(); ++i) norm += e[i] * e[i];
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    CHECK(cosine_similarity(e, e)[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("linear before normalization") {
    Tape tape;
    WorldStage s = w.stage(tape);
    Array img = Array::zeros(Shape::vec(w.image_features()));
    for (double& v : img.data) v = rng.gaussian();
    Tensor raw = matvec(s.enc, tape.leaf(img));
    Array scaled = img;
    for (double& v : scaled.data) v *= 3.0;
    Tensor raw_scaled = matvec(s.enc, tape.leaf(scaled));
    for (std::size_t i = 0; i < w.embed(); ++i)
      CHECK(raw_scaled[i] == doctest::Approx(3.0 * raw[i]).epsilon(1e-12));
  }
  SUBCASE("zero image is degenerate") {
    Tape tape;
    Tensor zero = tape.leaf(Array::zeros(Shape::vec(w.image_features())));
    CHECK_THROWS_AS(w.encode_image(tape, zero), DegenerateInput);
  }
}

TEST_CASE("text embeddings") {
  SynthWorld w = SynthWorld::make(small_params());
  SUBCASE("unit norm and deterministic") {
    Array a = w.text_embedding(Prompt{0, +1});
    Array b = w.text_embedding(Prompt{0, +1});
    CHECK(a.data == b.data);
    double norm = 0.0;
    for (double v : a.data) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
  }
  SUBCASE("opposite polarities are antipodal") {
    Array plus = w.text_embedding(Prompt{1, +1});
    Array minus = w.text_embedding(Prompt{1, -1});
    for (std::size_t i = 0; i < plus.size(); ++i)
      CHECK(plus.data[i] == doctest::Approx(-minus.data[i]).epsilon(1e-12));
  }
  SUBCASE("unknown attribute is rejected") {
    CHECK_THROWS_AS(w.text_embedding(Prompt{9, +1}), ContractViolation);
    CHECK_THROWS_AS(w.text_embedding(Prompt{0, 2}), ContractViolation);
  }
}

TEST_CASE("identity head and parser mask") {
  SynthWorld w = SynthWorld::make(small_params(0.0));
  Rng rng(15);
  SUBCASE("mask marks exactly the trailing bands and is idempotent") {
    const auto& mask = w.parse_mask();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const bool trailing = i >= w.layers() * w.band_width();
      CHECK(mask[i] == (trailing ? 1.0 : 0.0));
      CHECK(mask[i] * mask[i] == mask[i]);
    }
  }
  SUBCASE("identity features are linear in the identity band") {
    Tape tape;
    WorldStage s = w.stage(tape);
    Array img = Array::zeros(Shape::vec(w.image_features()));
    for (double& v : img.data) v = rng.gaussian();
    Tensor r1 = w.identity_features(s, tape.leaf(img));
    Array doubled = img;
    for (double& v : doubled.data) v *= 2.0;
    Tensor r2 = w.identity_features(s, tape.leaf(doubled));
    for (std::size_t i = 0; i < w.band_width(); ++i)
      CHECK(r2[i] == doctest::Approx(2.0 * r1[i]).epsilon(1e-12));
  }
  SUBCASE("an edit off the identity layer leaves identity features fixed") {
    Array base = rand_latent(w, rng);
    Array edited = base;
    const std::size_t host = w.attribute(0).host_layer;
    for (std::size_t c = 0; c < w.channels(); ++c) edited.at(host, c) += 1.3;
    Tape tape;
    WorldStage s = w.stage(tape);
    Tensor ra = w.identity_features(s, w.generate(s, tape.leaf(base)));
    Tensor rb = w.identity_features(s, w.generate(s, tape.leaf(edited)));
    for (std::size_t i = 0; i < w.band_width(); ++i) CHECK(ra[i] == rb[i]);
  }
}

TEST_CASE("oracle edit") {
  Rng rng(23);
  SUBCASE("without leakage the solution lives on the host layer") {
    SynthWorld w = SynthWorld::make(small_params(0.0));
    Array delta = w.oracle_edit(rand_latent(w, rng), Prompt{0, +1});
    const std::size_t host = w.attribute(0).host_layer;
    for (std::size_t l = 0; l < w.layers(); ++l)
      for (std::size_t c = 0; c < w.channels(); ++c)
        if (l != host) CHECK(std::abs(delta.at(l, c)) < 1e-8);
    double host_norm = 0.0;
    for (std::size_t c = 0; c < w.channels(); ++c)
      host_norm += delta.at(host, c) * delta.at(host, c);
    CHECK(host_norm > 1e-6);
  }
  SUBCASE("zero target shift gives a zero edit") {
    SynthWorld::Params p = small_params();
    p.edit_strength = 0.0;
    SynthWorld w = SynthWorld::make(p);
    Array delta = w.oracle_edit(rand_latent(w, rng), Prompt{0, +1});
    for (double v : delta.data) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("normal equations residual is tiny") {
    SynthWorld w = SynthWorld::make(small_params());
    const Prompt prompt{1, -1};
    Array delta = w.oracle_edit(rand_latent(w, rng), prompt);
    const Array& m = w.generator_matrix();
    const std::size_t n = w.layers() * w.channels();
    // b = J^T tau, G = J^T J + ridge I; residual of G delta - b
    std::vector<double> tau(w.image_features());
    for (std::size_t r = 0; r < tau.size(); ++r)
      tau[r] = w.params().edit_strength * prompt.value * w.attribute(1).direction.data[r];
    double res2 = 0.0, b2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double gi = kOracleRidge * delta.data[i];
      for (std::size_t r = 0; r < tau.size(); ++r) {
        double ji = m.at(r, i);
        double jdelta = 0.0;
        for (std::size_t j = 0; j < n; ++j) jdelta += m.at(r, j) * delta.data[j];
        gi += ji * jdelta / 1.0;
      }
      double bi = 0.0;
      for (std::size_t r = 0; r < tau.size(); ++r) bi += m.at(r, i) * tau[r];
      res2 += (gi - bi) * (gi - bi);
      b2 += bi * bi;
    }
    CHECK(std::sqrt(res2) / std::sqrt(b2) < 1e-8);
  }
}

TEST_CASE("world serialization round trip") {
  SynthWorld w = SynthWorld::make(small_params());
  const std::string first = serialized(w);
  std::istringstream in(first);
  SynthWorld loaded = SynthWorld::load(in);
  CHECK(serialized(loaded) == first);
  CHECK(loaded.attribute(0).host_layer == w.attribute(0).host_layer);
  CHECK(loaded.params().leakage == w.params().leakage);

  SUBCASE("file round trip") {
    fs::path dir = fs::temp_directory_path() / "semmod_test_world";
    fs::create_directories(dir);
    const fs::path path = dir / "w.world";
    w.save_file(path);
    SynthWorld from_file = SynthWorld::load_file(path);
    CHECK(serialized(from_file) == first);
  }
  SUBCASE("corrupt header is a parse error") {
    std::istringstream bad("not-a-world\n");
    CHECK_THROWS_AS(SynthWorld::load(bad), ParseError);
  }
}
