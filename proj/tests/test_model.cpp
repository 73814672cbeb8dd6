#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "ridg/errors.hpp"
#include "ridg/model.hpp"
#include "ridg/optim.hpp"

using namespace ridg;

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ModelConfig c;
  c.input_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.input_dim = 3;
  c.class_count = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.class_count = 2;
  c.hidden = {4, 0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.hidden = {};
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("init is seeded and bounded by fan-in") {
  ModelConfig c;
  c.input_dim = 5;
  c.hidden = {7};
  c.feature_dim = 3;
  c.class_count = 4;
  c.seed = 42;
  auto a = init_model<double>(c);
  auto b = init_model<double>(c);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == 5);  // 2 weights, 2 biases, head
  CHECK(pa.back().shape() == Shape{3, 4});
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(oracle::max_abs_diff(pa[i].data(), pb[i].data()) == 0.0);
  }
  const double bound = 1.0 / std::sqrt(5.0);
  for (double v : a.features.layers()[0].weight.data()) CHECK(std::abs(v) <= bound);

  c.init = InitScheme::zeros;
  auto z = init_model<double>(c);
  for (const auto& p : z.parameters())
    for (double v : p.data()) CHECK(v == 0.0);
}

TEST_CASE("forward matches a hand-rolled MLP") {
  ModelConfig c;
  c.input_dim = 3;
  c.hidden = {4};
  c.feature_dim = 2;
  c.class_count = 3;
  c.seed = 1;
  auto m = init_model<double>(c);
  std::mt19937_64 rng(0);
  const auto x = oracle::random_vector(rng, 2 * 3);
  Tape<double> tape;
  auto z = forward_features(m, tape, Tensor<double>::constant({2, 3}, x));
  auto o = forward_logits(m.head, tape, z);

  const auto& l0 = m.features.layers()[0];
  const auto& l1 = m.features.layers()[1];
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> h(4), zz(2);
    for (std::size_t j = 0; j < 4; ++j) {
      double s = l0.bias.data()[j];
      for (std::size_t i = 0; i < 3; ++i) s += x[n * 3 + i] * l0.weight.data()[i * 4 + j];
      h[j] = std::max(0.0, s);
    }
    for (std::size_t j = 0; j < 2; ++j) {
      double s = l1.bias.data()[j];
      for (std::size_t i = 0; i < 4; ++i) s += h[i] * l1.weight.data()[i * 2 + j];
      zz[j] = s;
      CHECK(std::abs(z.data()[n * 2 + j] - s) < 1e-14);
    }
    const auto logits = oracle::logits(zz, {m.head.weight().data().begin(),
                                            m.head.weight().data().end()},
                                       1, 2, 3);
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(o.data()[n * 3 + k] - logits[k]) < 1e-14);
  }
}

TEST_CASE("clone is deep") {
  ModelConfig c;
  c.input_dim = 2;
  c.hidden = {3};
  auto m = init_model<double>(c);
  auto copy = m.clone();
  m.head.weight().node()->data[0] += 1.0;
  CHECK(copy.head.weight().data()[0] != m.head.weight().data()[0]);
}

TEST_CASE("checkpoint round trip") {
  ModelConfig c;
  c.input_dim = 3;
  c.hidden = {5, 4};
  c.feature_dim = 2;
  c.class_count = 3;
  c.seed = 9;
  auto m = init_model<double>(c);
  const auto path = std::filesystem::temp_directory_path() / "ridg_ckpt_test.json";
  save_checkpoint(m, path);
  auto back = load_checkpoint<double>(path);
  auto pa = m.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].shape() == pb[i].shape());
    CHECK(oracle::max_abs_diff(pa[i].data(), pb[i].data()) == 0.0);
  }
  CHECK(back.config.hidden == c.hidden);
  auto as_float = load_checkpoint<float>(path);
  CHECK(as_float.head.weight().data()[0] ==
        static_cast<float>(m.head.weight().data()[0]));
  {
    std::ofstream bad(path);
    bad << R"({"format": "something-else"})";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), SchemaError);
  std::filesystem::remove(path);
}

TEST_CASE("adam step against a scalar recurrence") {
  auto p = Tensor<double>::parameter({2}, {1.0, -1.0});
  std::vector<Tensor<double>> params{p};
  auto state = AdamState<double>::zeros_like(params);
  double m1 = 0, v1 = 0, x = 1.0;
  for (int t = 1; t <= 5; ++t) {
    p.zero_grad();
    Tape<double> tape;
    tape.backward(tape.sum(tape.square(p)));
    const double g = 2 * x;
    adam_step<double>(params, state, 0.1, 0.9, 0.999, 1e-8);
    m1 = 0.9 * m1 + 0.1 * g;
    v1 = 0.999 * v1 + 0.001 * g * g;
    const double mh = m1 / (1 - std::pow(0.9, t));
    const double vh = v1 / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(p.data()[0] - x) < 1e-12);
  }
  CHECK(state.step == 5);

  p.node()->grad_buffer()[0] = std::nan("");
  CHECK_THROWS_AS(adam_step<double>(params, state, 0.1, 0.9, 0.999, 1e-8),
                  DivergenceError);
}

}  // TEST_SUITE
