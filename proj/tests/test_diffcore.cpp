#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mmfa/gradcheck.hpp"
#include "mmfa/graph.hpp"
#include "mmfa/layers.hpp"
#include "mmfa/rng.hpp"
#include "oracles.hpp"

using namespace mmfa;

namespace {

using BuildLoss = std::function<Value(Graph&, BoundParams&)>;

CheckReport fd_check(ParameterSet& params, const BuildLoss& build,
                     GradCheckOptions options = {}) {
  auto value = [&]() {
    Graph g;
    BoundParams bound(g, params, false);
    return g.value(build(g, bound)).scalar_value();
  };
  auto grads = [&]() {
    Graph g;
    BoundParams bound(g, params, true);
    Value loss = build(g, bound);
    g.backward(loss);
    bound.pull_gradients();
  };
  return finite_difference_check({{"p", &params}}, value, grads, options);
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.shape_string() == "[2, 3]");
  CHECK_THROWS_AS(t.scalar_value(), std::invalid_argument);
  Tensor bad({2}, {1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(bad.require_finite("test"), std::runtime_error);
  Graph g;
  CHECK_THROWS_AS(g.leaf(bad), std::runtime_error);
}

TEST_CASE("empty layer list is the identity") {
  Rng rng(3);
  ParameterSet params;
  std::vector<LayerSpec> specs;
  CHECK(init_layer_params(specs, {4}, params, rng) == std::vector<std::size_t>{4});
  const Tensor x = oracles::random_matrix(3, 4, rng);
  const Tensor y = forward_layers_eval(specs, params, x, {});
  CHECK(y.values() == x.values());
}

TEST_CASE("dense layer with identity weights passes input through") {
  ParameterSet params;
  Tensor w({3, 3});
  for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  params.add("L0.weight", w);
  params.add("L0.bias", Tensor({3}));
  std::vector<LayerSpec> specs{LayerSpec::dense(3, 3)};
  Rng rng(1);
  const Tensor x = oracles::random_matrix(2, 3, rng);
  const Tensor y = forward_layers_eval(specs, params, x, {});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("two dense layers match the matrix product oracle") {
  Rng rng(7);
  ParameterSet params;
  std::vector<LayerSpec> specs{LayerSpec::dense(4, 5), LayerSpec::dense(5, 3)};
  init_layer_params(specs, {4}, params, rng);
  const Tensor x = oracles::random_matrix(6, 4, rng);
  const Tensor y = forward_layers_eval(specs, params, x, {});

  const Tensor mid = oracles::matmul_bias(x, params.param("L0.weight"), params.param("L0.bias"));
  const Tensor expected =
      oracles::matmul_bias(mid, params.param("L1.weight"), params.param("L1.bias"));
  REQUIRE(y.same_shape(expected));
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("gradient of 0.5*||x||^2 through a passthrough graph is x") {
  Graph g;
  Tensor x({2, 3}, {1.0, -2.0, 0.5, 3.0, -1.5, 2.5});
  Value xv = g.leaf(x, true);
  Value loss = g.scale(g.l2_squared(xv), 0.5);
  g.backward(loss);
  const Tensor grad = g.grad(xv);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(grad[i] == doctest::Approx(x[i]));
}

TEST_CASE("bias gradient of summed dense output is all ones") {
  Graph g;
  Tensor w({3, 3});
  for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  Value wv = g.leaf(w, true);
  Value bv = g.leaf(Tensor({3}), true);
  Rng rng(2);
  Value xv = g.leaf(oracles::random_matrix(4, 3, rng), false);
  g.backward(g.sum_all(g.dense(xv, wv, bv)));
  const Tensor grad_b = g.grad(bv);
  for (std::size_t i = 0; i < 3; ++i) CHECK(grad_b[i] == doctest::Approx(4.0));
}

TEST_CASE("finite differences validate every operator") {
  Rng rng(11);

  SUBCASE("dense + relu stack") {
    ParameterSet params;
    std::vector<LayerSpec> specs{LayerSpec::dense(4, 6), LayerSpec::relu(),
                                 LayerSpec::dense(6, 3)};
    init_layer_params(specs, {4}, params, rng);
    params.add("input", oracles::random_matrix(5, 4, rng));
    CheckReport report = fd_check(params, [&](Graph& g, BoundParams& b) {
      ForwardOptions fwd;
      Value out = forward_layers(g, specs, b, b.at("input"), fwd);
      return g.l2_squared(out);
    });
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("instance norm, vector and spatial") {
    ParameterSet params;
    params.add("x2", oracles::random_matrix(3, 5, rng));
    Tensor x4({2, 3, 4});  // [n, c, spatial]
    for (std::size_t i = 0; i < x4.size(); ++i) x4[i] = rng.normal();
    params.add("x4", x4);
    CheckReport report = fd_check(params, [&](Graph& g, BoundParams& b) {
      Value a = g.l2_squared(g.instance_norm(b.at("x2"), 1e-5));
      Value c = g.l2_squared(g.instance_norm(b.at("x4"), 1e-5));
      return g.add(a, c);
    });
    CHECK(report.passed);
  }

  SUBCASE("batch norm train mode with affine") {
    ParameterSet params;
    params.add("x", oracles::random_matrix(6, 4, rng));
    Tensor gamma({4});
    for (std::size_t i = 0; i < 4; ++i) gamma[i] = 0.5 + rng.uniform();
    params.add("gamma", gamma);
    params.add("beta", oracles::random_matrix(1, 4, rng));
    // beta registered as [1,4]; reshape to [4]
    params.param("beta") = Tensor({4}, params.param("beta").values());
    params.grad("beta") = Tensor({4});
    CheckReport report = fd_check(params, [&](Graph& g, BoundParams& b) {
      Value normed = g.batch_norm_train(b.at("x"), 1e-5, nullptr, 0.1, false);
      return g.l2_squared(g.relu(g.channel_affine(normed, b.at("gamma"), b.at("beta"))));
    });
    CHECK(report.passed);
  }

  SUBCASE("conv2d and global average pool") {
    ParameterSet params;
    std::vector<LayerSpec> specs{LayerSpec::conv2d(2, 3, 3), LayerSpec::relu(),
                                 LayerSpec::global_avg_pool()};
    init_layer_params(specs, {2, 6, 6}, params, rng);
    Tensor x({2, 2, 6, 6});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    params.add("input", x);
    CheckReport report = fd_check(params, [&](Graph& g, BoundParams& b) {
      ForwardOptions fwd;
      Value out = forward_layers(g, specs, b, b.at("input"), fwd);
      return g.l2_squared(out);
    });
    CHECK(report.passed);
  }

  SUBCASE("batch norm eval mode propagates through stored stats") {
    ParameterSet params;
    params.add("x", oracles::random_matrix(4, 3, rng));
    RunningStats stats;
    stats.mean = Tensor({3}, {0.3, -0.2, 0.1});
    stats.var = Tensor({3}, {1.5, 0.7, 2.0});
    stats.updates = 1;
    CheckReport report = fd_check(params, [&](Graph& g, BoundParams& b) {
      return g.l2_squared(g.batch_norm_eval(b.at("x"), 1e-5, stats));
    });
    CHECK(report.passed);
  }
}

TEST_CASE("instance normalization examples") {
  SUBCASE("two spatial values map to -1, 1") {
    // single sample, one channel, spatial [2, 4]
    Tensor x({1, 1, 2}, {2.0, 4.0});
    const Tensor y = instance_normalize(x, 1e-12);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("normalized input is a fixed point") {
    Rng rng(5);
    Tensor x = oracles::random_matrix(4, 8, rng);
    const Tensor once = instance_normalize(x, 1e-9);
    const Tensor twice = instance_normalize(once, 1e-9);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-6));
    }
  }
  SUBCASE("[1,2,3] with the direct arithmetic oracle") {
    Tensor x({1, 3}, {1.0, 2.0, 3.0});
    const Tensor y = instance_normalize(x, 1e-5);
    // population variance 2/3
    const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expected).epsilon(1e-3));
    CHECK(y[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-3));
    CHECK(y[2] == doctest::Approx(1.2247).epsilon(1e-3));
  }
}

TEST_CASE("instance normalization output statistics invariant") {
  Rng rng(17);
  Tensor x({3, 2, 10});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * rng.normal() + 0.5;
  const Tensor y = instance_normalize(x, 1e-12);
  for (std::size_t g = 0; g < 6; ++g) {
    double mean = 0.0, var = 0.0;
    for (std::size_t s = 0; s < 10; ++s) mean += y[g * 10 + s];
    mean /= 10.0;
    for (std::size_t s = 0; s < 10; ++s) {
      var += (y[g * 10 + s] - mean) * (y[g * 10 + s] - mean);
    }
    var /= 10.0;
    CHECK(std::abs(mean) < 1e-8);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("instance normalization cancels per-channel affine restyling") {
  Rng rng(23);
  Tensor x({2, 3, 7});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Tensor styled = x;
  const double gains[] = {0.5, 2.0, 3.5};
  const double biases[] = {1.0, -2.0, 0.25};
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t s = 0; s < 7; ++s) {
        styled[(n * 3 + c) * 7 + s] = gains[c] * x[(n * 3 + c) * 7 + s] + biases[c];
      }
    }
  }
  const Tensor a = instance_normalize(x, 1e-12);
  const Tensor b = instance_normalize(styled, 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-8);
}

TEST_CASE("batch normalization examples") {
  SUBCASE("fixed per-channel mean and variance are removed") {
    // one channel: values with mean 5, population var 4
    Tensor x({4, 1}, {3.0, 5.0, 5.0, 7.0});
    ParameterSet params;
    const Tensor y = batch_normalize(x, params, NormMode::kTrain, 1e-12);
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += y[i];
    CHECK(std::abs(mean / 4.0) < 1e-9);
    double var = 0.0;
    for (std::size_t i = 0; i < 4; ++i) var += y[i] * y[i];
    CHECK(var / 4.0 == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("gamma and beta shift already-normalized input") {
    Tensor x({2, 1}, {-1.0, 1.0});
    ParameterSet params;
    params.add("gamma", Tensor({1}, {2.0}));
    params.add("beta", Tensor({1}, {3.0}));
    params.stats("stats");
    const Tensor y = batch_normalize(x, params, NormMode::kTrain, 1e-12);
    CHECK((y[0] + y[1]) / 2.0 == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::abs(y[1] - y[0]) / 2.0 == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("momentum 0 makes eval match train on the defining batch") {
    Rng rng(9);
    Tensor x = oracles::random_matrix(6, 3, rng);
    ParameterSet params;
    const Tensor trained = batch_normalize(x, params, NormMode::kTrain, 1e-5, 0.0);
    const Tensor evaled = batch_normalize(x, params, NormMode::kEval, 1e-5, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(trained[i] - evaled[i]) < 1e-10);
    }
  }
  SUBCASE("train mode rejects batch size 1") {
    Tensor x({1, 3}, {1.0, 2.0, 3.0});
    ParameterSet params;
    CHECK_THROWS_AS(batch_normalize(x, params, NormMode::kTrain), std::invalid_argument);
  }
  SUBCASE("eval mode rejects uninitialized running stats") {
    Tensor x({2, 3});
    ParameterSet params;
    CHECK_THROWS_AS(batch_normalize(x, params, NormMode::kEval), std::invalid_argument);
  }
}

TEST_CASE("forward is pure: bit-identical outputs on identical inputs") {
  Rng rng(31);
  ParameterSet params;
  std::vector<LayerSpec> specs{LayerSpec::instance_norm(), LayerSpec::dense(6, 8),
                               LayerSpec::relu(), LayerSpec::batch_norm()};
  init_layer_params(specs, {6}, params, rng);
  const Tensor x = oracles::random_matrix(4, 6, rng);
  const Tensor y1 = forward_layers_eval(specs, params, x, {});
  const Tensor y2 = forward_layers_eval(specs, params, x, {});
  CHECK(y1.values() == y2.values());
}

TEST_CASE("32-bit fast path agrees with the 64-bit reference within 1e-3") {
  Rng rng(41);
  ParameterSet params;
  std::vector<LayerSpec> specs{LayerSpec::instance_norm(), LayerSpec::dense(10, 16),
                               LayerSpec::relu(), LayerSpec::batch_norm(),
                               LayerSpec::dense(16, 8), LayerSpec::relu()};
  init_layer_params(specs, {10}, params, rng);
  const Tensor x = oracles::random_matrix(5, 10, rng);
  const Tensor y64 = forward_layers_eval(specs, params, x, {});
  const Tensor y32 = forward_layers_f32(specs, params, x);
  REQUIRE(y64.same_shape(y32));
  for (std::size_t i = 0; i < y64.size(); ++i) {
    CHECK(std::abs(y64[i] - y32[i]) < 1e-3 * std::max(1.0, std::abs(y64[i])));
  }
}

TEST_CASE("finite_difference_check behavior") {
  SUBCASE("quadratic loss on a linear model is near exact") {
    Rng rng(13);
    ParameterSet params;
    std::vector<LayerSpec> specs{LayerSpec::dense(3, 2)};
    init_layer_params(specs, {3}, params, rng);
    const Tensor x = oracles::random_matrix(4, 3, rng);
    auto value = [&]() {
      Graph g;
      BoundParams b(g, params, false);
      return g.value(g.l2_squared(forward_layers(g, specs, b, g.leaf(x), {}))).scalar_value();
    };
    auto grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      Value loss = g.l2_squared(forward_layers(g, specs, b, g.leaf(x), {}));
      g.backward(loss);
      b.pull_gradients();
    };
    GradCheckOptions options;
    options.tolerance = 1e-8;
    CheckReport report = finite_difference_check({{"lin", &params}}, value, grads, options);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-8);
  }

  SUBCASE("a corrupted gradient coordinate is caught and named") {
    Rng rng(13);
    ParameterSet params;
    std::vector<LayerSpec> specs{LayerSpec::dense(3, 2)};
    init_layer_params(specs, {3}, params, rng);
    const Tensor x = oracles::random_matrix(4, 3, rng);
    auto value = [&]() {
      Graph g;
      BoundParams b(g, params, false);
      return g.value(g.l2_squared(forward_layers(g, specs, b, g.leaf(x), {}))).scalar_value();
    };
    auto bad_grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      Value loss = g.l2_squared(forward_layers(g, specs, b, g.leaf(x), {}));
      g.backward(loss);
      b.pull_gradients();
      params.grad("L0.weight")[2] *= 2.0;  // corrupt one coordinate
    };
    CheckReport report = finite_difference_check({{"lin", &params}}, value, bad_grads, {});
    CHECK_FALSE(report.passed);
    CHECK(report.worst_block == "lin.L0.weight");
    CHECK(report.worst_coordinate == 2);
  }

  SUBCASE("non-finite loss at the base point is an error") {
    ParameterSet params;
    params.add("w", Tensor({2}, {1.0, 2.0}));
    auto value = []() { return std::numeric_limits<double>::infinity(); };
    auto grads = []() {};
    CHECK_THROWS_AS(finite_difference_check({{"p", &params}}, value, grads, {}),
                    std::runtime_error);
  }
}

TEST_CASE("shape mismatches are reported with the layer index") {
  Rng rng(1);
  ParameterSet params;
  std::vector<LayerSpec> specs{LayerSpec::dense(4, 5), LayerSpec::dense(6, 2)};
  CHECK_THROWS_WITH_AS(init_layer_params(specs, {4}, params, rng),
                       doctest::Contains("layer 1"), std::invalid_argument);

  ParameterSet ok;
  std::vector<LayerSpec> good{LayerSpec::dense(4, 5)};
  init_layer_params(good, {4}, ok, rng);
  Graph g;
  BoundParams bound(g, ok, false);
  Value wrong = g.leaf(oracles::random_matrix(2, 3, rng));
  CHECK_THROWS_WITH_AS(forward_layers(g, good, bound, wrong, {}),
                       doctest::Contains("layer 0"), std::invalid_argument);
}

TEST_CASE("conv scale limits are enforced") {
  CHECK_THROWS_AS(LayerSpec::conv2d(2, 3, 7).validate(), std::invalid_argument);
  CHECK_THROWS_AS(LayerSpec::conv2d(64, 3, 3).validate(), std::invalid_argument);
  CHECK_NOTHROW(LayerSpec::conv2d(3, 16, 5).validate());
}
