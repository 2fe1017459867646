#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfa/gradcheck.hpp"
#include "mmfa/losses.hpp"
#include "mmfa/rng.hpp"
#include "oracles.hpp"

using namespace mmfa;

TEST_CASE("identity loss examples") {
  SUBCASE("uniform logits over 4 classes give ln 4") {
    Tensor logits({2, 4});
    CHECK(identity_loss(logits, {0, 2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(identity_loss(logits, {1, 3}) == doctest::Approx(1.3863).epsilon(1e-4));
  }
  SUBCASE("confident correct prediction drives the loss to zero") {
    Tensor logits({1, 3}, {50.0, 0.0, 0.0});
    CHECK(identity_loss(logits, {0}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  }
  SUBCASE("true-class probabilities 0.5 and 0.25") {
    // row 0: p(true) = 0.5; row 1: logits ln1, ln3 -> p(class 0) = 0.25
    Tensor logits({2, 2}, {0.0, 0.0, std::log(1.0), std::log(3.0)});
    const double expected = (std::log(2.0) + std::log(4.0)) / 2.0;
    CHECK(identity_loss(logits, {0, 0}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(identity_loss(logits, {0, 0}) == doctest::Approx(1.0397).epsilon(1e-4));
  }
  SUBCASE("label out of range and non-finite logits are rejected") {
    Tensor logits({1, 3});
    CHECK_THROWS_AS(identity_loss(logits, {3}), std::invalid_argument);
    CHECK_THROWS_AS(identity_loss(logits, {-1}), std::invalid_argument);
    Tensor bad({1, 2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(identity_loss(bad, {0}), std::runtime_error);
    Tensor one_class({1, 1}, {0.0});
    CHECK_THROWS_AS(identity_loss(one_class, {0}), std::invalid_argument);
  }
}

TEST_CASE("identity loss properties") {
  Rng rng(5);
  SUBCASE("non-negative, ln C at uniform, decreasing in the true logit") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t classes = 2 + rng.uniform_index(5);
      Tensor logits = oracles::random_matrix(3, classes, rng);
      std::vector<int> labels;
      for (int i = 0; i < 3; ++i) labels.push_back(static_cast<int>(rng.uniform_index(classes)));
      const double base = identity_loss(logits, labels);
      CHECK(base >= 0.0);
      Tensor boosted = logits;
      boosted.at(0, static_cast<std::size_t>(labels[0])) += 0.5;
      CHECK(identity_loss(boosted, labels) < base);
    }
  }
}

TEST_CASE("triplet batch-hard examples") {
  SUBCASE("well-separated identities give zero loss") {
    Tensor codes({4, 1}, {0.0, 1.0, 10.0, 10.5});
    CHECK(triplet_loss_batch_hard(codes, {0, 0, 1, 1}, 0.3) == doctest::Approx(0.0));
  }
  SUBCASE("worked mixed batch") {
    Tensor codes({3, 1}, {0.0, 1.0, 1.2});
    // anchor 0: max(0, 1 - 1.2 + 0.3) = 0.1; anchor 1: max(0, 1 - 0.2 + 0.3) = 1.1;
    // identity B's sample has no positive -> skipped. mean = 0.6
    const double loss = triplet_loss_batch_hard(codes, {0, 0, 1}, 0.3);
    CHECK(loss == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(loss == doctest::Approx(oracles::triplet_batch_hard(codes, {0, 0, 1}, 0.3)));
  }
  SUBCASE("all-identical codes return exactly the margin") {
    Tensor codes({4, 2});
    CHECK(triplet_loss_batch_hard(codes, {0, 0, 1, 1}, 0.3) == doctest::Approx(0.3));
  }
  SUBCASE("no valid anchors is an error") {
    Tensor codes({2, 1}, {0.0, 1.0});
    CHECK_THROWS_AS(triplet_loss_batch_hard(codes, {0, 1}, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(triplet_loss_batch_hard(codes, {0, 0}, 0.3), std::invalid_argument);
  }
}

TEST_CASE("triplet batch-hard equals exhaustive search on random batches") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.uniform_index(9);  // up to 12
    const std::size_t d = 1 + rng.uniform_index(4);
    Tensor codes = oracles::random_matrix(n, d, rng);
    std::vector<int> ids;
    bool has_pair = false, has_two_ids = false;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng.uniform_index(n / 2 + 1)));
    for (std::size_t i = 0; i < n && !has_pair; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (ids[i] == ids[j]) has_pair = true;
        if (ids[i] != ids[j]) has_two_ids = true;
      }
    }
    for (std::size_t j = 1; j < n && !has_two_ids; ++j) has_two_ids = ids[j] != ids[0];
    if (!has_pair || !has_two_ids) {
      ids[0] = ids[1] = 0;
      ids[n - 1] = 1;
    }
    const double expected = oracles::triplet_batch_hard(codes, ids, 0.3);
    const double actual = triplet_loss_batch_hard(codes, ids, 0.3);
    CHECK(actual == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("triplet loss is invariant under rotation and translation") {
  Rng rng(99);
  const std::size_t n = 8, d = 3;
  Tensor codes = oracles::random_matrix(n, d, rng);
  const std::vector<int> ids{0, 0, 1, 1, 2, 2, 3, 3};
  const double base = triplet_loss_batch_hard(codes, ids, 0.3);

  // Gram-Schmidt on a random matrix gives an orthogonal Q.
  double q[3][3];
  for (auto& row : q) {
    for (double& v : row) v = rng.normal();
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += q[i][k] * q[j][k];
      for (int k = 0; k < 3; ++k) q[i][k] -= dot * q[j][k];
    }
    double norm = 0.0;
    for (int k = 0; k < 3; ++k) norm += q[i][k] * q[i][k];
    norm = std::sqrt(norm);
    for (int k = 0; k < 3; ++k) q[i][k] /= norm;
  }
  const double shift[3] = {5.0, -2.0, 0.7};
  Tensor moved({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (int i = 0; i < 3; ++i) {
      double acc = shift[i];
      for (int k = 0; k < 3; ++k) acc += q[i][k] * codes.at(r, static_cast<std::size_t>(k));
      moved.at(r, static_cast<std::size_t>(i)) = acc;
    }
  }
  CHECK(triplet_loss_batch_hard(moved, ids, 0.3) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("reconstruction loss examples") {
  SUBCASE("perfect reconstruction is zero") {
    Rng rng(3);
    Tensor x = oracles::random_matrix(4, 5, rng);
    CHECK(reconstruction_loss(x, x) == doctest::Approx(0.0));
  }
  SUBCASE("worked value 1^2 + 2^2 = 5") {
    Tensor x({1, 2}, {1.0, 2.0});
    Tensor rec({1, 2}, {0.0, 0.0});
    CHECK(reconstruction_loss(x, rec) == doctest::Approx(5.0));
  }
  SUBCASE("scaling the residual by c scales the loss by c^2") {
    Rng rng(4);
    Tensor x = oracles::random_matrix(3, 4, rng);
    Tensor rec = oracles::random_matrix(3, 4, rng);
    const double base = reconstruction_loss(x, rec);
    Tensor rec_scaled = x;
    for (std::size_t i = 0; i < x.size(); ++i) rec_scaled[i] = x[i] - 3.0 * (x[i] - rec[i]);
    CHECK(reconstruction_loss(x, rec_scaled) == doctest::Approx(9.0 * base).epsilon(1e-12));
  }
  SUBCASE("shape mismatch is rejected") {
    Tensor x({2, 3});
    Tensor rec({3, 2});
    CHECK_THROWS_AS(reconstruction_loss(x, rec), std::invalid_argument);
  }
}

TEST_CASE("domain discrimination and adversarial losses") {
  SUBCASE("uniform prediction over 3 domains gives ln 3") {
    Tensor logits({2, 3});
    CHECK(domain_discrimination_loss(logits, {0, 2}) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(adversarial_loss(logits, {0, 2}) == doctest::Approx(-1.0986).epsilon(1e-4));
  }
  SUBCASE("perfect prediction approaches zero from above") {
    Tensor logits({1, 2}, {60.0, 0.0});
    const double loss = domain_discrimination_loss(logits, {0});
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-12);
    CHECK(adversarial_loss(logits, {0}) <= 0.0);
  }
  SUBCASE("true-domain probabilities 0.9 and 0.1") {
    const double l0 = std::log(9.0);  // logits giving p = 0.9 for class 0
    Tensor logits({2, 2}, {l0, 0.0, std::log(1.0 / 9.0), 0.0});
    const double expected = (-std::log(0.9) - std::log(0.1)) / 2.0;
    CHECK(domain_discrimination_loss(logits, {0, 0}) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(domain_discrimination_loss(logits, {0, 0}) == doctest::Approx(1.2040).epsilon(1e-4));
  }
  SUBCASE("adversarial is bit-exactly the negation") {
    Rng rng(8);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t k = 2 + rng.uniform_index(4);
      Tensor logits = oracles::random_matrix(5, k, rng);
      std::vector<int> labels;
      for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.uniform_index(k)));
      const double d = domain_discrimination_loss(logits, labels);
      const double a = adversarial_loss(logits, labels);
      CHECK(a == -d);  // exact
      CHECK(a + d == 0.0);
    }
  }
}

TEST_CASE("combined feature loss") {
  const LossWeights defaults;
  SUBCASE("all zeros give zero") {
    CHECK(combined_feature_loss(0, 0, 0, 0, 0, defaults) == doctest::Approx(0.0));
  }
  SUBCASE("unit components with default weights give 12.7") {
    CHECK(combined_feature_loss(1, 1, 1, 1, 1, defaults) == doctest::Approx(12.7));
  }
  SUBCASE("zeroing the extra weights reduces to identity + triplet") {
    LossWeights w;
    w.reconstruction = 0.0;
    w.mmd = 0.0;
    w.adversarial = 0.0;
    CHECK(combined_feature_loss(0.7, 0.4, 5.0, 9.0, -3.0, w) ==
          doctest::Approx(0.7 + 0.4));
  }
  SUBCASE("non-finite components are rejected") {
    CHECK_THROWS_AS(
        combined_feature_loss(std::numeric_limits<double>::infinity(), 0, 0, 0, 0, defaults),
        std::invalid_argument);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(55);
  GradCheckOptions options;

  SUBCASE("identity / domain nll") {
    ParameterSet params;
    params.add("logits", oracles::random_matrix(6, 4, rng));
    const std::vector<int> labels{0, 1, 2, 3, 1, 2};
    auto value = [&]() { return identity_loss(params.param("logits"), labels); };
    auto grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      g.backward(nll_loss(g, b.at("logits"), labels));
      b.pull_gradients();
    };
    CHECK(finite_difference_check({{"p", &params}}, value, grads, options).passed);
  }

  SUBCASE("triplet") {
    ParameterSet params;
    params.add("codes", oracles::random_matrix(8, 3, rng));
    const std::vector<int> ids{0, 0, 1, 1, 2, 2, 3, 3};
    auto value = [&]() { return triplet_loss_batch_hard(params.param("codes"), ids, 0.3); };
    auto grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      g.backward(triplet_batch_hard(g, b.at("codes"), ids, 0.3));
      b.pull_gradients();
    };
    CHECK(finite_difference_check({{"p", &params}}, value, grads, options).passed);
  }

  SUBCASE("reconstruction") {
    ParameterSet params;
    params.add("x", oracles::random_matrix(4, 5, rng));
    params.add("rec", oracles::random_matrix(4, 5, rng));
    auto value = [&]() { return reconstruction_loss(params.param("x"), params.param("rec")); };
    auto grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      g.backward(reconstruction(g, b.at("x"), b.at("rec")));
      b.pull_gradients();
    };
    CHECK(finite_difference_check({{"p", &params}}, value, grads, options).passed);
  }

  SUBCASE("adversarial (negated nll)") {
    ParameterSet params;
    params.add("logits", oracles::random_matrix(6, 3, rng));
    const std::vector<int> domains{0, 1, 2, 0, 1, 2};
    auto value = [&]() { return adversarial_loss(params.param("logits"), domains); };
    auto grads = [&]() {
      Graph g;
      BoundParams b(g, params, true);
      g.backward(g.negate(nll_loss(g, b.at("logits"), domains)));
      b.pull_gradients();
    };
    CHECK(finite_difference_check({{"p", &params}}, value, grads, options).passed);
  }
}
