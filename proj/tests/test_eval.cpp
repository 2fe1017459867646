#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfa/eval.hpp"
#include "mmfa/rng.hpp"
#include "oracles.hpp"

using namespace mmfa;

TEST_CASE("distance matrix basics") {
  SUBCASE("identical sets give a zero diagonal") {
    Rng rng(1);
    const Tensor x = oracles::random_matrix(5, 3, rng);
    const Tensor d = distance_matrix(x, x, false);
    for (std::size_t i = 0; i < 5; ++i) CHECK(d.at(i, i) == doctest::Approx(0.0));
  }
  SUBCASE("1-D example") {
    Tensor probe({1, 1}, {0.0});
    Tensor gallery({2, 1}, {3.0, 4.0});
    const Tensor d = distance_matrix(probe, gallery, false);
    CHECK(d.at(0, 0) == doctest::Approx(3.0));
    CHECK(d.at(0, 1) == doctest::Approx(4.0));
  }
  SUBCASE("normalized distance obeys d^2 = 2 - 2 cos") {
    Rng rng(2);
    const Tensor a = oracles::random_matrix(4, 6, rng);
    const Tensor b = oracles::random_matrix(3, 6, rng);
    const Tensor d = distance_matrix(a, b, true);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
          dot += a.at(i, k) * b.at(j, k);
          na += a.at(i, k) * a.at(i, k);
          nb += b.at(j, k) * b.at(j, k);
        }
        const double cos = dot / std::sqrt(na * nb);
        CHECK(d.at(i, j) * d.at(i, j) == doctest::Approx(2.0 - 2.0 * cos).epsilon(1e-10));
      }
    }
  }
  SUBCASE("zero vectors cannot be normalized") {
    Tensor probe({1, 2});
    Tensor gallery({1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(distance_matrix(probe, gallery, true), std::invalid_argument);
    CHECK_NOTHROW(distance_matrix(probe, gallery, false));
  }
}

TEST_CASE("CMC curve examples") {
  SUBCASE("single probe ranked third") {
    Tensor d({1, 4}, {0.3, 0.2, 0.4, 0.9});
    // correct entry is index 2 with distance 0.4 -> rank 3
    const std::vector<double> cmc = cmc_curve(d, {7}, {1, 2, 7, 3}, 5);
    CHECK(cmc[0] == doctest::Approx(0.0));
    CHECK(cmc[1] == doctest::Approx(0.0));
    CHECK(cmc[2] == doctest::Approx(1.0));
    CHECK(cmc[3] == doctest::Approx(1.0));
    CHECK(cmc[4] == doctest::Approx(1.0));
  }
  SUBCASE("two probes ranked first and third") {
    Tensor d({2, 3}, {0.1, 0.5, 0.9, 0.5, 0.4, 0.3});
    const std::vector<double> cmc = cmc_curve(d, {0, 0}, {0, 1, 2}, 3);
    CHECK(cmc[0] == doctest::Approx(0.5));
    CHECK(cmc[2] == doctest::Approx(1.0));
  }
  SUBCASE("probe identity missing from the gallery is an error") {
    Tensor d({1, 2}, {0.1, 0.2});
    CHECK_THROWS_AS(cmc_curve(d, {5}, {0, 1}, 2), std::invalid_argument);
  }
}

TEST_CASE("mean average precision examples") {
  SUBCASE("single relevant entry at rank 2") {
    Tensor d({1, 3}, {0.2, 0.1, 0.9});
    CHECK(mean_average_precision(d, {0}, {0, 1, 2}) == doctest::Approx(0.5));
  }
  SUBCASE("relevant entries at ranks 1 and 3") {
    Tensor d({1, 3}, {0.1, 0.2, 0.3});
    CHECK(mean_average_precision(d, {0}, {0, 1, 0}) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(mean_average_precision(d, {0}, {0, 1, 0}) == doctest::Approx(0.8333).epsilon(1e-4));
  }
  SUBCASE("all relevant entries first gives 1") {
    Tensor d({1, 4}, {0.1, 0.2, 0.8, 0.9});
    CHECK(mean_average_precision(d, {0}, {0, 0, 1, 2}) == doctest::Approx(1.0));
  }
  SUBCASE("probe with no relevant entries is an error") {
    Tensor d({1, 2}, {0.1, 0.2});
    CHECK_THROWS_AS(mean_average_precision(d, {5}, {0, 1}), std::invalid_argument);
  }
}

TEST_CASE("ranking metrics match brute-force oracles on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t np = 1 + rng.uniform_index(8);
    const std::size_t ng = 2 + rng.uniform_index(7);
    Tensor d({np, ng});
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform();
    std::vector<int> gallery_ids;
    for (std::size_t j = 0; j < ng; ++j) {
      gallery_ids.push_back(static_cast<int>(rng.uniform_index(4)));
    }
    std::vector<int> probe_ids;
    for (std::size_t i = 0; i < np; ++i) {
      probe_ids.push_back(gallery_ids[rng.uniform_index(ng)]);  // guaranteed present
    }
    const std::size_t max_rank = ng;
    const std::vector<double> cmc = cmc_curve(d, probe_ids, gallery_ids, max_rank);
    const std::vector<double> expected = oracles::cmc(d, probe_ids, gallery_ids, max_rank);
    REQUIRE(cmc.size() == expected.size());
    for (std::size_t r = 0; r < max_rank; ++r) CHECK(cmc[r] == expected[r]);  // exact
    for (std::size_t r = 1; r < max_rank; ++r) CHECK(cmc[r] >= cmc[r - 1]);
    CHECK(cmc[max_rank - 1] == doctest::Approx(1.0));

    const double map = mean_average_precision(d, probe_ids, gallery_ids);
    CHECK(map == doctest::Approx(oracles::mean_ap(d, probe_ids, gallery_ids)).epsilon(1e-14));
  }
}

TEST_CASE("rank metrics are invariant under increasing distance transforms") {
  Rng rng(11);
  const std::size_t np = 6, ng = 8;
  Tensor d({np, ng});
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform() * 2.0;
  std::vector<int> gallery_ids{0, 1, 2, 3, 0, 1, 2, 3};
  std::vector<int> probe_ids{0, 1, 2, 3, 0, 1};

  Tensor warped = d;
  for (std::size_t i = 0; i < d.size(); ++i) warped[i] = d[i] * d[i] + 0.5 * d[i] + 1.0;

  CHECK(cmc_curve(d, probe_ids, gallery_ids, ng) ==
        cmc_curve(warped, probe_ids, gallery_ids, ng));
  CHECK(mean_average_precision(d, probe_ids, gallery_ids) ==
        mean_average_precision(warped, probe_ids, gallery_ids));
}

namespace {

ModelState chance_model(const Dataset& data) {
  ModelConfig cfg;
  cfg.input_dim = data.sample_shape[0];
  cfg.block_widths = {12, 12};
  cfg.in_blocks = 1;
  cfg.hidden_dim = 8;
  cfg.identity_count = data.train_identity_count();
  cfg.domain_count = data.train_domain_count();
  cfg.seed = 1234;
  return init_model(cfg);
}

}  // namespace

TEST_CASE("run_protocol") {
  SynthConfig dcfg;
  dcfg.identities_per_domain = 60;
  dcfg.samples_per_identity = 4;
  dcfg.dim = 12;
  const Dataset data = generate_synthetic(dcfg);
  ModelState model = chance_model(data);

  SUBCASE("one trial reduces to a single split evaluation") {
    const EvalReport report = run_protocol(model, data, data.holdout_domain, 1, 10, 7);
    REQUIRE(report.trials.size() == 1);
    const EvalSplit split = make_eval_split(data, data.holdout_domain, Rng::derive_seed(7, 0));
    const Tensor ph = encode_dataset(model, data, split.probe);
    const Tensor gh = encode_dataset(model, data, split.gallery);
    std::vector<int> pids, gids;
    for (std::size_t r : split.probe) pids.push_back(data.identities[r]);
    for (std::size_t r : split.gallery) gids.push_back(data.identities[r]);
    const Tensor dist = distance_matrix(ph, gh, true);
    CHECK(report.trials[0].cmc == cmc_curve(dist, pids, gids, 10));
    CHECK(report.trials[0].map == doctest::Approx(mean_average_precision(dist, pids, gids)));
  }

  SUBCASE("identical base seeds give identical reports") {
    const EvalReport a = run_protocol(model, data, data.holdout_domain, 5, 10, 99);
    const EvalReport b = run_protocol(model, data, data.holdout_domain, 5, 10, 99);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.to_csv() == b.to_csv());
  }

  SUBCASE("features with no identity signal retrieve at chance") {
    // a random network preserves input geometry, so chance-level retrieval
    // needs inputs whose views carry no identity information at all
    SynthConfig noise = dcfg;
    noise.prototype_spread = 1e-3;
    noise.view_sigma = 1.0;
    noise.style_log_gain_range = 0.0;
    noise.style_offset_step = 0.0;
    noise.style_jitter = 0.0;
    noise.unseen_gain_boost = 0.0;
    noise.unseen_offset_boost = 0.0;
    noise.shot_sigma = 0.0;
    noise.unseen_shot_sigma = 0.0;
    noise.seed = 99;
    const Dataset shapeless = generate_synthetic(noise);
    ModelState rand_model = chance_model(shapeless);
    const EvalReport report =
        run_protocol(rand_model, shapeless, shapeless.holdout_domain, 10, 10, 5);
    const double chance = 1.0 / 60.0;
    CHECK(report.mean_rank1() <= 3.0 * chance);
    CHECK(report.mean_cmc[9] >= report.mean_rank1());  // monotone comes free
  }
}

TEST_CASE("domain probe accuracy") {
  Rng rng(31);
  SUBCASE("identical codes score near the majority prior") {
    Tensor codes({30, 4});
    std::vector<int> domains;
    for (int i = 0; i < 30; ++i) domains.push_back(i < 10 ? 0 : (i < 20 ? 1 : 2));
    const double acc = probe_domain_accuracy(codes, domains, 0.3, 3);
    CHECK(acc <= 0.34 + 0.2);  // chance-ish for balanced thirds
  }
  SUBCASE("separated clusters are nearly perfectly probed") {
    const std::size_t per = 20;
    Tensor codes({3 * per, 3});
    std::vector<int> domains;
    for (std::size_t d = 0; d < 3; ++d) {
      for (std::size_t i = 0; i < per; ++i) {
        domains.push_back(static_cast<int>(d));
        for (std::size_t k = 0; k < 3; ++k) {
          codes.at(d * per + i, k) = 0.2 * rng.normal() + (k == d ? 4.0 : 0.0);
        }
      }
    }
    CHECK(probe_domain_accuracy(codes, domains, 0.3, 5) >= 0.95);
  }
  SUBCASE("label shuffling sends accuracy to chance") {
    const std::size_t per = 30;
    Tensor codes({2 * per, 3});
    std::vector<int> domains;
    for (std::size_t d = 0; d < 2; ++d) {
      for (std::size_t i = 0; i < per; ++i) {
        domains.push_back(static_cast<int>(d));
        for (std::size_t k = 0; k < 3; ++k) {
          codes.at(d * per + i, k) = 0.3 * rng.normal() + (k == d ? 3.0 : 0.0);
        }
      }
    }
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      std::vector<int> shuffled = domains;
      Rng shuffle_rng(seed * 101);
      shuffle_rng.shuffle(shuffled);
      total += probe_domain_accuracy(codes, shuffled, 0.3, seed);
    }
    CHECK(std::abs(total / 5.0 - 0.5) <= 0.1);
  }
  SUBCASE("degenerate inputs are rejected") {
    Tensor codes({4, 2});
    CHECK_THROWS_AS(probe_domain_accuracy(codes, {0, 0, 0, 0}, 0.3, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(probe_domain_accuracy(codes, {0, 0, 1, 1}, 1.5, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("report serialization shapes") {
  SynthConfig dcfg;
  dcfg.identities_per_domain = 6;
  const Dataset data = generate_synthetic(dcfg);
  ModelState model = chance_model(data);
  EvalReport report = run_protocol(model, data, data.holdout_domain, 2, 5, 1);
  report.domain_probe_accuracy = 0.5;
  report.config_echo = "test";

  const std::string json = report.to_json();
  CHECK(json.find("\"mean_cmc\"") != std::string::npos);
  CHECK(json.find("\"domain_probe_accuracy\"") != std::string::npos);
  const std::string csv = report.to_csv();
  CHECK(csv.find("trial,rank1,rank2,rank3,rank4,rank5,mAP") == 0);
  CHECK(csv.find("mean,") != std::string::npos);
}
