#include <benchmark/benchmark.h>

#include "mmfa/eval.hpp"
#include "mmfa/mmd.hpp"
#include "mmfa/train.hpp"

using namespace mmfa;

namespace {

Dataset bench_dataset() {
  SynthConfig cfg;
  cfg.identities_per_domain = 20;
  return generate_synthetic(cfg);
}

ModelState bench_model(const Dataset& data) {
  ModelConfig cfg;
  cfg.identity_count = data.train_identity_count();
  cfg.domain_count = data.train_domain_count();
  return init_model(cfg);
}

void BM_ExtractFeatures(benchmark::State& state) {
  Dataset data = bench_dataset();
  ModelState model = bench_model(data);
  std::vector<std::size_t> rows(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Tensor batch = data.gather(rows);
  for (auto _ : state) {
    Tensor x = extract_features(model, batch);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_ExtractFeatures)->Arg(8)->Arg(32)->Arg(128);

void BM_ExtractFeaturesF32(benchmark::State& state) {
  Dataset data = bench_dataset();
  ModelState model = bench_model(data);
  std::vector<std::size_t> rows(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Tensor batch = data.gather(rows);
  for (auto _ : state) {
    Tensor x = extract_features_f32(model, batch);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_ExtractFeaturesF32)->Arg(8)->Arg(32)->Arg(128);

void BM_FeatureStep(benchmark::State& state) {
  Dataset data = bench_dataset();
  ModelState model = bench_model(data);
  AdamOptimizer optimizer(
      {&model.extractor, &model.encoder, &model.decoder, &model.identity_head});
  TrainConfig cfg;
  Rng rng(1);
  const LabeledBatch batch = sample_pk_batch(data, cfg.batch_p, cfg.batch_k, rng);
  for (auto _ : state) {
    StepLosses losses = feature_step(model, batch, optimizer, 3.5e-4, cfg);
    benchmark::DoNotOptimize(losses.total);
  }
}
BENCHMARK(BM_FeatureStep);

void BM_DiscriminatorStep(benchmark::State& state) {
  Dataset data = bench_dataset();
  ModelState model = bench_model(data);
  AdamOptimizer optimizer({&model.discriminator});
  TrainConfig cfg;
  Rng rng(1);
  const LabeledBatch batch = sample_pk_batch(data, cfg.batch_p, cfg.batch_k, rng);
  for (auto _ : state) {
    double loss = discriminator_step(model, batch, optimizer, 3.5e-4);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_DiscriminatorStep);

void BM_MmdSquared(benchmark::State& state) {
  Rng rng(7);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor a({n, 16}), b({n, 16});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  KernelSpec kernel;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmd_squared(a, b, kernel));
  }
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_MmdSquared)->Arg(16)->Arg(32)->Arg(64)->Arg(128)->Complexity();

void BM_TripletBatchHard(benchmark::State& state) {
  Rng rng(9);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor codes({n, 16});
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = rng.normal();
  std::vector<int> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(i / 4));
  for (auto _ : state) {
    benchmark::DoNotOptimize(triplet_loss_batch_hard(codes, ids, 0.3));
  }
}
BENCHMARK(BM_TripletBatchHard)->Arg(32)->Arg(64);

void BM_CmcCurve(benchmark::State& state) {
  Rng rng(11);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor dist({n, n});
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = rng.uniform();
  std::vector<int> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(i));
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmc_curve(dist, ids, ids, 10));
  }
}
BENCHMARK(BM_CmcCurve)->Arg(60)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
