#include "mmfa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mmfa {

LossWeights TrainConfig::effective_weights() const {
  LossWeights w;
  w.triplet = use_triplet ? lambda_triplet : 0.0;
  w.reconstruction = use_aae ? lambda_reconstruction : 0.0;
  w.adversarial = use_aae ? lambda_adversarial : 0.0;
  w.mmd = use_mmd ? lambda_mmd : 0.0;
  return w;
}

bool TrainConfig::adversarial_enabled() const {
  return use_aae && lambda_adversarial > 0.0;
}

void TrainConfig::validate() const {
  if (batch_p < 1 || batch_k < 2) {
    throw std::invalid_argument("PK sampling needs P >= 1 and K >= 2");
  }
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (base_lr <= 0.0) throw std::invalid_argument("base learning rate must be > 0");
  if (margin < 0.0) throw std::invalid_argument("triplet margin must be >= 0");
  if (decay_factor <= 0.0 || decay_factor > 1.0) {
    throw std::invalid_argument("decay factor must be in (0, 1]");
  }
  if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
    throw std::invalid_argument("decay epochs must be sorted");
  }
  for (double l : {lambda_triplet, lambda_reconstruction, lambda_mmd, lambda_adversarial}) {
    if (l < 0.0) throw std::invalid_argument("loss weights must be >= 0");
  }
  kernel.validate();
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  if (epoch < 1) throw std::invalid_argument("epoch must be >= 1");
  if (config.warmup_epochs > 0 && epoch <= config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch) /
           static_cast<double>(config.warmup_epochs);
  }
  double lr = config.base_lr;
  for (std::size_t decay : config.decay_epochs) {
    if (epoch >= decay) lr *= config.decay_factor;
  }
  return lr;
}

LabeledBatch sample_pk_batch(const Dataset& data, std::size_t p, std::size_t k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("PK sampling needs K >= 2");
  const std::vector<std::size_t> train_rows = data.train_indices();
  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t r : train_rows) by_identity[data.identities[r]].push_back(r);
  if (by_identity.size() < p) {
    std::ostringstream msg;
    msg << "dataset has " << by_identity.size() << " identities, need " << p;
    throw std::invalid_argument(msg.str());
  }
  std::vector<int> identity_pool;
  identity_pool.reserve(by_identity.size());
  for (const auto& [id, rows] : by_identity) identity_pool.push_back(id);
  const bool multi_domain = data.train_domain_count() >= 2;

  std::vector<int> chosen;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int> pool = identity_pool;
    chosen.clear();
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t j = rng.uniform_index(pool.size());
      chosen.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    }
    if (!multi_domain || p < 2) break;
    std::set<int> batch_domains;
    for (int id : chosen) batch_domains.insert(data.domains[by_identity[id].front()]);
    if (batch_domains.size() >= 2) break;
    chosen.clear();
  }
  if (chosen.empty()) {
    throw std::runtime_error("could not draw a multi-domain PK batch");
  }

  std::vector<std::size_t> rows;
  rows.reserve(p * k);
  for (int id : chosen) {
    const std::vector<std::size_t>& pool = by_identity[id];
    if (pool.size() >= k) {
      std::vector<std::size_t> copy = pool;
      rng.shuffle(copy);
      rows.insert(rows.end(), copy.begin(), copy.begin() + static_cast<long>(k));
    } else {
      for (std::size_t i = 0; i < k; ++i) {
        rows.push_back(pool[rng.uniform_index(pool.size())]);
      }
    }
  }

  LabeledBatch batch;
  batch.features = data.gather(rows);
  for (std::size_t r : rows) {
    batch.identities.push_back(data.identities[r]);
    batch.domains.push_back(data.domains[r]);
  }
  batch.validate();
  return batch;
}

namespace {

void require_multi_domain(const LabeledBatch& batch, const char* step) {
  if (batch.distinct_domains() < 2) {
    throw std::invalid_argument(std::string(step) + ": single-domain batch rejected");
  }
}

double checked(double v, const char* component) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("non-finite loss component: ") + component);
  }
  return v;
}

}  // namespace

double discriminator_step(ModelState& state, const LabeledBatch& batch,
                          AdamOptimizer& optimizer_d, double lr) {
  batch.validate();
  require_multi_domain(batch, "discriminator_step");

  ModelPass::Options options;
  options.training = true;
  options.update_bn_stats = false;  // feature path is frozen, stats included
  options.grad_discriminator = true;
  ModelPass pass(state, options);

  Value codes = pass.encode(pass.extract(batch.features));
  Value logits = pass.discriminate(codes);
  Value loss = nll_loss(pass.graph(), logits, batch.domains);
  const double loss_value = checked(pass.graph().value(loss).scalar_value(), "domain");

  state.discriminator.zero_grads();
  pass.backprop(loss);
  optimizer_d.step(lr);
  return loss_value;
}

StepLosses feature_step(ModelState& state, const LabeledBatch& batch,
                        AdamOptimizer& optimizer_eqp, double lr,
                        const TrainConfig& config) {
  batch.validate();
  require_multi_domain(batch, "feature_step");
  const LossWeights w = config.effective_weights();

  ModelPass::Options options;
  options.training = true;
  options.update_bn_stats = true;
  options.grad_extractor = true;
  options.grad_encoder = true;
  options.grad_decoder = true;
  options.grad_identity_head = true;
  ModelPass pass(state, options);
  Graph& g = pass.graph();

  Value features = pass.extract(batch.features);
  Value codes = pass.encode(features);

  StepLosses out;
  Value l_id = nll_loss(g, pass.classify(codes), batch.identities);
  out.identity = checked(g.value(l_id).scalar_value(), "identity");

  Value l_tri = g.leaf(Tensor::scalar(0.0));
  if (w.triplet > 0.0) {
    l_tri = triplet_batch_hard(g, codes, batch.identities, config.margin);
    out.triplet = checked(g.value(l_tri).scalar_value(), "triplet");
  }
  Value l_rec = g.leaf(Tensor::scalar(0.0));
  if (w.reconstruction > 0.0) {
    l_rec = reconstruction(g, features, pass.decode(codes));
    out.reconstruction = checked(g.value(l_rec).scalar_value(), "reconstruction");
  }
  Value l_mmd = g.leaf(Tensor::scalar(0.0));
  if (w.mmd > 0.0) {
    l_mmd = multi_domain_mmd_op(g, codes, batch.domains, config.kernel, config.mmd_form);
    out.mmd = checked(g.value(l_mmd).scalar_value(), "mmd");
  }
  Value l_adv = g.leaf(Tensor::scalar(0.0));
  if (w.adversarial > 0.0) {
    l_adv = g.negate(nll_loss(g, pass.discriminate(codes), batch.domains));
    out.adversarial = checked(g.value(l_adv).scalar_value(), "adversarial");
  }

  Value total = combined_loss(g, l_id, l_tri, l_rec, l_mmd, l_adv, w);
  out.total = checked(g.value(total).scalar_value(), "total");

  state.extractor.zero_grads();
  state.encoder.zero_grads();
  state.decoder.zero_grads();
  state.identity_head.zero_grads();
  pass.backprop(total);
  optimizer_eqp.step(lr);
  return out;
}

TrainResult run_training(ModelState& state, const Dataset& data,
                         const TrainConfig& config, const StepObserver& observer,
                         const EpochHook& epoch_hook) {
  config.validate();
  data.validate();
  if (data.train_domain_count() < 2) {
    throw std::invalid_argument("training needs at least 2 source domains");
  }
  const std::size_t train_samples = data.train_indices().size();
  const std::size_t iterations = train_samples / config.batch_size();
  if (iterations == 0) {
    throw std::invalid_argument("dataset smaller than one batch");
  }

  AdamOptimizer optimizer_eqp(
      {&state.extractor, &state.encoder, &state.decoder, &state.identity_head});
  AdamOptimizer optimizer_d({&state.discriminator});
  Rng rng(config.seed);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    StepLosses sums;
    double disc_sum = 0.0;
    std::size_t disc_count = 0;

    for (std::size_t it = 1; it <= iterations; ++it) {
      if (config.adversarial_enabled()) {
        for (std::size_t d = 0; d < config.discriminator_steps; ++d) {
          LabeledBatch batch = sample_pk_batch(data, config.batch_p, config.batch_k, rng);
          const double loss_d = discriminator_step(state, batch, optimizer_d, lr);
          disc_sum += loss_d;
          disc_count += 1;
          StepRecord record{epoch, it, StepRecord::Kind::kDiscriminator, loss_d};
          result.steps.push_back(record);
          if (observer) observer(record, state);
        }
      }
      LabeledBatch batch = sample_pk_batch(data, config.batch_p, config.batch_k, rng);
      const StepLosses losses = feature_step(state, batch, optimizer_eqp, lr, config);
      sums.identity += losses.identity;
      sums.triplet += losses.triplet;
      sums.reconstruction += losses.reconstruction;
      sums.mmd += losses.mmd;
      sums.adversarial += losses.adversarial;
      sums.total += losses.total;
      StepRecord record{epoch, it, StepRecord::Kind::kFeature, losses.total};
      result.steps.push_back(record);
      if (observer) observer(record, state);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr;
    const double inv = 1.0 / static_cast<double>(iterations);
    metrics.feature.identity = sums.identity * inv;
    metrics.feature.triplet = sums.triplet * inv;
    metrics.feature.reconstruction = sums.reconstruction * inv;
    metrics.feature.mmd = sums.mmd * inv;
    metrics.feature.adversarial = sums.adversarial * inv;
    metrics.feature.total = sums.total * inv;
    metrics.discriminator = disc_count ? disc_sum / static_cast<double>(disc_count) : 0.0;
    result.epochs.push_back(metrics);
    if (epoch_hook) epoch_hook(epoch, state);
  }
  return result;
}

namespace {

std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out << "epoch,lr,l_id,l_tri,l_rec,l_mmd,l_adv,l_D,total\n";
  for (const EpochMetrics& m : metrics) {
    out << m.epoch << "," << csv_double(m.lr) << "," << csv_double(m.feature.identity)
        << "," << csv_double(m.feature.triplet) << ","
        << csv_double(m.feature.reconstruction) << "," << csv_double(m.feature.mmd)
        << "," << csv_double(m.feature.adversarial) << "," << csv_double(m.discriminator)
        << "," << csv_double(m.feature.total) << "\n";
  }
  return out.str();
}

std::string step_log_csv(const std::vector<StepRecord>& steps) {
  std::ostringstream out;
  out << "epoch,iteration,kind,loss\n";
  for (const StepRecord& s : steps) {
    out << s.epoch << "," << s.iteration << ","
        << (s.kind == StepRecord::Kind::kDiscriminator ? "discriminator" : "feature")
        << "," << csv_double(s.loss) << "\n";
  }
  return out.str();
}

namespace {

enum class WhichLoss { kIdentity, kTriplet, kReconstruction, kMmd, kAdversarial };

double model_loss(ModelState& state, const LabeledBatch& batch,
                  const TrainConfig& config, WhichLoss which, bool with_grads) {
  ModelPass::Options options;
  options.training = true;
  options.update_bn_stats = false;  // repeated evaluations must not drift
  if (with_grads) {
    options.grad_extractor = true;
    options.grad_encoder = true;
    options.grad_decoder = true;
    options.grad_discriminator = true;
    options.grad_identity_head = true;
  }
  ModelPass pass(state, options);
  Graph& g = pass.graph();
  Value features = pass.extract(batch.features);
  Value codes = pass.encode(features);
  Value loss;
  switch (which) {
    case WhichLoss::kIdentity:
      loss = nll_loss(g, pass.classify(codes), batch.identities);
      break;
    case WhichLoss::kTriplet:
      loss = triplet_batch_hard(g, codes, batch.identities, config.margin);
      break;
    case WhichLoss::kReconstruction:
      loss = reconstruction(g, features, pass.decode(codes));
      break;
    case WhichLoss::kMmd:
      loss = multi_domain_mmd_op(g, codes, batch.domains, config.kernel, config.mmd_form);
      break;
    case WhichLoss::kAdversarial:
      loss = g.negate(nll_loss(g, pass.discriminate(codes), batch.domains));
      break;
  }
  const double value = g.value(loss).scalar_value();
  if (with_grads) pass.backprop(loss);
  return value;
}

}  // namespace

std::vector<LossGradCheck> check_model_loss_gradients(ModelState& state,
                                                      const LabeledBatch& batch,
                                                      const TrainConfig& config,
                                                      const GradCheckOptions& options) {
  batch.validate();
  const std::vector<std::pair<std::string, ParameterSet*>> sets = {
      {"extractor", &state.extractor},
      {"encoder", &state.encoder},
      {"decoder", &state.decoder},
      {"discriminator", &state.discriminator},
      {"identity_head", &state.identity_head},
  };
  const std::pair<const char*, WhichLoss> losses[] = {
      {"identity", WhichLoss::kIdentity},
      {"triplet", WhichLoss::kTriplet},
      {"reconstruction", WhichLoss::kReconstruction},
      {"mmd", WhichLoss::kMmd},
      {"adversarial", WhichLoss::kAdversarial},
  };
  std::vector<LossGradCheck> out;
  for (const auto& [name, which] : losses) {
    CheckReport report = finite_difference_check(
        sets,
        [&]() { return model_loss(state, batch, config, which, false); },
        [&]() { model_loss(state, batch, config, which, true); }, options);
    out.push_back({name, std::move(report)});
  }
  return out;
}

}  // namespace mmfa
