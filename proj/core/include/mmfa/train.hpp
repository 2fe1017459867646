#ifndef MMFA_TRAIN_HPP_
#define MMFA_TRAIN_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfa/data.hpp"
#include "mmfa/gradcheck.hpp"
#include "mmfa/losses.hpp"
#include "mmfa/mmd.hpp"
#include "mmfa/model.hpp"
#include "mmfa/optimizer.hpp"
#include "mmfa/rng.hpp"

namespace mmfa {

struct TrainConfig {
  double lambda_triplet = 1.0;
  double lambda_reconstruction = 10.0;
  double lambda_mmd = 0.2;
  double lambda_adversarial = 0.5;
  double margin = 0.3;

  KernelSpec kernel;
  MmdForm mmd_form = MmdForm::kSquared;

  std::size_t epochs = 60;
  std::size_t batch_p = 8;   // identities per batch
  std::size_t batch_k = 4;   // samples per identity
  double base_lr = 3.5e-4;
  std::size_t warmup_epochs = 10;
  std::vector<std::size_t> decay_epochs{40, 70};
  double decay_factor = 0.1;  // set 0.9 for the literal "reduce by 10%" reading
  std::size_t discriminator_steps = 5;  // per iteration

  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only

  // Component toggles for the ablation lattice. Disabled components are not
  // computed and log exactly zero.
  bool use_in = true;
  bool use_triplet = true;
  bool use_aae = true;  // reconstruction + adversarial + discriminator steps
  bool use_mmd = true;

  bool write_step_log = false;

  std::size_t batch_size() const { return batch_p * batch_k; }
  LossWeights effective_weights() const;
  bool adversarial_enabled() const;
  void validate() const;
};

/// Linear warm-up to the base rate over warmup_epochs, then a staircase with
/// decay_factor at each decay epoch. Epochs are 1-based.
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

/// Draws P distinct train-set identities and K samples each (with
/// replacement when an identity has fewer than K samples). Redraws the
/// identity selection if it happens to land in a single domain so that every
/// batch is usable for the domain losses.
LabeledBatch sample_pk_batch(const Dataset& data, std::size_t p, std::size_t k, Rng& rng);

/// One discriminator update: H is computed with the feature path frozen
/// (batch statistics, no running-stat updates, no gradients into E/Q), then
/// D takes one optimizer step on the domain classification loss.
double discriminator_step(ModelState& state, const LabeledBatch& batch,
                          AdamOptimizer& optimizer_d, double lr);

struct StepLosses {
  double identity = 0.0;
  double triplet = 0.0;
  double reconstruction = 0.0;
  double mmd = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
};

/// One feature-path update on the combined loss; D is untouched. Returns the
/// component breakdown for logging.
StepLosses feature_step(ModelState& state, const LabeledBatch& batch,
                        AdamOptimizer& optimizer_eqp, double lr,
                        const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  StepLosses feature;          // means over the epoch's feature steps
  double discriminator = 0.0;  // mean over the epoch's discriminator steps
};

struct StepRecord {
  enum class Kind { kDiscriminator, kFeature };
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  Kind kind = Kind::kFeature;
  double loss = 0.0;
};

using StepObserver = std::function<void(const StepRecord&, const ModelState&)>;
using EpochHook = std::function<void(std::size_t epoch, const ModelState&)>;

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<StepRecord> steps;
};

/// Algorithm: per iteration, discriminator_steps fresh-batch updates of D,
/// then one feature step; floor(train samples / batch size) iterations per
/// epoch; one shared learning-rate schedule. Bit-reproducible per seed.
TrainResult run_training(ModelState& state, const Dataset& data,
                         const TrainConfig& config, const StepObserver& observer = {},
                         const EpochHook& epoch_hook = {});

/// CSV: epoch,lr,l_id,l_tri,l_rec,l_mmd,l_adv,l_D,total
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);
std::string step_log_csv(const std::vector<StepRecord>& steps);

/// Central-difference validation of each training loss composed through the
/// full model (analytic gradients of all five parameter sets).
struct LossGradCheck {
  std::string loss;
  CheckReport report;
};
std::vector<LossGradCheck> check_model_loss_gradients(
    ModelState& state, const LabeledBatch& batch, const TrainConfig& config,
    const GradCheckOptions& options = {});

}  // namespace mmfa

#endif  // MMFA_TRAIN_HPP_
