#ifndef MMFA_EVAL_HPP_
#define MMFA_EVAL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mmfa/data.hpp"
#include "mmfa/model.hpp"
#include "mmfa/tensor.hpp"

namespace mmfa {

/// Rows scaled to unit l2 norm; a zero row is an error.
Tensor l2_normalize_rows(const Tensor& m);

/// Pairwise Euclidean distances, optionally after l2-normalizing both sides.
Tensor distance_matrix(const Tensor& probe, const Tensor& gallery, bool normalize);

/// CMC[r] (0-based r, rank r+1) = fraction of probes whose correct gallery
/// entry appears within the top r+1 under ascending distance; distance ties
/// break by gallery index. Valid for single-shot galleries.
std::vector<double> cmc_curve(const Tensor& dist, const std::vector<int>& probe_ids,
                              const std::vector<int>& gallery_ids, std::size_t max_rank);

/// Mean over probes of average precision (area under the precision-recall
/// curve) with the same deterministic ordering.
double mean_average_precision(const Tensor& dist, const std::vector<int>& probe_ids,
                              const std::vector<int>& gallery_ids);

struct TrialResult {
  std::vector<double> cmc;
  double map = 0.0;
};

struct EvalReport {
  std::vector<TrialResult> trials;
  std::vector<double> mean_cmc;
  double mean_map = 0.0;
  double domain_probe_accuracy = -1.0;  // negative = not computed
  std::size_t max_rank = 0;
  std::uint64_t seed = 0;
  std::string evaluated_domain;
  std::string config_echo;

  double mean_rank1() const { return mean_cmc.empty() ? 0.0 : mean_cmc.front(); }
  std::string to_json() const;
  std::string to_csv() const;
};

/// Hidden codes H = Q(E(x)) for the given dataset rows, eval mode.
Tensor encode_dataset(ModelState& state, const Dataset& data,
                      const std::vector<std::size_t>& rows);

/// Retrieval protocol on one domain: `trials` random single-shot
/// probe/gallery splits, CMC and mAP per trial plus the means. Deterministic
/// in the base seed.
EvalReport run_protocol(ModelState& state, const Dataset& data, int domain,
                        std::size_t trials = 10, std::size_t max_rank = 10,
                        std::uint64_t seed = 99, bool normalize = true);

// --- linear softmax probe ---

struct LinearSoftmax {
  Tensor weight;  // [classes, dim]
  Tensor bias;    // [classes]
};

/// Full-batch gradient descent on softmax cross-entropy from zero init;
/// deterministic. Used by the domain probe and the generator sanity check.
LinearSoftmax train_linear_softmax(const Tensor& x, const std::vector<int>& labels,
                                   std::size_t classes, std::size_t steps, double lr);
double classifier_accuracy(const LinearSoftmax& model, const Tensor& x,
                           const std::vector<int>& labels);

/// Trains a fresh linear classifier on a stratified train split of the
/// frozen codes and reports held-out domain accuracy (500 steps, lr 0.1,
/// fixed so runs are comparable). The codes are never updated.
double probe_domain_accuracy(const Tensor& codes, const std::vector<int>& domain_labels,
                             double holdout_fraction, std::uint64_t seed);

}  // namespace mmfa

#endif  // MMFA_EVAL_HPP_
