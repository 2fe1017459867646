#ifndef MMFA_LOSSES_HPP_
#define MMFA_LOSSES_HPP_

#include <vector>

#include "mmfa/graph.hpp"
#include "mmfa/tensor.hpp"

namespace mmfa {

/// A mini-batch of feature vectors (or hidden codes) with identity and
/// domain labels.
struct LabeledBatch {
  Tensor features;              // [n, d] (or [n, c, h, w] raw image input)
  std::vector<int> identities;  // n entries
  std::vector<int> domains;     // n entries, training-domain indices

  std::size_t size() const { return identities.size(); }
  std::size_t distinct_domains() const;
  void validate() const;
};

/// Loss weights of the combined objective; the component knobs are named
/// individually rather than by subscript.
struct LossWeights {
  double triplet = 1.0;         // lambda_1
  double reconstruction = 10.0; // lambda_2
  double mmd = 0.2;             // lambda_3
  double adversarial = 0.5;     // lambda_4
};

// --- differentiable graph ops ---

/// Mean negative log-likelihood of the true class under softmax(logits).
/// Used for both the identity head (labels = identities) and the domain
/// discriminator (labels = domains). Softmax is computed with
/// max-subtraction; probabilities are floored at 1e-300 before the log.
Value nll_loss(Graph& g, Value logits, const std::vector<int>& labels);

/// Batch-hard triplet loss on l2 distances: per anchor, the farthest
/// same-identity and nearest different-identity samples form the triplet;
/// anchors lacking a positive or a negative are skipped. Mean hinge over
/// valid anchors.
Value triplet_batch_hard(Graph& g, Value codes, const std::vector<int>& identities,
                         double margin);

/// Mean over the batch of the squared l2 reconstruction residual per row.
Value reconstruction(Graph& g, Value x, Value x_rec);

/// L = l_id + w.triplet*l_tri + w.reconstruction*l_rec + w.mmd*l_mmd
///   + w.adversarial*l_adv. Components must be finite scalars.
Value combined_loss(Graph& g, Value l_id, Value l_tri, Value l_rec, Value l_mmd,
                    Value l_adv, const LossWeights& w);

// --- plain scalar entry points (wrap a throwaway graph) ---

double identity_loss(const Tensor& logits, const std::vector<int>& labels);
double triplet_loss_batch_hard(const Tensor& codes, const std::vector<int>& identities,
                               double margin);
double reconstruction_loss(const Tensor& x, const Tensor& x_rec);
double domain_discrimination_loss(const Tensor& domain_logits,
                                  const std::vector<int>& domain_labels);
/// Exactly -domain_discrimination_loss on the same inputs.
double adversarial_loss(const Tensor& domain_logits, const std::vector<int>& domain_labels);
double combined_feature_loss(double l_id, double l_tri, double l_rec, double l_mmd,
                             double l_adv, const LossWeights& w);

}  // namespace mmfa

#endif  // MMFA_LOSSES_HPP_
