#include "mmfa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mmfa {

std::size_t LabeledBatch::distinct_domains() const {
  std::set<int> seen(domains.begin(), domains.end());
  return seen.size();
}

void LabeledBatch::validate() const {
  if (identities.empty()) throw std::invalid_argument("batch must be non-empty");
  if (features.dim(0) != identities.size() || identities.size() != domains.size()) {
    throw std::invalid_argument("batch feature/label counts disagree");
  }
  features.require_finite("batch features");
}

namespace {

void validate_labels(const Tensor& logits, const std::vector<int>& labels,
                     const char* what) {
  if (logits.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": logits must be [n, classes]");
  }
  const std::size_t classes = logits.dim(1);
  if (classes < 2) {
    throw std::invalid_argument(std::string(what) + ": needs at least 2 classes");
  }
  if (labels.size() != logits.dim(0)) {
    throw std::invalid_argument(std::string(what) + ": label count mismatch");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      std::ostringstream msg;
      msg << what << ": label " << labels[i] << " out of range [0, " << classes
          << ") at row " << i;
      throw std::invalid_argument(msg.str());
    }
  }
  logits.require_finite(std::string(what) + " logits");
}

// Pairwise Euclidean distances between rows.
std::vector<double> pairwise_distances(const Tensor& codes) {
  const std::size_t n = codes.dim(0);
  const std::size_t d = codes.dim(1);
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = codes[i * d + k] - codes[j * d + k];
        acc += diff * diff;
      }
      const double dd = std::sqrt(acc);
      dist[i * n + j] = dd;
      dist[j * n + i] = dd;
    }
  }
  return dist;
}

struct HardTriplet {
  std::size_t anchor, positive, negative;
  bool active;  // hinge > 0
};

}  // namespace

Value nll_loss(Graph& g, Value logits, const std::vector<int>& labels) {
  const Tensor& tl = g.value(logits);
  validate_labels(tl, labels, "nll_loss");
  const std::size_t n = tl.dim(0);
  const std::size_t classes = tl.dim(1);

  Tensor probs({n, classes});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) max_logit = std::max(max_logit, tl.at(i, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(tl.at(i, c) - max_logit);
      probs.at(i, c) = e;
      denom += e;
    }
    for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) /= denom;
    const double p_true = std::max(probs.at(i, static_cast<std::size_t>(labels[i])), 1e-300);
    total -= std::log(p_true);
  }
  total /= static_cast<double>(n);

  return g.node(Tensor::scalar(total), {logits},
                [logits, labels, probs, n, classes](Graph& gg, const Tensor& grad) {
                  Tensor& gl = gg.grad_buffer(logits);
                  const double scale = grad[0] / static_cast<double>(n);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t c = 0; c < classes; ++c) {
                      double delta = probs.at(i, c);
                      if (static_cast<std::size_t>(labels[i]) == c) delta -= 1.0;
                      gl[i * classes + c] += scale * delta;
                    }
                  }
                });
}

Value triplet_batch_hard(Graph& g, Value codes, const std::vector<int>& identities,
                         double margin) {
  const Tensor& tc = g.value(codes);
  if (tc.rank() != 2) throw std::invalid_argument("triplet: codes must be [n, d]");
  if (tc.dim(1) < 1) throw std::invalid_argument("triplet: code dimension must be >= 1");
  if (tc.dim(0) != identities.size()) {
    throw std::invalid_argument("triplet: label count mismatch");
  }
  if (margin < 0.0) throw std::invalid_argument("triplet: margin must be >= 0");
  tc.require_finite("triplet codes");

  const std::size_t n = tc.dim(0);
  const std::vector<double> dist = pairwise_distances(tc);

  std::vector<HardTriplet> triplets;
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    // farthest positive (ties -> first index)
    bool has_pos = false, has_neg = false;
    std::size_t pos = 0, neg = 0;
    double d_ap = -1.0;
    double d_an = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (identities[j] == identities[a]) {
        if (dist[a * n + j] > d_ap) {
          d_ap = dist[a * n + j];
          pos = j;
          has_pos = true;
        }
      } else {
        if (dist[a * n + j] < d_an) {
          d_an = dist[a * n + j];
          neg = j;
          has_neg = true;
        }
      }
    }
    if (!has_pos || !has_neg) continue;
    const double hinge = d_ap - d_an + margin;
    if (hinge > 0.0) total += hinge;
    triplets.push_back({a, pos, neg, hinge > 0.0});
  }
  if (triplets.empty()) {
    throw std::invalid_argument("triplet: no valid anchors in batch");
  }
  total /= static_cast<double>(triplets.size());

  const std::size_t d = tc.dim(1);
  return g.node(
      Tensor::scalar(total), {codes},
      [codes, triplets, dist, n, d](Graph& gg, const Tensor& grad) {
        Tensor& gc = gg.grad_buffer(codes);
        const Tensor& vc = gg.value(codes);
        const double scale = grad[0] / static_cast<double>(triplets.size());
        for (const HardTriplet& t : triplets) {
          if (!t.active) continue;
          const double dap = dist[t.anchor * n + t.positive];
          const double dan = dist[t.anchor * n + t.negative];
          if (dap > 0.0) {
            const double c = scale / dap;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = vc[t.anchor * d + k] - vc[t.positive * d + k];
              gc[t.anchor * d + k] += c * diff;
              gc[t.positive * d + k] -= c * diff;
            }
          }
          if (dan > 0.0) {
            const double c = scale / dan;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = vc[t.anchor * d + k] - vc[t.negative * d + k];
              gc[t.anchor * d + k] -= c * diff;
              gc[t.negative * d + k] += c * diff;
            }
          }
        }
      });
}

Value reconstruction(Graph& g, Value x, Value x_rec) {
  const Tensor& tx = g.value(x);
  const Tensor& tr = g.value(x_rec);
  if (!tx.same_shape(tr)) {
    throw std::invalid_argument("reconstruction: shape mismatch " + tx.shape_string() +
                                " vs " + tr.shape_string());
  }
  const std::size_t n = tx.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const double diff = tx[i] - tr[i];
    total += diff * diff;
  }
  total /= static_cast<double>(n);
  return g.node(Tensor::scalar(total), {x, x_rec},
                [x, x_rec, n](Graph& gg, const Tensor& grad) {
                  const Tensor& vx = gg.value(x);
                  const Tensor& vr = gg.value(x_rec);
                  const double scale = 2.0 * grad[0] / static_cast<double>(n);
                  const bool need_x = gg.requires_grad(x);
                  const bool need_r = gg.requires_grad(x_rec);
                  Tensor* gx = need_x ? &gg.grad_buffer(x) : nullptr;
                  Tensor* gr = need_r ? &gg.grad_buffer(x_rec) : nullptr;
                  for (std::size_t i = 0; i < vx.size(); ++i) {
                    const double diff = scale * (vx[i] - vr[i]);
                    if (gx) (*gx)[i] += diff;
                    if (gr) (*gr)[i] -= diff;
                  }
                });
}

namespace {

void require_finite_component(Value v, Graph& g, const char* name) {
  if (!std::isfinite(g.value(v).scalar_value())) {
    throw std::runtime_error(std::string("non-finite loss component: ") + name);
  }
}

}  // namespace

Value combined_loss(Graph& g, Value l_id, Value l_tri, Value l_rec, Value l_mmd,
                    Value l_adv, const LossWeights& w) {
  require_finite_component(l_id, g, "identity");
  require_finite_component(l_tri, g, "triplet");
  require_finite_component(l_rec, g, "reconstruction");
  require_finite_component(l_mmd, g, "mmd");
  require_finite_component(l_adv, g, "adversarial");
  return g.weighted_sum({{1.0, l_id},
                         {w.triplet, l_tri},
                         {w.reconstruction, l_rec},
                         {w.mmd, l_mmd},
                         {w.adversarial, l_adv}});
}

double identity_loss(const Tensor& logits, const std::vector<int>& labels) {
  Graph g;
  return g.value(nll_loss(g, g.leaf(logits), labels)).scalar_value();
}

double triplet_loss_batch_hard(const Tensor& codes, const std::vector<int>& identities,
                               double margin) {
  Graph g;
  return g.value(triplet_batch_hard(g, g.leaf(codes), identities, margin)).scalar_value();
}

double reconstruction_loss(const Tensor& x, const Tensor& x_rec) {
  Graph g;
  return g.value(reconstruction(g, g.leaf(x), g.leaf(x_rec))).scalar_value();
}

double domain_discrimination_loss(const Tensor& domain_logits,
                                  const std::vector<int>& domain_labels) {
  Graph g;
  return g.value(nll_loss(g, g.leaf(domain_logits), domain_labels)).scalar_value();
}

double adversarial_loss(const Tensor& domain_logits,
                        const std::vector<int>& domain_labels) {
  return -domain_discrimination_loss(domain_logits, domain_labels);
}

double combined_feature_loss(double l_id, double l_tri, double l_rec, double l_mmd,
                             double l_adv, const LossWeights& w) {
  for (double v : {l_id, l_tri, l_rec, l_mmd, l_adv}) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("combined_feature_loss: non-finite component");
    }
  }
  return l_id + w.triplet * l_tri + w.reconstruction * l_rec + w.mmd * l_mmd +
         w.adversarial * l_adv;
}

}  // namespace mmfa
