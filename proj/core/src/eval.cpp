#include "mmfa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mmfa/rng.hpp"

namespace mmfa {

Tensor l2_normalize_rows(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("l2_normalize_rows: expected [n, d]");
  Tensor out = m;
  const std::size_t n = m.dim(0), d = m.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += m.at(i, k) * m.at(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      throw std::invalid_argument("l2_normalize_rows: zero vector at row " +
                                  std::to_string(i));
    }
    for (std::size_t k = 0; k < d; ++k) out.at(i, k) = m.at(i, k) / norm;
  }
  return out;
}

Tensor distance_matrix(const Tensor& probe, const Tensor& gallery, bool normalize) {
  if (probe.rank() != 2 || gallery.rank() != 2 || probe.dim(1) != gallery.dim(1)) {
    throw std::invalid_argument("distance_matrix: code dimensions disagree");
  }
  const Tensor p = normalize ? l2_normalize_rows(probe) : probe;
  const Tensor g = normalize ? l2_normalize_rows(gallery) : gallery;
  const std::size_t np = p.dim(0), ng = g.dim(0), d = p.dim(1);
  Tensor dist({np, ng});
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = p.at(i, k) - g.at(j, k);
        acc += diff * diff;
      }
      dist.at(i, j) = std::sqrt(acc);
    }
  }
  return dist;
}

namespace {

void validate_ranking_inputs(const Tensor& dist, const std::vector<int>& probe_ids,
                             const std::vector<int>& gallery_ids) {
  if (dist.rank() != 2) throw std::invalid_argument("ranking: dist must be [np, ng]");
  if (dist.dim(0) != probe_ids.size() || dist.dim(1) != gallery_ids.size()) {
    throw std::invalid_argument("ranking: id counts do not match distance matrix");
  }
  dist.require_finite("distance matrix");
}

/// Gallery indices sorted by (distance, index) for one probe row.
std::vector<std::size_t> ranked_gallery(const Tensor& dist, std::size_t probe_row) {
  std::vector<std::size_t> order(dist.dim(1));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist.at(probe_row, a) < dist.at(probe_row, b);
  });
  return order;
}

}  // namespace

std::vector<double> cmc_curve(const Tensor& dist, const std::vector<int>& probe_ids,
                              const std::vector<int>& gallery_ids, std::size_t max_rank) {
  validate_ranking_inputs(dist, probe_ids, gallery_ids);
  if (max_rank == 0) throw std::invalid_argument("cmc_curve: max_rank must be >= 1");

  std::vector<double> cmc(max_rank, 0.0);
  const std::size_t np = probe_ids.size();
  for (std::size_t i = 0; i < np; ++i) {
    const std::vector<std::size_t> order = ranked_gallery(dist, i);
    std::size_t rank = 0;  // 1-based rank of the first correct match
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery_ids[order[pos]] == probe_ids[i]) {
        rank = pos + 1;
        break;
      }
    }
    if (rank == 0) {
      throw std::invalid_argument("cmc_curve: probe identity " +
                                  std::to_string(probe_ids[i]) + " absent from gallery");
    }
    for (std::size_t r = rank; r <= max_rank; ++r) cmc[r - 1] += 1.0;
  }
  for (double& v : cmc) v /= static_cast<double>(np);
  return cmc;
}

double mean_average_precision(const Tensor& dist, const std::vector<int>& probe_ids,
                              const std::vector<int>& gallery_ids) {
  validate_ranking_inputs(dist, probe_ids, gallery_ids);
  const std::size_t np = probe_ids.size();
  double total = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    const std::vector<std::size_t> order = ranked_gallery(dist, i);
    std::size_t relevant = 0;
    for (int id : gallery_ids) {
      if (id == probe_ids[i]) ++relevant;
    }
    if (relevant == 0) {
      throw std::invalid_argument("mean_average_precision: probe identity " +
                                  std::to_string(probe_ids[i]) +
                                  " has no relevant gallery entries");
    }
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery_ids[order[pos]] == probe_ids[i]) {
        hits += 1;
        ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
      }
    }
    total += ap / static_cast<double>(relevant);
  }
  return total / static_cast<double>(np);
}

Tensor encode_dataset(ModelState& state, const Dataset& data,
                      const std::vector<std::size_t>& rows) {
  const Tensor batch = data.gather(rows);
  return encode(state, extract_features(state, batch));
}

EvalReport run_protocol(ModelState& state, const Dataset& data, int domain,
                        std::size_t trials, std::size_t max_rank, std::uint64_t seed,
                        bool normalize) {
  if (trials == 0) throw std::invalid_argument("run_protocol: trials must be >= 1");
  EvalReport report;
  report.max_rank = max_rank;
  report.seed = seed;
  if (domain >= 0 && static_cast<std::size_t>(domain) < data.domain_names.size()) {
    report.evaluated_domain = data.domain_names[domain];
  }

  std::vector<double> cmc_sum(max_rank, 0.0);
  double map_sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const EvalSplit split = make_eval_split(data, domain, Rng::derive_seed(seed, t));
    const Tensor probe_h = encode_dataset(state, data, split.probe);
    const Tensor gallery_h = encode_dataset(state, data, split.gallery);
    std::vector<int> probe_ids, gallery_ids;
    for (std::size_t r : split.probe) probe_ids.push_back(data.identities[r]);
    for (std::size_t r : split.gallery) gallery_ids.push_back(data.identities[r]);

    const Tensor dist = distance_matrix(probe_h, gallery_h, normalize);
    TrialResult trial;
    trial.cmc = cmc_curve(dist, probe_ids, gallery_ids, max_rank);
    trial.map = mean_average_precision(dist, probe_ids, gallery_ids);
    for (std::size_t r = 0; r < max_rank; ++r) cmc_sum[r] += trial.cmc[r];
    map_sum += trial.map;
    report.trials.push_back(std::move(trial));
  }
  report.mean_cmc.resize(max_rank);
  for (std::size_t r = 0; r < max_rank; ++r) {
    report.mean_cmc[r] = cmc_sum[r] / static_cast<double>(trials);
  }
  report.mean_map = map_sum / static_cast<double>(trials);
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["max_rank"] = max_rank;
  j["seed"] = seed;
  j["evaluated_domain"] = evaluated_domain;
  j["trials"] = nlohmann::json::array();
  for (const TrialResult& t : trials) {
    j["trials"].push_back({{"cmc", t.cmc}, {"map", t.map}});
  }
  j["mean_cmc"] = mean_cmc;
  j["mean_map"] = mean_map;
  if (domain_probe_accuracy >= 0.0) j["domain_probe_accuracy"] = domain_probe_accuracy;
  if (!config_echo.empty()) j["config_echo"] = config_echo;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "trial";
  for (std::size_t r = 1; r <= max_rank; ++r) out << ",rank" << r;
  out << ",mAP\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t t = 0; t < trials.size(); ++t) {
    out << (t + 1);
    for (double v : trials[t].cmc) out << "," << fmt(v);
    out << "," << fmt(trials[t].map) << "\n";
  }
  out << "mean";
  for (double v : mean_cmc) out << "," << fmt(v);
  out << "," << fmt(mean_map) << "\n";
  return out.str();
}

LinearSoftmax train_linear_softmax(const Tensor& x, const std::vector<int>& labels,
                                   std::size_t classes, std::size_t steps, double lr) {
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    throw std::invalid_argument("train_linear_softmax: shape mismatch");
  }
  if (classes < 2) throw std::invalid_argument("train_linear_softmax: needs >= 2 classes");
  const std::size_t n = x.dim(0), d = x.dim(1);
  LinearSoftmax model;
  model.weight = Tensor({classes, d});
  model.bias = Tensor({classes});

  std::vector<double> logits(classes);
  Tensor grad_w({classes, d});
  Tensor grad_b({classes});
  for (std::size_t step = 0; step < steps; ++step) {
    grad_w.fill(0.0);
    grad_b.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double max_logit = -1e300;
      for (std::size_t c = 0; c < classes; ++c) {
        double acc = model.bias[c];
        for (std::size_t k = 0; k < d; ++k) acc += model.weight.at(c, k) * x.at(i, k);
        logits[c] = acc;
        max_logit = std::max(max_logit, acc);
      }
      double denom = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        logits[c] = std::exp(logits[c] - max_logit);
        denom += logits[c];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = logits[c] / denom;
        const double delta = p - (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0);
        for (std::size_t k = 0; k < d; ++k) grad_w.at(c, k) += delta * x.at(i, k);
        grad_b[c] += delta;
      }
    }
    const double scale = lr / static_cast<double>(n);
    for (std::size_t idx = 0; idx < grad_w.size(); ++idx) {
      model.weight[idx] -= scale * grad_w[idx];
    }
    for (std::size_t c = 0; c < classes; ++c) model.bias[c] -= scale * grad_b[c];
  }
  return model;
}

double classifier_accuracy(const LinearSoftmax& model, const Tensor& x,
                           const std::vector<int>& labels) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t classes = model.bias.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = model.bias[c];
      for (std::size_t k = 0; k < d; ++k) acc += model.weight.at(c, k) * x.at(i, k);
      if (acc > best_score) {
        best_score = acc;
        best = c;
      }
    }
    if (static_cast<std::size_t>(labels[i]) == best) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double probe_domain_accuracy(const Tensor& codes, const std::vector<int>& domain_labels,
                             double holdout_fraction, std::uint64_t seed) {
  if (codes.rank() != 2 || codes.dim(0) != domain_labels.size()) {
    throw std::invalid_argument("probe_domain_accuracy: shape mismatch");
  }
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw std::invalid_argument("probe_domain_accuracy: holdout fraction must be in (0, 1)");
  }

  // remap domain values to contiguous class indices
  std::map<int, int> remap;
  for (int dl : domain_labels) remap.emplace(dl, 0);
  if (remap.size() < 2) {
    throw std::invalid_argument("probe_domain_accuracy: needs >= 2 domains");
  }
  int next = 0;
  for (auto& [dom, cls] : remap) cls = next++;

  // stratified split per domain
  std::map<int, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < domain_labels.size(); ++i) {
    by_domain[domain_labels[i]].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> train_rows, holdout_rows;
  for (auto& [dom, rows] : by_domain) {
    if (rows.size() < 2) {
      throw std::invalid_argument("probe_domain_accuracy: domain with fewer than 2 samples");
    }
    rng.shuffle(rows);
    std::size_t h = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(rows.size())));
    h = std::clamp<std::size_t>(h, 1, rows.size() - 1);
    holdout_rows.insert(holdout_rows.end(), rows.begin(), rows.begin() + static_cast<long>(h));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<long>(h), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(holdout_rows.begin(), holdout_rows.end());

  const std::size_t d = codes.dim(1);
  auto gather = [&](const std::vector<std::size_t>& rows, Tensor& x,
                    std::vector<int>& y) {
    x = Tensor({rows.size(), d});
    y.clear();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t k = 0; k < d; ++k) x.at(r, k) = codes.at(rows[r], k);
      y.push_back(remap.at(domain_labels[rows[r]]));
    }
  };
  Tensor train_x, holdout_x;
  std::vector<int> train_y, holdout_y;
  gather(train_rows, train_x, train_y);
  gather(holdout_rows, holdout_x, holdout_y);

  const LinearSoftmax probe =
      train_linear_softmax(train_x, train_y, remap.size(), 500, 0.1);
  return classifier_accuracy(probe, holdout_x, holdout_y);
}

}  // namespace mmfa
