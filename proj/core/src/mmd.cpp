#include "mmfa/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mmfa {

void KernelSpec::validate() const {
  if (bandwidths.empty()) throw std::invalid_argument("kernel needs at least one bandwidth");
  for (double b : bandwidths) {
    if (b <= 0.0) throw std::invalid_argument("kernel bandwidths must be > 0");
  }
}

double KernelSpec::from_squared_distance(double d2) const {
  double acc = 0.0;
  for (double b : bandwidths) acc += std::exp(-d2 / (2.0 * b));
  if (combine == Combine::kMean) acc /= static_cast<double>(bandwidths.size());
  return acc;
}

namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}

/// d/d(d2) of the combined kernel; the gradient of k w.r.t. its first
/// argument is 2 * this * (a - b).
double kernel_d2_derivative(const KernelSpec& kernel, double d2) {
  double acc = 0.0;
  for (double b : kernel.bandwidths) {
    acc += std::exp(-d2 / (2.0 * b)) * (-1.0 / (2.0 * b));
  }
  if (kernel.combine == KernelSpec::Combine::kMean) {
    acc /= static_cast<double>(kernel.bandwidths.size());
  }
  return acc;
}

/// V-statistic over row-pointer views; shared by the plain and graph paths so
/// both sum in the same order.
double mmd_squared_rows(const std::vector<const double*>& a,
                        const std::vector<const double*>& b, std::size_t d,
                        const KernelSpec& kernel) {
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double self_a = 0.0;
  for (const double* x : a) {
    for (const double* y : a) self_a += kernel.from_squared_distance(squared_distance(x, y, d));
  }
  double self_b = 0.0;
  for (const double* x : b) {
    for (const double* y : b) self_b += kernel.from_squared_distance(squared_distance(x, y, d));
  }
  double cross = 0.0;
  for (const double* x : a) {
    for (const double* y : b) cross += kernel.from_squared_distance(squared_distance(x, y, d));
  }
  const double value = self_a / (na * na) + self_b / (nb * nb) - 2.0 * cross / (na * nb);
  return value > 0.0 ? value : 0.0;
}

std::vector<const double*> matrix_rows(const Tensor& m) {
  std::vector<const double*> rows(m.dim(0));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = m.data() + i * m.dim(1);
  return rows;
}

void validate_code_matrix(const Tensor& m, const char* what) {
  if (m.rank() != 2) throw std::invalid_argument(std::string(what) + ": codes must be [n, d]");
  if (m.dim(0) < 1) throw std::invalid_argument(std::string(what) + ": empty code set");
}

}  // namespace

double rbf_kernel(const std::vector<double>& a, const std::vector<double>& b,
                  double bandwidth) {
  if (bandwidth <= 0.0) throw std::invalid_argument("rbf_kernel: bandwidth must be > 0");
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("rbf_kernel: dimension mismatch");
  }
  return std::exp(-squared_distance(a.data(), b.data(), a.size()) / (2.0 * bandwidth));
}

double mmd_squared(const Tensor& a, const Tensor& b, const KernelSpec& kernel) {
  kernel.validate();
  validate_code_matrix(a, "mmd_squared");
  validate_code_matrix(b, "mmd_squared");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("mmd_squared: code dimension mismatch");
  }
  return mmd_squared_rows(matrix_rows(a), matrix_rows(b), a.dim(1), kernel);
}

double multi_domain_mmd(const std::vector<Tensor>& domain_codes,
                        const KernelSpec& kernel, MmdForm form) {
  kernel.validate();
  const std::size_t k = domain_codes.size();
  if (k < 2) throw std::invalid_argument("multi_domain_mmd: needs at least 2 domains");
  for (const Tensor& t : domain_codes) validate_code_matrix(t, "multi_domain_mmd");

  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double term = mmd_squared(domain_codes[i], domain_codes[j], kernel);
      if (form == MmdForm::kRoot) term = std::sqrt(term);
      total += 2.0 * term;  // ordered double sum counts each pair twice
    }
  }
  return total / (static_cast<double>(k) * static_cast<double>(k));
}

Value multi_domain_mmd_op(Graph& g, Value codes, const std::vector<int>& domains,
                          const KernelSpec& kernel, MmdForm form) {
  kernel.validate();
  const Tensor& tc = g.value(codes);
  validate_code_matrix(tc, "multi_domain_mmd");
  if (tc.dim(0) != domains.size()) {
    throw std::invalid_argument("multi_domain_mmd: domain label count mismatch");
  }

  std::map<int, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < domains.size(); ++i) by_domain[domains[i]].push_back(i);
  const std::size_t k = by_domain.size();
  if (k < 2) {
    throw std::invalid_argument("multi_domain_mmd: batch spans fewer than 2 domains");
  }
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(k);
  for (auto& [domain, rows] : by_domain) groups.push_back(std::move(rows));

  const std::size_t d = tc.dim(1);
  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<const double*> rows(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) rows[i] = tc.data() + idx[i] * d;
    return rows;
  };

  std::vector<double> pair_values;  // m_ij for i<j in group order
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double m = mmd_squared_rows(rows_of(groups[i]), rows_of(groups[j]), d, kernel);
      pair_values.push_back(m);
      total += 2.0 * (form == MmdForm::kRoot ? std::sqrt(m) : m);
    }
  }
  total /= static_cast<double>(k) * static_cast<double>(k);

  return g.node(
      Tensor::scalar(total), {codes},
      [codes, groups, pair_values, kernel, form, k, d](Graph& gg, const Tensor& grad) {
        Tensor& gc = gg.grad_buffer(codes);
        const Tensor& vc = gg.value(codes);
        std::size_t pair = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = i + 1; j < k; ++j, ++pair) {
            const double m = pair_values[pair];
            // d(total)/d(m): both ordered orientations contribute.
            double chain = 2.0 / (static_cast<double>(k) * static_cast<double>(k));
            if (form == MmdForm::kRoot) {
              if (m <= 1e-300) continue;  // subgradient 0 at the clamp point
              chain *= 0.5 / std::sqrt(m);
            }
            const double coeff = chain * grad[0];
            const auto& ga = groups[i];
            const auto& gb = groups[j];
            const double na = static_cast<double>(ga.size());
            const double nb = static_cast<double>(gb.size());

            auto accumulate = [&](const std::vector<std::size_t>& self,
                                  const std::vector<std::size_t>& other, double n_self,
                                  double n_other) {
              for (std::size_t p : self) {
                const double* xp = vc.data() + p * d;
                for (std::size_t q : self) {
                  if (q == p) continue;
                  const double* xq = vc.data() + q * d;
                  const double w =
                      2.0 * kernel_d2_derivative(kernel, squared_distance(xp, xq, d));
                  const double f = coeff * (2.0 / (n_self * n_self)) * w;
                  for (std::size_t t = 0; t < d; ++t) {
                    gc[p * d + t] += f * (xp[t] - xq[t]);
                  }
                }
                for (std::size_t q : other) {
                  const double* xq = vc.data() + q * d;
                  const double w =
                      2.0 * kernel_d2_derivative(kernel, squared_distance(xp, xq, d));
                  const double f = -coeff * (2.0 / (n_self * n_other)) * w;
                  for (std::size_t t = 0; t < d; ++t) {
                    gc[p * d + t] += f * (xp[t] - xq[t]);
                  }
                }
              }
            };
            accumulate(ga, gb, na, nb);
            accumulate(gb, ga, nb, na);
          }
        }
      });
}

}  // namespace mmfa
