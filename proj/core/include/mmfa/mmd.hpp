#ifndef MMFA_MMD_HPP_
#define MMFA_MMD_HPP_

#include <vector>

#include "mmfa/graph.hpp"
#include "mmfa/tensor.hpp"

namespace mmfa {

/// Multi-bandwidth RBF kernel: k(a, b) = combine over bandwidths of
/// exp(-||a - b||^2 / (2 * bandwidth)). The default combination is the
/// arithmetic mean, which keeps the loss scale comparable to a single kernel.
struct KernelSpec {
  std::vector<double> bandwidths{1.0, 5.0, 10.0};
  enum class Combine { kMean, kSum };
  Combine combine = Combine::kMean;

  void validate() const;
  /// Kernel value from a squared distance.
  double from_squared_distance(double d2) const;
};

/// Power applied to each pairwise term of the K-domain regularizer. The
/// squared form is the differentiable default; the root form takes
/// sqrt(max(term, 0)) per pair.
enum class MmdForm { kSquared, kRoot };

/// Single-bandwidth RBF kernel, exp(-||a-b||^2 / (2*bandwidth)).
double rbf_kernel(const std::vector<double>& a, const std::vector<double>& b,
                  double bandwidth);

/// Biased (V-statistic) squared MMD between two sets of codes, including the
/// i == i' diagonal terms. Always >= 0 up to round-off; tiny negatives are
/// clamped to zero.
double mmd_squared(const Tensor& a, const Tensor& b, const KernelSpec& kernel);

/// (1/K^2) * sum over all ordered domain pairs (i, j) of the pairwise term
/// (MMD^2 or its root); i == j terms are identically zero.
double multi_domain_mmd(const std::vector<Tensor>& domain_codes,
                        const KernelSpec& kernel, MmdForm form = MmdForm::kSquared);

/// Differentiable multi-domain regularizer over one code matrix [n, d] whose
/// rows are grouped by domain label; the K of the 1/K^2 normalization is the
/// number of distinct domains present.
Value multi_domain_mmd_op(Graph& g, Value codes, const std::vector<int>& domains,
                          const KernelSpec& kernel, MmdForm form = MmdForm::kSquared);

}  // namespace mmfa

#endif  // MMFA_MMD_HPP_
