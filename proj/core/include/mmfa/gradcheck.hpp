#ifndef MMFA_GRADCHECK_HPP_
#define MMFA_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmfa/layers.hpp"

namespace mmfa {

struct GradCheckOptions {
  double step = 1e-5;                    // central-difference half step
  double tolerance = 1e-4;
  std::size_t exhaustive_limit = 10000;  // coordinate cap before sampling
  std::size_t sampled_per_tensor = 64;
  std::uint64_t sample_seed = 1234;
  // Relative-error denominator floor; below it the comparison is effectively
  // absolute, which keeps dead coordinates (inactive relu/hinge paths) from
  // amplifying round-off noise.
  double scale_floor = 1e-6;
};

struct CheckBlockReport {
  std::string name;  // "<set>.<path>"
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct CheckReport {
  std::vector<CheckBlockReport> blocks;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string worst_block;
  std::size_t worst_coordinate = 0;

  std::string summary() const;
};

/// Validates analytic gradients against central finite differences.
///
/// `loss_value` evaluates the scalar loss at the current parameter values
/// and must not mutate state (run batch norm without stat updates).
/// `loss_gradients` zeroes the grad slots of every listed set and fills them
/// with the analytic gradients at the current point. Parameters are
/// perturbed in place and restored. Coordinates are checked exhaustively up
/// to `exhaustive_limit` total, sampled per tensor beyond that.
CheckReport finite_difference_check(
    const std::vector<std::pair<std::string, ParameterSet*>>& sets,
    const std::function<double()>& loss_value,
    const std::function<void()>& loss_gradients, const GradCheckOptions& options = {});

}  // namespace mmfa

#endif  // MMFA_GRADCHECK_HPP_
