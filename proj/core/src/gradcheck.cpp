#include "mmfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mmfa/rng.hpp"

namespace mmfa {

std::string CheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "PASS" : "FAIL") << " max_rel=" << max_rel_error
      << " mean_rel=" << mean_rel_error << " tol=" << tolerance;
  if (!passed) {
    out << " worst=" << worst_block << "[" << worst_coordinate << "]";
  }
  return out.str();
}

CheckReport finite_difference_check(
    const std::vector<std::pair<std::string, ParameterSet*>>& sets,
    const std::function<double()>& loss_value,
    const std::function<void()>& loss_gradients, const GradCheckOptions& options) {
  const double base = loss_value();
  if (!std::isfinite(base)) {
    throw std::runtime_error("finite_difference_check: non-finite loss at base point");
  }
  // Central differences carry cancellation noise proportional to the loss
  // magnitude (~ulp(|f|)/step), so the comparison floor must grow with it or
  // zero-gradient coordinates drown in round-off.
  const double floor = std::max(options.scale_floor, 1e-6 * std::abs(base));

  for (auto& [name, set] : sets) set->zero_grads();
  loss_gradients();

  std::size_t total = 0;
  for (auto& [name, set] : sets) total += set->parameter_count();
  const bool exhaustive = total <= options.exhaustive_limit;

  Rng rng(options.sample_seed);
  CheckReport report;
  report.tolerance = options.tolerance;
  double err_sum = 0.0;
  std::size_t err_count = 0;

  for (auto& [set_name, set] : sets) {
    for (const std::string& path : set->paths()) {
      Tensor& param = set->param(path);
      const Tensor& analytic = set->grad(path);
      CheckBlockReport block;
      block.name = set_name + "." + path;

      std::vector<std::size_t> coords;
      if (exhaustive || param.size() <= options.sampled_per_tensor) {
        coords.resize(param.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
      } else {
        coords.reserve(options.sampled_per_tensor);
        for (std::size_t i = 0; i < options.sampled_per_tensor; ++i) {
          coords.push_back(rng.uniform_index(param.size()));
        }
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
      }

      double block_sum = 0.0;
      for (std::size_t i : coords) {
        const double saved = param[i];
        param[i] = saved + options.step;
        const double plus = loss_value();
        param[i] = saved - options.step;
        const double minus = loss_value();
        param[i] = saved;
        const double numeric = (plus - minus) / (2.0 * options.step);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        const double rel = std::abs(a - numeric) / denom;
        block_sum += rel;
        if (rel > block.max_rel_error) {
          block.max_rel_error = rel;
          block.worst_coordinate = i;
          block.worst_analytic = a;
          block.worst_numeric = numeric;
        }
      }
      block.checked = coords.size();
      block.mean_rel_error = coords.empty() ? 0.0 : block_sum / coords.size();
      err_sum += block_sum;
      err_count += coords.size();

      if (block.max_rel_error > report.max_rel_error) {
        report.max_rel_error = block.max_rel_error;
        report.worst_block = block.name;
        report.worst_coordinate = block.worst_coordinate;
      }
      report.blocks.push_back(std::move(block));
    }
  }

  report.mean_rel_error = err_count ? err_sum / err_count : 0.0;
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace mmfa
