#ifndef MMFA_OPTIMIZER_HPP_
#define MMFA_OPTIMIZER_HPP_

#include <cstdint>
#include <vector>

#include "mmfa/layers.hpp"

namespace mmfa {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over one or more parameter sets. Applies the
/// gradients currently stored in the sets' grad slots; moments are kept per
/// parameter with bias correction by the shared step counter.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<ParameterSet*> sets, AdamHyper hyper = AdamHyper());

  void step(double learning_rate);
  std::uint64_t step_count() const { return steps_; }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };
  std::vector<ParameterSet*> sets_;
  std::vector<std::vector<Moments>> moments_;  // aligned with each set's paths()
  AdamHyper hyper_;
  std::uint64_t steps_ = 0;
};

}  // namespace mmfa

#endif  // MMFA_OPTIMIZER_HPP_
