#include "mmfa/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mmfa {

AdamOptimizer::AdamOptimizer(std::vector<ParameterSet*> sets, AdamHyper hyper)
    : sets_(std::move(sets)), hyper_(hyper) {
  moments_.resize(sets_.size());
  for (std::size_t s = 0; s < sets_.size(); ++s) {
    for (const std::string& path : sets_[s]->paths()) {
      Moments m;
      m.first = Tensor::zeros_like(sets_[s]->param(path));
      m.second = Tensor::zeros_like(sets_[s]->param(path));
      moments_[s].push_back(std::move(m));
    }
  }
}

void AdamOptimizer::step(double learning_rate) {
  if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  steps_ += 1;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(steps_));
  for (std::size_t s = 0; s < sets_.size(); ++s) {
    ParameterSet& set = *sets_[s];
    const auto& paths = set.paths();
    for (std::size_t p = 0; p < paths.size(); ++p) {
      Tensor& param = set.param(paths[p]);
      const Tensor& grad = set.grad(paths[p]);
      Moments& m = moments_[s][p];
      for (std::size_t i = 0; i < param.size(); ++i) {
        m.first[i] = hyper_.beta1 * m.first[i] + (1.0 - hyper_.beta1) * grad[i];
        m.second[i] = hyper_.beta2 * m.second[i] + (1.0 - hyper_.beta2) * grad[i] * grad[i];
        const double mhat = m.first[i] / bc1;
        const double vhat = m.second[i] / bc2;
        param[i] -= learning_rate * mhat / (std::sqrt(vhat) + hyper_.epsilon);
      }
    }
  }
}

}  // namespace mmfa
