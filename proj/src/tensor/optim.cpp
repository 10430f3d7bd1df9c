#include "sat/optim.hpp"

#include <algorithm>
#include <cmath>

namespace sat {

Parameter::Parameter(std::string name_, Tensor value)
    : name(std::move(name_)), tensor(std::move(value)) {
  tensor.set_requires_grad(true);
  first_moment.assign(tensor.numel(), 0.0);
  second_moment.assign(tensor.numel(), 0.0);
}

double grad_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->tensor.has_grad()) continue;
    for (double g : p->tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* p : params) {
      if (!p->tensor.has_grad()) continue;
      for (double& g : p->tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void adam_step(const std::vector<Parameter*>& params, double lr,
               double clip_norm, const AdamOptions& opts) {
  clip_grad_norm(params, clip_norm);
  for (auto* p : params) {
    if (!p->tensor.has_grad()) continue;
    auto grad = p->tensor.mutable_grad();
    if (std::all_of(grad.begin(), grad.end(), [](double g) { return g == 0.0; })) {
      continue;
    }
    ++p->step;
    const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(p->step));
    auto values = p->tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] + opts.weight_decay * values[i];
      p->first_moment[i] = opts.beta1 * p->first_moment[i] + (1.0 - opts.beta1) * g;
      p->second_moment[i] =
          opts.beta2 * p->second_moment[i] + (1.0 - opts.beta2) * g * g;
      const double m_hat = p->first_moment[i] / bc1;
      const double v_hat = p->second_moment[i] / bc2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

}  // namespace sat
