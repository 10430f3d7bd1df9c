#include "sat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sat {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                std::vector<NamedTensor> leaves,
                                const GradCheckOptions& opts) {
  for (auto& leaf : leaves) {
    leaf.tensor.set_requires_grad(true);
    leaf.tensor.zero_grad();
  }
  backward(loss_fn());

  GradCheckReport report;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic = leaf.tensor.grad();
    auto values = leaf.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + opts.step;
        plus = loss_fn().item();
        values[i] = saved - opts.step;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double err = relative_error(analytic[i], numeric, opts.floor);
      ++report.checked;
      if (err > report.worst.rel_error || report.checked == 1) {
        report.worst = {leaf.name, i, analytic[i], numeric, err};
      }
    }
  }
  return report;
}

}  // namespace sat
