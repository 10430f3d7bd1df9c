#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error, so entries whose true
  // gradient is ~0 are judged on absolute error instead.
  double floor = 1e-4;
};

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  GradCheckEntry worst;
  double max_rel_error() const { return worst.rel_error; }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares analytic gradients of `loss_fn` against central differences for
/// every entry of every listed leaf. The leaves' existing gradients are
/// cleared first and hold the analytic gradient on return.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                std::vector<NamedTensor> leaves,
                                const GradCheckOptions& opts = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace sat
