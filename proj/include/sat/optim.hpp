#pragma once

#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

/// A trainable tensor plus its Adam moments.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor tensor;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Global L2 norm of all gradients, before any clipping.
double grad_norm(const std::vector<Parameter*>& params);

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm measured before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

/// Clips to `clip_norm` (skipped when <= 0), then applies one Adam update.
/// Parameters whose gradient is entirely zero are left untouched.
void adam_step(const std::vector<Parameter*>& params, double lr,
               double clip_norm, const AdamOptions& opts = {});

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace sat
