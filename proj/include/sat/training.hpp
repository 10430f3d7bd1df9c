#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sat/model.hpp"

namespace sat {

/// Per decoding step, the set of acceptable joint ids. An empty set masks
/// the step out of the loss.
struct AnswerTargets {
  std::vector<std::vector<std::size_t>> steps;
};

struct TrainingExample {
  TokenBatch batch;
  SpatialGraph graph;
  AnswerTargets targets;
};

/// Learning-rate schedule: linear warmup from `warmup_factor * base_lr`,
/// then a staircase decay by `decay` at each listed iteration.
struct ScheduleConfig {
  double base_lr = 1e-4;
  double warmup_factor = 0.2;
  long warmup_iterations = 1000;
  double decay = 0.1;
  std::vector<long> decay_steps = {14000, 19000};
  double clip_norm = 0.25;
};

double learning_rate(const ScheduleConfig& schedule, long iteration);

/// Teacher-forced multi-label BCE over the target steps. The token fed back
/// after each step is the lowest id in its target set.
Tensor decoding_loss(const Model& model, const TrainingExample& example,
                     const ForwardOptions& opts = {});

class Trainer {
 public:
  Trainer(Model& model, ScheduleConfig schedule, std::uint64_t seed = 0);

  /// Averages the loss over `examples`, backpropagates, clips and applies
  /// one Adam update. Returns the mean loss.
  double train_step(std::span<const TrainingExample> examples);

  long iteration() const { return iteration_; }
  const ScheduleConfig& schedule() const { return schedule_; }

 private:
  Model& model_;
  ScheduleConfig schedule_;
  std::mt19937_64 rng_;
  long iteration_ = 0;
};

}  // namespace sat
