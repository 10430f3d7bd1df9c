#include "sat/training.hpp"

#include <algorithm>
#include <stdexcept>

#include "sat/ops.hpp"

namespace sat {

double learning_rate(const ScheduleConfig& s, long iteration) {
  double factor = 1.0;
  if (iteration < s.warmup_iterations) {
    const double alpha =
        static_cast<double>(iteration) / static_cast<double>(s.warmup_iterations);
    factor = s.warmup_factor * (1.0 - alpha) + alpha;
  }
  for (long step : s.decay_steps) {
    if (iteration >= step) factor *= s.decay;
  }
  return s.base_lr * factor;
}

Tensor decoding_loss(const Model& model, const TrainingExample& ex,
                     const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config();
  const auto& steps = ex.targets.steps;
  std::size_t used = steps.size();
  while (used > 0 && steps[used - 1].empty()) --used;
  if (used == 0) return Tensor::scalar(0.0);
  if (used > cfg.max_steps) {
    throw std::out_of_range("answer has " + std::to_string(used) +
                            " steps, limit is " + std::to_string(cfg.max_steps));
  }
  const std::size_t classes = cfg.vocab_size + ex.batch.ocr_boxes.size();
  std::vector<std::size_t> prev;
  std::vector<double> targets(used * classes, 0.0);
  std::vector<double> mask(used, 0.0);
  for (std::size_t t = 0; t < used; ++t) {
    for (std::size_t id : steps[t]) {
      if (id >= classes) {
        throw std::out_of_range("target id " + std::to_string(id) + " at step " +
                                std::to_string(t) + " outside " +
                                std::to_string(classes) + " classes");
      }
      targets[t * classes + id] = 1.0;
    }
    mask[t] = steps[t].empty() ? 0.0 : 1.0;
    if (t + 1 < used) {
      prev.push_back(steps[t].empty()
                         ? cfg.end_id()
                         : *std::min_element(steps[t].begin(), steps[t].end()));
    }
  }
  const Tensor scores = model.forward(ex.batch, ex.graph, prev, opts);
  return bce_with_logits(scores, targets, mask);
}

Trainer::Trainer(Model& model, ScheduleConfig schedule, std::uint64_t seed)
    : model_(model), schedule_(std::move(schedule)), rng_(seed) {}

double Trainer::train_step(std::span<const TrainingExample> examples) {
  if (examples.empty()) throw std::invalid_argument("empty training batch");
  auto params = model_.parameters();
  zero_grads(params);
  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng_;
  const double inv = 1.0 / static_cast<double>(examples.size());
  double total = 0.0;
  for (const auto& ex : examples) {
    Tensor loss = decoding_loss(model_, ex, opts);
    total += loss.item();
    backward(scale(loss, inv));
  }
  adam_step(params, learning_rate(schedule_, iteration_), schedule_.clip_norm);
  ++iteration_;
  return total * inv;
}

}  // namespace sat
