#include <cmath>

#include "doctest.h"
#include "sat/ops.hpp"
#include "sat/toy.hpp"
#include "sat/training.hpp"

using namespace sat;

TEST_CASE("schedule: warmup ramp and staircase decay") {
  const ScheduleConfig s;
  CHECK(learning_rate(s, 0) == doctest::Approx(0.2e-4));
  CHECK(learning_rate(s, 500) == doctest::Approx(0.6e-4));
  CHECK(learning_rate(s, 1000) == doctest::Approx(1e-4));
  CHECK(learning_rate(s, 13999) == doctest::Approx(1e-4));
  CHECK(learning_rate(s, 14000) == doctest::Approx(1e-5));
  CHECK(learning_rate(s, 19000) == doctest::Approx(1e-6));
  for (long it = 1; it < 1000; ++it) {
    CHECK(learning_rate(s, it) > learning_rate(s, it - 1));
  }
}

TEST_CASE("decoding loss equals BCE on the forward scores with teacher forcing") {
  const ModelConfig cfg = gradcheck_config();
  const Model model(cfg);
  TrainingExample ex = random_example(cfg, 2, 2, 3, 3, 7);
  ex.targets.steps = {{2, 7}, {}, {cfg.end_id()}};
  const std::size_t classes = cfg.vocab_size + 3;
  const Tensor scores = model.forward(ex.batch, ex.graph, {2, cfg.end_id()});
  double expected = 0.0;
  auto term = [](double x, double y) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
  };
  for (std::size_t t : {0, 2}) {
    for (std::size_t c = 0; c < classes; ++c) {
      const bool on = std::find(ex.targets.steps[t].begin(), ex.targets.steps[t].end(), c) !=
                      ex.targets.steps[t].end();
      expected += term(scores.at(t, c), on ? 1.0 : 0.0);
    }
  }
  expected /= 2.0;
  CHECK(decoding_loss(model, ex).item() == doctest::Approx(expected).epsilon(1e-12));

  ex.targets.steps = {{classes}};
  CHECK_THROWS_AS(decoding_loss(model, ex), std::out_of_range);
  ex.targets.steps = {{}, {}};
  CHECK(decoding_loss(model, ex).item() == 0.0);
}

TEST_CASE("training drives the loss down on a fixed batch") {
  ModelConfig cfg = gradcheck_config();
  cfg.init_std = 0.05;
  Model model(cfg);
  std::vector<TrainingExample> data;
  for (std::uint64_t s = 0; s < 4; ++s) data.push_back(random_example(cfg, 2, 2, 3, 2, s));
  ScheduleConfig sched;
  sched.base_lr = 3e-3;
  sched.warmup_iterations = 10;
  sched.decay_steps = {};
  Trainer trainer(model, sched, 1);
  const double first = trainer.train_step(data);
  double last = first;
  for (int i = 0; i < 150; ++i) last = trainer.train_step(data);
  CHECK(trainer.iteration() == 151);
  CHECK(last < 0.25 * first);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    ModelConfig cfg = gradcheck_config();
    cfg.dropout = 0.1;
    Model model(cfg);
    std::vector<TrainingExample> data = {random_example(cfg, 2, 2, 3, 2, 1)};
    Trainer trainer(model, ScheduleConfig{}, 5);
    for (int i = 0; i < 5; ++i) trainer.train_step(data);
    return model.find("output.vocab_w")->tensor.clone();
  };
  const Tensor a = run();
  const Tensor b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
