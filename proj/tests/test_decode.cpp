#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "sat/decode.hpp"
#include "sat/ops.hpp"
#include "sat/toy.hpp"

using namespace sat;

namespace {

// Log-probabilities drawn from a generator seeded by the prefix, so the
// scorer is a fixed function of the prefix.
StepScorer hashed_scorer(std::size_t vocab, std::uint64_t seed, double spread = 3.0) {
  return [=](const std::vector<std::size_t>& prefix) {
    std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL + 1;
    for (std::size_t t : prefix) h = (h ^ (t + 0x51)) * 0x100000001b3ULL;
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<double> u(-spread, spread);
    std::vector<double> s(vocab);
    for (auto& v : s) v = u(rng);
    return log_softmax(s);
  };
}

struct Best {
  double score = -INFINITY;
  std::vector<std::size_t> tokens;
};

// Enumerates every sequence that ends with `end` within `max_steps` steps.
void enumerate(const StepScorer& scorer, std::size_t vocab, std::size_t end,
               std::size_t max_steps, std::vector<std::size_t>& prefix, double score,
               Best& best) {
  if (prefix.size() >= max_steps) return;
  const auto lp = scorer(prefix);
  for (std::size_t v = 0; v < vocab; ++v) {
    if (v == end) {
      if (score + lp[v] > best.score) best = {score + lp[v], prefix};
      continue;
    }
    prefix.push_back(v);
    enumerate(scorer, vocab, end, max_steps, prefix, score + lp[v], best);
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("greedy follows the argmax and stops on the end token") {
  const StepScorer scorer = [](const std::vector<std::size_t>& prefix) {
    std::vector<double> s = {0.0, 0.0, 0.0};
    s[prefix.size() < 2 ? 1 : 2] = 5.0;
    return log_softmax(s);
  };
  const DecodeResult r = greedy_search(scorer, 5, 2);
  CHECK(r.tokens == std::vector<std::size_t>{1, 1});
  CHECK(r.finished);
  const DecodeResult cut = greedy_search(scorer, 1, 2);
  CHECK(cut.tokens == std::vector<std::size_t>{1});
  CHECK_FALSE(cut.finished);
}

TEST_CASE("beam of one reproduces greedy on random scorers") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const StepScorer s = hashed_scorer(6, seed, 1.0);
    const DecodeResult g = greedy_search(s, 5, 5);
    const DecodeResult b = beam_search(s, 1, 5, 5);
    REQUIRE(g.tokens == b.tokens);
    CHECK(g.log_prob == doctest::Approx(b.log_prob));
  }
}

TEST_CASE("wide beams find the exhaustive optimum") {
  for (std::size_t vocab = 2; vocab <= 4; ++vocab) {
    for (std::size_t steps = 1; steps <= 3; ++steps) {
      for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const StepScorer s = hashed_scorer(vocab, seed);
        Best best;
        std::vector<std::size_t> prefix;
        enumerate(s, vocab, vocab - 1, steps, prefix, 0.0, best);
        const auto width = static_cast<std::size_t>(std::pow(vocab, steps));
        const DecodeResult r = beam_search(s, width, steps, vocab - 1);
        REQUIRE(r.finished);
        CHECK(r.log_prob == doctest::Approx(best.score).epsilon(1e-12));
        CHECK(r.tokens == best.tokens);
      }
    }
  }
}

TEST_CASE("beam search never scores below greedy") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const StepScorer s = hashed_scorer(5, seed);
    const DecodeResult g = greedy_search(s, 3, 4);
    const DecodeResult b = beam_search(s, 25, 3, 4);
    if (g.finished) CHECK(b.log_prob >= g.log_prob - 1e-12);
  }
  CHECK_THROWS_AS(beam_search(hashed_scorer(3, 0), 0, 3, 2), ConfigError);
}

TEST_CASE("model decoding: beam of one equals greedy, and advance steps it") {
  ModelConfig cfg = gradcheck_config();
  cfg.max_steps = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.init_seed = seed;
    cfg.init_std = 1.0;
    const Model model(cfg);
    const TrainingExample ex = random_example(cfg, 2, 2, 4, 1, seed + 100);
    const DecodeResult g = decode_greedy(model, ex.batch, ex.graph);
    const DecodeResult b = decode_beam(model, ex.batch, ex.graph, 1);
    CHECK(g.tokens == b.tokens);
    DecodeState state;
    while (!state.finished) state = advance(model, ex.batch, ex.graph, state);
    CHECK(state.emitted == g.tokens);
  }
}
