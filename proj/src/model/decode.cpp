#include "sat/decode.hpp"

#include <algorithm>
#include <numeric>

#include "sat/ops.hpp"

namespace sat {

namespace {

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct Hypothesis {
  std::vector<std::size_t> tokens;
  double score = 0.0;
};

}  // namespace

DecodeResult greedy_search(const StepScorer& scorer, std::size_t max_steps,
                           std::size_t end_id) {
  DecodeResult out;
  for (std::size_t t = 0; t < max_steps; ++t) {
    const std::vector<double> lp = scorer(out.tokens);
    const std::size_t best = argmax(lp);
    out.log_prob += lp[best];
    if (best == end_id) {
      out.finished = true;
      break;
    }
    out.tokens.push_back(best);
  }
  return out;
}

DecodeResult beam_search(const StepScorer& scorer, std::size_t beam,
                         std::size_t max_steps, std::size_t end_id) {
  if (beam < 1) throw ConfigError("beam size must be >= 1");
  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> done;

  struct Candidate {
    std::size_t parent;
    std::size_t token;
    double score;
  };
  for (std::size_t t = 0; t < max_steps && !alive.empty(); ++t) {
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const std::vector<double> lp = scorer(alive[h].tokens);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        cands.push_back({h, v, alive[h].score + lp[v]});
      }
    }
    const std::size_t keep = std::min(beam, cands.size());
    // Stable on (parent, token) so ties resolve like greedy.
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis hyp{alive[cands[c].parent].tokens, cands[c].score};
      if (cands[c].token == end_id) {
        done.push_back(std::move(hyp));
      } else {
        hyp.tokens.push_back(cands[c].token);
        next.push_back(std::move(hyp));
      }
    }
    alive = std::move(next);
  }

  const bool finished = !done.empty();
  const auto& pool = finished ? done : alive;
  const auto best = std::max_element(
      pool.begin(), pool.end(),
      [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
  return {best->tokens, finished, best->score};
}

StepScorer model_scorer(const Model& model, const TokenBatch& batch,
                        const SpatialGraph& graph) {
  return [&model, &batch, &graph](const std::vector<std::size_t>& prefix) {
    NoGradGuard guard;
    const Tensor scores = model.forward(batch, graph, prefix);
    const std::size_t cols = scores.dim(1);
    const auto row = scores.data().subspan(prefix.size() * cols, cols);
    return log_softmax(row);
  };
}

DecodeResult decode_greedy(const Model& model, const TokenBatch& batch,
                           const SpatialGraph& graph) {
  return greedy_search(model_scorer(model, batch, graph), model.config().max_steps,
                       model.config().end_id());
}

DecodeResult decode_beam(const Model& model, const TokenBatch& batch,
                         const SpatialGraph& graph, std::size_t beam) {
  return beam_search(model_scorer(model, batch, graph), beam,
                     model.config().max_steps, model.config().end_id());
}

DecodeState advance(const Model& model, const TokenBatch& batch,
                    const SpatialGraph& graph, DecodeState state) {
  if (state.finished || state.step >= model.config().max_steps) {
    state.finished = true;
    return state;
  }
  const std::vector<double> lp = model_scorer(model, batch, graph)(state.emitted);
  const std::size_t best = argmax(lp);
  ++state.step;
  if (best == model.config().end_id()) {
    state.finished = true;
  } else {
    state.emitted.push_back(best);
    if (state.step >= model.config().max_steps) state.finished = true;
  }
  return state;
}

}  // namespace sat
