#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sat/model.hpp"

namespace sat {

struct DecodeResult {
  std::vector<std::size_t> tokens;  // joint ids, end token excluded
  bool finished = false;            // stopped on the end token
  double log_prob = 0.0;            // summed log-probabilities, end included
};

/// Log-probabilities over the next token given the tokens emitted so far.
using StepScorer =
    std::function<std::vector<double>(const std::vector<std::size_t>& prefix)>;

/// Argmax at each step, ties to the lowest id; stops on `end_id`.
DecodeResult greedy_search(const StepScorer& scorer, std::size_t max_steps,
                           std::size_t end_id);

/// Length-wise beam search on summed log-probabilities. Each step keeps the
/// `beam` best extensions overall; extensions ending in `end_id` retire.
/// Returns the best retired hypothesis, or the best live one at the limit.
DecodeResult beam_search(const StepScorer& scorer, std::size_t beam,
                         std::size_t max_steps, std::size_t end_id);

/// Scorer that reruns the model on the emitted prefix and log-softmaxes the
/// joint vocab + copy scores of the next step.
StepScorer model_scorer(const Model& model, const TokenBatch& batch,
                        const SpatialGraph& graph);

DecodeResult decode_greedy(const Model& model, const TokenBatch& batch,
                           const SpatialGraph& graph);
DecodeResult decode_beam(const Model& model, const TokenBatch& batch,
                         const SpatialGraph& graph, std::size_t beam);

/// Tracks an incremental greedy decode one step at a time.
DecodeState advance(const Model& model, const TokenBatch& batch,
                    const SpatialGraph& graph, DecodeState state);

}  // namespace sat
