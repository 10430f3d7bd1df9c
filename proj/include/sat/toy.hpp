#pragma once

#include <cstdint>

#include "sat/gradcheck.hpp"
#include "sat/model.hpp"
#include "sat/training.hpp"

namespace sat {

/// Random inputs sized for a config: uniform features, random boxes on a
/// 100 x 100 image with their classified graph, and random multi-label
/// targets for `steps` decoding steps.
TrainingExample random_example(const ModelConfig& cfg, std::size_t n_ques,
                               std::size_t n_obj, std::size_t n_ocr, std::size_t steps,
                               std::uint64_t seed);

/// Small 1N->1S model with d_model 16 and 4 heads of 3 relations each.
ModelConfig gradcheck_config();

/// Checks every parameter of a model built from `cfg` against central
/// differences of the decoding loss on a random 10-token, 3-step example.
GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                const GradCheckOptions& opts = {});

}  // namespace sat
