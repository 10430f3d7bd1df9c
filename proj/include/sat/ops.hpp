#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

/// Bias sentinel for a forbidden attention entry.
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

/// Matrix product over the last two axes. `b` may be rank 2 (shared across
/// the leading axes of `a`) or carry the same leading axes as `a`.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Adds a vector of length `x.shape().back()` to every row of `x`.
Tensor add_row(const Tensor& x, const Tensor& row);

/// Gaussian error linear unit, erf form.
Tensor gelu(const Tensor& x);

/// Row-wise softmax of `logits + bias` over the last axis. Entries whose bias
/// is kMasked get weight 0; a row with every entry masked is all zeros.
Tensor masked_softmax(const Tensor& logits, const Tensor& bias);

/// Normalizes each row over the last axis, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps);

/// Gathers rows of a [V, d] table.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

/// Concatenates rank-2 tensors along axis 0.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Concatenates two rank-2 tensors with equal row counts along axis 1.
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);

/// [N, H*dh] -> [H, N, dh] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Multi-label binary cross-entropy on logits [T, C]. `targets` holds 0/1
/// per entry and `step_mask` 0/1 per row; the masked sum is divided by the
/// number of active rows (at least 1).
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> step_mask);

/// Inverted dropout. Identity when `p` is 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

/// Builds a [H, N, N] additive bias: `mask` entries, plus `beta[h, type]`
/// wherever the mask is finite and `type_index` is non-negative.
Tensor relation_bias(const Tensor& beta, std::span<const double> mask,
                     std::span<const int> type_index, std::size_t heads,
                     std::size_t n);

/// Non-recording numerically stable log-softmax of a vector.
std::vector<double> log_softmax(std::span<const double> scores);

}  // namespace sat
