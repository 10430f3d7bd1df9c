#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "sat/spatial_graph.hpp"
#include "sat/tensor.hpp"

namespace sat {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token counts per segment, laid out contiguously as
/// question | object | OCR | answer.
struct ModalityLayout {
  std::size_t n_ques = 0;
  std::size_t n_obj = 0;
  std::size_t n_ocr = 0;
  std::size_t n_ans = 0;

  std::size_t total() const { return n_ques + n_obj + n_ocr + n_ans; }
  std::size_t input_size() const { return n_ques + n_obj + n_ocr; }
  std::size_t obj_begin() const { return n_ques; }
  std::size_t ocr_begin() const { return n_ques + n_obj; }
  std::size_t ans_begin() const { return n_ques + n_obj + n_ocr; }
  std::size_t region_count() const { return n_obj + n_ocr; }

  friend bool operator==(const ModalityLayout&, const ModalityLayout&) = default;
};

/// Relation types each attention head may attend through.
class HeadAssignment {
 public:
  /// Slot index of the implicit question edge within a head's set.
  static constexpr std::size_t kImplicitSlot = kNumSpatialRelations;
  static constexpr std::size_t kSlots = kNumSpatialRelations + 1;

  /// Explicit per-head sets; each set must include the implicit relation.
  explicit HeadAssignment(std::vector<std::vector<Relation>> sets,
                          std::size_t context = 0);

  std::size_t heads() const { return owned_.size(); }
  std::size_t context() const { return context_; }
  bool owns(std::size_t head, Relation r) const;
  std::vector<Relation> relations(std::size_t head) const;

  /// Spatial types no head owns.
  std::vector<Relation> unowned() const;
  bool covers_all() const { return unowned().empty(); }

 private:
  std::vector<std::vector<bool>> owned_;
  std::size_t context_ = 0;
};

/// Head h gets the implicit edge plus the c consecutive spatial types
/// starting at h mod 12.
HeadAssignment assign_head_relations(std::size_t heads, std::size_t context);

/// Per-head N x N additive bias with entries 0 or kMasked, plus the relation
/// slot governing each attended entry (-1 where no relation applies) so an
/// optional learned per-relation offset can be added on top.
struct AttentionBias {
  std::size_t heads = 0;
  std::size_t n = 0;
  std::vector<double> mask;       // heads * n * n
  std::vector<int> relation_slot;  // heads * n * n

  double at(std::size_t h, std::size_t i, std::size_t j) const {
    return mask[(h * n + i) * n + j];
  }
  bool attends(std::size_t h, std::size_t i, std::size_t j) const;

  /// Fraction of masked entries per head.
  std::vector<double> masked_fraction() const;
};

/// Bias for one layer. Spatial layers: region rows see every question
/// column and the region columns whose relation the head owns; question
/// rows are fully masked. Normal layers: the input block is dense. In both
/// kinds no input row sees an answer column and answer rows are causal.
AttentionBias build_bias(const SpatialGraph& g, const ModalityLayout& layout,
                         const HeadAssignment& assign, bool spatial_layer);

/// Bias for a normal layer, which needs no graph.
AttentionBias build_dense_bias(const ModalityLayout& layout, std::size_t heads);

/// Per-head 0/1 matrices (1 = attended). When `beta` ([heads x 13] row-major)
/// is given, attended entries carry their beta value and masked ones null.
nlohmann::json bias_to_json(const AttentionBias& bias,
                            const std::vector<double>* beta = nullptr);

/// Keeps the k largest weights of each row (ties to the lower index), zeroes
/// the rest and renormalizes. Rows with at most k nonzero entries pass
/// through unchanged. Differentiable with the selection held fixed.
Tensor top_k_filter(const Tensor& weights, std::size_t k);

}  // namespace sat
