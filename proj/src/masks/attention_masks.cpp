#include "sat/attention_masks.hpp"

#include <algorithm>

#include "sat/ops.hpp"

namespace sat {

namespace {

std::size_t slot_of(Relation r) {
  if (r == Relation::kImplicit) return HeadAssignment::kImplicitSlot;
  if (!is_spatial(r)) {
    throw ConfigError("relation '" + std::string(relation_name(r)) +
                      "' cannot be owned by a head");
  }
  return index_of(r);
}

}  // namespace

HeadAssignment::HeadAssignment(std::vector<std::vector<Relation>> sets,
                               std::size_t context)
    : context_(context) {
  if (sets.empty()) throw ConfigError("head assignment needs at least one head");
  for (const auto& set : sets) {
    std::vector<bool> owned(kSlots, false);
    for (Relation r : set) owned[slot_of(r)] = true;
    if (!owned[kImplicitSlot]) {
      throw ConfigError("every head must own the implicit question edge");
    }
    owned_.push_back(std::move(owned));
  }
}

bool HeadAssignment::owns(std::size_t head, Relation r) const {
  if (r == Relation::kNoEdge) return false;
  return owned_.at(head)[slot_of(r)];
}

std::vector<Relation> HeadAssignment::relations(std::size_t head) const {
  std::vector<Relation> out;
  for (std::size_t s = 0; s < kNumSpatialRelations; ++s) {
    if (owned_.at(head)[s]) out.push_back(spatial_relation(s));
  }
  out.push_back(Relation::kImplicit);
  return out;
}

std::vector<Relation> HeadAssignment::unowned() const {
  std::vector<Relation> out;
  for (std::size_t s = 0; s < kNumSpatialRelations; ++s) {
    const bool any = std::any_of(owned_.begin(), owned_.end(),
                                 [s](const auto& o) { return o[s]; });
    if (!any) out.push_back(spatial_relation(s));
  }
  return out;
}

HeadAssignment assign_head_relations(std::size_t heads, std::size_t context) {
  if (heads < 1) throw ConfigError("head count must be >= 1");
  if (context < 1 || context > kNumSpatialRelations) {
    throw ConfigError("context size " + std::to_string(context) +
                      " outside [1, 12]");
  }
  std::vector<std::vector<Relation>> sets(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    sets[h].push_back(Relation::kImplicit);
    for (std::size_t m = 0; m < context; ++m) {
      sets[h].push_back(spatial_relation((h + m) % kNumSpatialRelations));
    }
  }
  return HeadAssignment(std::move(sets), context);
}

bool AttentionBias::attends(std::size_t h, std::size_t i, std::size_t j) const {
  return at(h, i, j) != kMasked;
}

std::vector<double> AttentionBias::masked_fraction() const {
  std::vector<double> out(heads, 0.0);
  if (n == 0) return out;
  for (std::size_t h = 0; h < heads; ++h) {
    std::size_t masked = 0;
    for (std::size_t e = 0; e < n * n; ++e) masked += mask[h * n * n + e] == kMasked;
    out[h] = static_cast<double>(masked) / static_cast<double>(n * n);
  }
  return out;
}

AttentionBias build_bias(const SpatialGraph& g, const ModalityLayout& layout,
                         const HeadAssignment& assign, bool spatial_layer) {
  if (g.size() != layout.region_count()) {
    throw LayoutError("graph has " + std::to_string(g.size()) +
                      " nodes but the layout has " +
                      std::to_string(layout.region_count()) +
                      " object/OCR tokens");
  }
  const std::size_t n = layout.total();
  const std::size_t heads = assign.heads();
  const std::size_t x_end = layout.ans_begin();
  const std::size_t r0 = layout.obj_begin();

  AttentionBias bias;
  bias.heads = heads;
  bias.n = n;
  bias.mask.assign(heads * n * n, kMasked);
  bias.relation_slot.assign(heads * n * n, -1);

  for (std::size_t h = 0; h < heads; ++h) {
    double* m = bias.mask.data() + h * n * n;
    int* slot = bias.relation_slot.data() + h * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= x_end) {
        // Answer step t sees every input token and answers up to t.
        for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 0.0;
        continue;
      }
      if (!spatial_layer) {
        for (std::size_t j = 0; j < x_end; ++j) m[i * n + j] = 0.0;
        continue;
      }
      if (i < r0) continue;  // question rows pass through
      for (std::size_t j = 0; j < r0; ++j) {
        m[i * n + j] = 0.0;
        slot[i * n + j] = static_cast<int>(HeadAssignment::kImplicitSlot);
      }
      for (std::size_t j = r0; j < x_end; ++j) {
        const Relation r = g.at(i - r0, j - r0);
        if (assign.owns(h, r)) {
          m[i * n + j] = 0.0;
          slot[i * n + j] = static_cast<int>(index_of(r));
        }
      }
    }
  }
  return bias;
}

AttentionBias build_dense_bias(const ModalityLayout& layout, std::size_t heads) {
  return build_bias(SpatialGraph(layout.region_count()), layout,
                    HeadAssignment(std::vector<std::vector<Relation>>(
                        heads, {Relation::kImplicit})),
                    false);
}

nlohmann::json bias_to_json(const AttentionBias& bias,
                            const std::vector<double>* beta) {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t h = 0; h < bias.heads; ++h) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < bias.n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < bias.n; ++j) {
        const bool on = bias.attends(h, i, j);
        if (beta == nullptr) {
          row.push_back(on ? 1 : 0);
        } else if (!on) {
          row.push_back(nullptr);
        } else {
          const int s = bias.relation_slot[(h * bias.n + i) * bias.n + j];
          row.push_back(s < 0 ? 0.0
                              : (*beta)[h * HeadAssignment::kSlots +
                                        static_cast<std::size_t>(s)]);
        }
      }
      rows.push_back(std::move(row));
    }
    heads.push_back(std::move(rows));
  }
  return {{"heads", bias.heads}, {"n", bias.n}, {"masks", std::move(heads)}};
}

}  // namespace sat
