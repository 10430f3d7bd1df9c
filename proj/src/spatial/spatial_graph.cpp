#include "sat/spatial_graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sat {

namespace {

constexpr std::array<std::string_view, 14> kNames = {
    "self",  "contains", "inside", "overlap", "dir-1",   "dir-2",   "dir-3",
    "dir-4", "dir-5",    "dir-6",  "dir-7",   "dir-8",   "no-edge", "implicit"};

// Octant of (dx, dy) measured clockwise from +x in image coordinates, using
// exact comparisons so that negating both components always lands four bins
// away. Lower bin edge inclusive.
int octant(double dx, double dy) {
  if (dx > 0.0 && dy >= 0.0) return dy < dx ? 1 : 2;
  if (dx <= 0.0 && dy > 0.0) return -dx < dy ? 3 : 4;
  if (dx < 0.0 && dy <= 0.0) return -dy < -dx ? 5 : 6;
  return dx < -dy ? 7 : 8;  // dx >= 0, dy < 0
}

}  // namespace

bool BoundingBox::contains(const BoundingBox& o) const {
  return x_min <= o.x_min && y_min <= o.y_min && x_max >= o.x_max &&
         y_max >= o.y_max;
}

void validate_box(const BoundingBox& b, double w, double h) {
  if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
    throw IngestError("degenerate box [" + std::to_string(b.x_min) + ", " +
                      std::to_string(b.y_min) + ", " + std::to_string(b.x_max) +
                      ", " + std::to_string(b.y_max) + "]");
  }
  if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h) {
    throw IngestError("box outside the " + std::to_string(w) + "x" +
                      std::to_string(h) + " image");
  }
}

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Relation spatial_relation(std::size_t index) {
  if (index >= kNumSpatialRelations) {
    throw std::out_of_range("spatial relation index " + std::to_string(index));
  }
  return static_cast<Relation>(index);
}

Relation direction(int k) {
  if (k < 1 || k > 8) throw std::out_of_range("direction bin " + std::to_string(k));
  return static_cast<Relation>(index_of(Relation::kDir1) + static_cast<std::size_t>(k - 1));
}

Relation inverse(Relation r) {
  switch (r) {
    case Relation::kContains:
      return Relation::kInside;
    case Relation::kInside:
      return Relation::kContains;
    case Relation::kSelf:
    case Relation::kOverlap:
    case Relation::kNoEdge:
    case Relation::kImplicit:
      return r;
    default: {
      const int k = static_cast<int>(index_of(r) - index_of(Relation::kDir1)) + 1;
      return direction((k + 3) % 8 + 1);
    }
  }
}

std::string_view relation_name(Relation r) { return kNames[index_of(r)]; }

std::optional<Relation> parse_relation(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Relation>(i);
  }
  return std::nullopt;
}

Relation classify_pair(const BoundingBox& a, const BoundingBox& b,
                       double image_diagonal, const ClassifierConfig& config) {
  if (a.contains(b)) return b.contains(a) ? Relation::kOverlap : Relation::kContains;
  if (b.contains(a)) return Relation::kInside;
  if (iou(a, b) >= config.overlap_iou) return Relation::kOverlap;
  const double dx = b.center_x() - a.center_x();
  const double dy = b.center_y() - a.center_y();
  if (std::hypot(dx, dy) > config.max_distance_fraction * image_diagonal) {
    return Relation::kNoEdge;
  }
  if (dx == 0.0 && dy == 0.0) return Relation::kOverlap;
  return direction(octant(dx, dy));
}

SpatialGraph::SpatialGraph(std::size_t n)
    : n_(n), rel_(n * n, Relation::kNoEdge) {
  for (std::size_t i = 0; i < n; ++i) rel_[i * n + i] = Relation::kSelf;
}

SpatialGraph::SpatialGraph(std::size_t n, std::vector<Relation> relations)
    : n_(n), rel_(std::move(relations)) {
  if (rel_.size() != n * n) {
    throw std::invalid_argument("relation matrix has " +
                                std::to_string(rel_.size()) + " entries, need " +
                                std::to_string(n * n));
  }
}

bool SpatialGraph::is_consistent() const {
  for (std::size_t i = 0; i < n_; ++i) {
    if (at(i, i) != Relation::kSelf) return false;
    for (std::size_t j = i + 1; j < n_; ++j) {
      if (at(j, i) != inverse(at(i, j))) return false;
      if (at(i, j) == Relation::kImplicit) return false;
    }
  }
  return true;
}

std::array<std::vector<std::uint8_t>, kNumSpatialRelations>
SpatialGraph::adjacency_stack() const {
  std::array<std::vector<std::uint8_t>, kNumSpatialRelations> stack;
  for (auto& plane : stack) plane.assign(n_ * n_, 0);
  for (std::size_t e = 0; e < rel_.size(); ++e) {
    if (is_spatial(rel_[e])) stack[index_of(rel_[e])][e] = 1;
  }
  return stack;
}

SpatialGraph SpatialGraph::from_adjacency_stack(
    std::size_t n,
    const std::array<std::vector<std::uint8_t>, kNumSpatialRelations>& stack) {
  std::vector<Relation> rel(n * n, Relation::kNoEdge);
  for (std::size_t t = 0; t < kNumSpatialRelations; ++t) {
    if (stack[t].size() != n * n) {
      throw std::invalid_argument("adjacency plane has wrong size");
    }
    for (std::size_t e = 0; e < n * n; ++e) {
      if (!stack[t][e]) continue;
      if (rel[e] != Relation::kNoEdge) {
        throw std::invalid_argument("two relation types on one ordered pair");
      }
      rel[e] = spatial_relation(t);
    }
  }
  return SpatialGraph(n, std::move(rel));
}

SpatialGraph SpatialGraph::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != n_) throw std::invalid_argument("permutation size mismatch");
  SpatialGraph g(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) g.set(i, j, at(order[i], order[j]));
  }
  return g;
}

SpatialGraph build_graph(const std::vector<BoundingBox>& boxes,
                         double image_width, double image_height,
                         const ClassifierConfig& config) {
  const std::size_t n = boxes.size();
  const double diag = std::hypot(image_width, image_height);
  for (const auto& b : boxes) validate_box(b, image_width, image_height);
  SpatialGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) g.set(i, j, classify_pair(boxes[i], boxes[j], diag, config));
    }
  }
  return g;
}

SpatialGraph reverse_graph(const SpatialGraph& g) {
  std::vector<Relation> rel = g.relations();
  for (auto& r : rel) r = inverse(r);
  return SpatialGraph(g.size(), std::move(rel));
}

SpatialGraph randomize_graph(std::size_t n, std::uint64_t seed) {
  // Choices 0..10 are the non-self spatial types, 11 is no-edge.
  constexpr std::uint64_t kChoices = kNumSpatialRelations;
  std::mt19937_64 rng(seed);
  SpatialGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Rejection keeps the draw exactly uniform.
      std::uint64_t v = 0;
      const std::uint64_t limit = rng.max() - rng.max() % kChoices;
      do {
        v = rng();
      } while (v >= limit);
      v %= kChoices;
      const Relation r =
          v + 1 < kChoices ? spatial_relation(v + 1) : Relation::kNoEdge;
      g.set(i, j, r);
      g.set(j, i, inverse(r));
    }
  }
  return g;
}

SpatialGraph complete_graph(std::size_t n, Relation r) {
  if (inverse(r) != r || r == Relation::kNoEdge || r == Relation::kImplicit) {
    throw std::invalid_argument("complete_graph needs a self-inverse spatial type");
  }
  SpatialGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) g.set(i, j, r);
    }
  }
  return g;
}

nlohmann::json graph_to_json(const SpatialGraph& g) {
  const std::size_t n = g.size();
  nlohmann::json rel = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < n; ++j) row.push_back(relation_name(g.at(i, j)));
    rel.push_back(std::move(row));
  }
  nlohmann::json planes = nlohmann::json::object();
  const auto stack = g.adjacency_stack();
  for (std::size_t t = 0; t < kNumSpatialRelations; ++t) {
    nlohmann::json plane = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < n; ++j) row.push_back(int{stack[t][i * n + j]});
      plane.push_back(std::move(row));
    }
    planes[std::string(relation_name(spatial_relation(t)))] = std::move(plane);
  }
  return {{"n", n}, {"relations", std::move(rel)}, {"adjacency", std::move(planes)}};
}

}  // namespace sat
