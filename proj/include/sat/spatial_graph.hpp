#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sat {

/// Axis-aligned box in image pixels, y growing downward.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  /// True when `other` lies within this box (edges may touch).
  bool contains(const BoundingBox& other) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws IngestError for zero-area boxes or boxes outside the image.
void validate_box(const BoundingBox& box, double image_width,
                  double image_height);

double intersection_area(const BoundingBox& a, const BoundingBox& b);
double iou(const BoundingBox& a, const BoundingBox& b);

/// The twelve spatial relation types, followed by the two non-spatial
/// markers. The numeric order is the one heads are assigned over.
enum class Relation : std::uint8_t {
  kSelf = 0,
  kContains,
  kInside,
  kOverlap,
  kDir1,
  kDir2,
  kDir3,
  kDir4,
  kDir5,
  kDir6,
  kDir7,
  kDir8,
  kNoEdge,
  kImplicit,
};

inline constexpr std::size_t kNumSpatialRelations = 12;

constexpr std::size_t index_of(Relation r) { return static_cast<std::size_t>(r); }
constexpr bool is_spatial(Relation r) { return index_of(r) < kNumSpatialRelations; }
Relation spatial_relation(std::size_t index);
Relation direction(int k);  // k in 1..8

Relation inverse(Relation r);
std::string_view relation_name(Relation r);
std::optional<Relation> parse_relation(std::string_view name);

struct ClassifierConfig {
  double overlap_iou = 0.5;
  // An edge exists only when centroids are within this fraction of the
  // image diagonal.
  double max_distance_fraction = 0.5;
};

/// Type of the edge a -> b. Rules in priority order: containment, IoU
/// overlap, no edge beyond the distance limit, then the direction bin of b's
/// centroid as seen from a's. Identical boxes and coincident centroids that
/// reach the direction rule count as overlap.
Relation classify_pair(const BoundingBox& a, const BoundingBox& b,
                       double image_diagonal,
                       const ClassifierConfig& config = {});

/// N x N typed relation matrix; entry (i, j) is the type of edge i -> j.
class SpatialGraph {
 public:
  SpatialGraph() = default;
  explicit SpatialGraph(std::size_t n);
  SpatialGraph(std::size_t n, std::vector<Relation> relations);

  std::size_t size() const { return n_; }
  Relation at(std::size_t i, std::size_t j) const { return rel_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, Relation r) { rel_[i * n_ + j] = r; }
  const std::vector<Relation>& relations() const { return rel_; }

  /// True when the diagonal is self and every pair satisfies
  /// at(j, i) == inverse(at(i, j)).
  bool is_consistent() const;

  /// One n*n 0/1 plane per spatial relation type.
  std::array<std::vector<std::uint8_t>, kNumSpatialRelations> adjacency_stack()
      const;
  static SpatialGraph from_adjacency_stack(
      std::size_t n,
      const std::array<std::vector<std::uint8_t>, kNumSpatialRelations>& stack);

  /// Applies a node permutation: new node k is old node order[k].
  SpatialGraph permuted(const std::vector<std::size_t>& order) const;

  friend bool operator==(const SpatialGraph&, const SpatialGraph&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<Relation> rel_;
};

SpatialGraph build_graph(const std::vector<BoundingBox>& boxes,
                         double image_width, double image_height,
                         const ClassifierConfig& config = {});

/// Replaces every edge type by its inverse.
SpatialGraph reverse_graph(const SpatialGraph& g);

/// Each unordered pair gets a type drawn uniformly from the eleven non-self
/// spatial types plus no-edge; the reverse entry gets the inverse.
SpatialGraph randomize_graph(std::size_t n, std::uint64_t seed);

/// Fills every off-diagonal pair with `r` (which must be self-inverse).
SpatialGraph complete_graph(std::size_t n, Relation r);

/// {"n", "relations": [[names]], "adjacency": {type: [[0/1]]}}
nlohmann::json graph_to_json(const SpatialGraph& g);

}  // namespace sat
