#include <random>
#include <set>

#include "doctest.h"
#include "sat/attention_masks.hpp"
#include "sat/gradcheck.hpp"
#include "sat/ops.hpp"

using namespace sat;

namespace {

// 1 question token, object A, OCR B inside A, OCR C to the right of both,
// 2 answer steps. Token order: q, A, B, C, a0, a1.
struct Fixture {
  ModalityLayout layout{1, 1, 2, 2};
  SpatialGraph graph =
      build_graph({{0, 0, 50, 50}, {10, 10, 20, 20}, {70, 20, 80, 30}}, 100, 100);
};

std::vector<std::vector<int>> pattern(const AttentionBias& b, std::size_t h) {
  std::vector<std::vector<int>> out(b.n, std::vector<int>(b.n));
  for (std::size_t i = 0; i < b.n; ++i) {
    for (std::size_t j = 0; j < b.n; ++j) out[i][j] = b.attends(h, i, j) ? 1 : 0;
  }
  return out;
}

}  // namespace

TEST_CASE("fixture graph has the expected relations") {
  const Fixture f;
  CHECK(f.graph.at(0, 1) == Relation::kContains);
  CHECK(f.graph.at(0, 2) == Relation::kDir1);
  CHECK(f.graph.at(1, 2) == Relation::kDir1);
  CHECK(f.graph.at(2, 0) == Relation::kDir5);
}

TEST_CASE("spatial bias matches hand-enumerated masks") {
  const Fixture f;
  const AttentionBias b = build_bias(f.graph, f.layout, assign_head_relations(12, 1), true);
  const std::vector<int> none = {0, 0, 0, 0, 0, 0};
  const std::vector<int> a0 = {1, 1, 1, 1, 1, 0};
  const std::vector<int> a1 = {1, 1, 1, 1, 1, 1};

  // Head 0 owns self: each region sees the question and itself.
  CHECK(pattern(b, 0) == std::vector<std::vector<int>>{none,
                                                         {1, 1, 0, 0, 0, 0},
                                                         {1, 0, 1, 0, 0, 0},
                                                         {1, 0, 0, 1, 0, 0},
                                                         a0,
                                                         a1});
  // Head 1 owns contains: A sees B.
  CHECK(pattern(b, 1) == std::vector<std::vector<int>>{none,
                                                         {1, 0, 1, 0, 0, 0},
                                                         {1, 0, 0, 0, 0, 0},
                                                         {1, 0, 0, 0, 0, 0},
                                                         a0,
                                                         a1});
  // Head 4 owns dir-1: A and B see C.
  CHECK(pattern(b, 4) == std::vector<std::vector<int>>{none,
                                                         {1, 0, 0, 1, 0, 0},
                                                         {1, 0, 0, 1, 0, 0},
                                                         {1, 0, 0, 0, 0, 0},
                                                         a0,
                                                         a1});
  // Head 8 owns dir-5: C sees A and B.
  CHECK(pattern(b, 8) == std::vector<std::vector<int>>{none,
                                                         {1, 0, 0, 0, 0, 0},
                                                         {1, 0, 0, 0, 0, 0},
                                                         {1, 1, 1, 0, 0, 0},
                                                         a0,
                                                         a1});
  CHECK(b.relation_slot[(4 * 6 + 1) * 6 + 3] == static_cast<int>(index_of(Relation::kDir1)));
  CHECK(b.relation_slot[(4 * 6 + 1) * 6 + 0] ==
        static_cast<int>(HeadAssignment::kImplicitSlot));
  CHECK(b.masked_fraction()[4] == doctest::Approx((36.0 - 16.0) / 36.0));
}

TEST_CASE("normal-layer bias is dense over inputs and causal over answers") {
  const Fixture f;
  const AttentionBias b = build_dense_bias(f.layout, 3);
  for (std::size_t h = 0; h < 3; ++h) {
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        const bool expected = i < 4 ? j < 4 : j <= i;
        CHECK(b.attends(h, i, j) == expected);
      }
    }
  }
}

TEST_CASE("bias rejects a graph of the wrong size") {
  const Fixture f;
  const ModalityLayout wrong{1, 2, 2, 1};
  CHECK_THROWS_AS(build_bias(f.graph, wrong, assign_head_relations(12, 1), true),
                  LayoutError);
}

TEST_CASE("head assignment ownership and coverage") {
  const HeadAssignment one = assign_head_relations(12, 1);
  for (std::size_t r = 0; r < kNumSpatialRelations; ++r) {
    int owners = 0;
    for (std::size_t h = 0; h < 12; ++h) owners += one.owns(h, spatial_relation(r));
    CHECK(owners == 1);
  }
  for (std::size_t h = 0; h < 12; ++h) CHECK(one.owns(h, Relation::kImplicit));
  CHECK(one.covers_all());

  const HeadAssignment two = assign_head_relations(12, 2);
  CHECK(two.relations(11) ==
        std::vector<Relation>{Relation::kSelf, Relation::kDir8, Relation::kImplicit});

  const HeadAssignment small = assign_head_relations(4, 1);
  CHECK(small.unowned().size() == 8);
  CHECK(assign_head_relations(4, 3).unowned().size() == 6);
  CHECK(assign_head_relations(6, 2).covers_all() == false);
  CHECK(assign_head_relations(12, 3).covers_all());
  CHECK_FALSE(one.owns(0, Relation::kNoEdge));

  CHECK_THROWS_AS(assign_head_relations(12, 0), ConfigError);
  CHECK_THROWS_AS(assign_head_relations(12, 13), ConfigError);
  CHECK_THROWS_AS(assign_head_relations(0, 1), ConfigError);
  CHECK_THROWS_AS(HeadAssignment({{Relation::kSelf}}), ConfigError);
}

TEST_CASE("with one relation per head, heads see different context") {
  const SpatialGraph g = randomize_graph(30, 5);
  const ModalityLayout layout{2, 10, 20, 1};
  const AttentionBias b = build_bias(g, layout, assign_head_relations(12, 1), true);
  std::set<std::vector<std::vector<int>>> distinct;
  for (std::size_t h = 0; h < 12; ++h) distinct.insert(pattern(b, h));
  CHECK(distinct.size() == 12);
}

TEST_CASE("top-k keeps at most k weights per row and renormalizes") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> logits(4 * 7 * 7);
  for (auto& v : logits) v = u(rng);
  std::vector<double> mask(logits.size(), 0.0);
  for (std::size_t e = 0; e < mask.size(); e += 4) mask[e] = kMasked;
  const Tensor w = masked_softmax(Tensor::from({4, 7, 7}, logits), Tensor::from({4, 7, 7}, mask));
  for (std::size_t k = 1; k <= 8; ++k) {
    const Tensor f = top_k_filter(w, k);
    for (std::size_t r = 0; r < 28; ++r) {
      std::size_t nonzero = 0;
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = f.data()[r * 7 + j];
        nonzero += v != 0.0;
        total += v;
        // Kept entries are the largest of the row.
        if (v == 0.0 && w.data()[r * 7 + j] != 0.0) {
          std::size_t larger = 0;
          for (std::size_t m = 0; m < 7; ++m) {
            larger += w.data()[r * 7 + m] > w.data()[r * 7 + j];
          }
          CHECK(larger >= k);
        }
      }
      CHECK(nonzero <= k);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  const Tensor id = top_k_filter(w, 7);
  CHECK(std::equal(id.data().begin(), id.data().end(), w.data().begin()));
}

TEST_CASE("top-k gradient matches finite differences with the selection fixed") {
  Tensor w = Tensor::from({2, 4}, {0.1, 0.4, 0.2, 0.3, 0.5, 0.05, 0.25, 0.2})
                 .set_requires_grad(true);
  const Tensor c = Tensor::from({2, 4}, {1.0, -2.0, 0.5, 3.0, -1.0, 2.0, 0.7, 0.3});
  const auto report =
      check_gradients([&] { return sum(mul(top_k_filter(w, 2), c)); }, {{"w", w}});
  CHECK(report.max_rel_error() < 1e-6);
}

TEST_CASE("bias json lists 0/1 planes and beta values") {
  const Fixture f;
  const AttentionBias b = build_bias(f.graph, f.layout, assign_head_relations(12, 1), true);
  const auto j = bias_to_json(b);
  CHECK(j["masks"][1][1][2] == 1);
  CHECK(j["masks"][1][2][1] == 0);
  std::vector<double> beta(12 * HeadAssignment::kSlots, 0.0);
  beta[1 * HeadAssignment::kSlots + index_of(Relation::kContains)] = 0.75;
  const auto jb = bias_to_json(b, &beta);
  CHECK(jb["masks"][1][1][2] == 0.75);
  CHECK(jb["masks"][1][2][1].is_null());
}
