#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "sat/model.hpp"
#include "sat/ops.hpp"
#include "sat/toy.hpp"

using namespace sat;

namespace {

ModelConfig small_config(const std::string& layers, std::size_t heads = 12,
                         std::size_t context = 1) {
  ModelConfig cfg;
  cfg.d_model = 24;
  cfg.heads = heads;
  cfg.context = context;
  cfg.layers = parse_structure(layers);
  cfg.intermediate = 32;
  cfg.vocab_size = 7;
  cfg.max_steps = 4;
  cfg.dropout = 0.0;
  cfg.question_vocab = 11;
  cfg.obj_feature_dim = 6;
  cfg.ocr_feature_dim = 6;
  cfg.init_std = 0.2;
  return cfg;
}

Tensor random_input(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n * d);
  for (auto& x : v) x = g(rng);
  return Tensor::from({n, d}, v);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("layer structures parse and print") {
  CHECK(parse_structure("2N->4S") == std::vector<LayerKind>{LayerKind::kNormal, LayerKind::kNormal,
                                                            LayerKind::kSpatial, LayerKind::kSpatial,
                                                            LayerKind::kSpatial, LayerKind::kSpatial});
  CHECK(parse_structure("6N").size() == 6);
  CHECK(parse_structure("NNSS") == parse_structure("2N->2S"));
  CHECK(structure_string(parse_structure("NNSSSS")) == "2N->4S");
  CHECK(structure_string(parse_structure("3N->3S")) == "3N->3S");
  CHECK_THROWS(parse_structure(""));
  CHECK_THROWS(parse_structure("2X"));
}

TEST_CASE("config validation") {
  ModelConfig cfg = small_config("1N->1S");
  CHECK(cfg.validate().empty());
  cfg.d_model = 25;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ModelConfig few = small_config("1N->1S", 4, 1);
  const auto warnings = few.validate();
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("no head owns") != std::string::npos);
  CHECK(small_config("1N->1S", 12, 3).validate().empty());
  CHECK_FALSE(small_config("1S->1N").validate().empty());
  ModelConfig bad_c = small_config("1S", 12, 0);
  CHECK_THROWS_AS(bad_c.validate(), ConfigError);
}

TEST_CASE("config json round-trips") {
  ModelConfig cfg = small_config("2N->1S", 12, 3);
  cfg.learned_beta = true;
  cfg.top_k = 5;
  const ModelConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(config_to_json(ModelConfig{})["multimodal_layers"] == "2N->4S");
}

TEST_CASE("spatial layer over a complete single-relation graph equals a normal layer") {
  const ModelConfig cfg = small_config("1S", 12, 12);
  const Model model(cfg);
  const ModalityLayout layout{0, 3, 5, 2};
  const SpatialGraph g = complete_graph(8, Relation::kOverlap);
  const Tensor spatial_bias = model.layer_bias(LayerKind::kSpatial, g, layout);
  const Tensor dense_bias = model.layer_bias(LayerKind::kNormal, g, layout);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = random_input(layout.total(), cfg.d_model, s);
    const Tensor a = model.run_layer(0, x, spatial_bias, LayerKind::kSpatial, layout);
    const Tensor b = model.run_layer(0, x, dense_bias, LayerKind::kNormal, layout);
    CHECK(max_abs_diff(a.data(), b.data()) <= 1e-9);
  }
}

TEST_CASE("spatial layers pass question rows through unchanged") {
  const ModelConfig cfg = small_config("1N->1S");
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 3, 2, 4, 2, 5);
  ForwardTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  model.forward(ex.batch, ex.graph, {1}, opts);
  REQUIRE(trace.hidden.size() == 2);
  const std::size_t d = cfg.d_model;
  const auto before = trace.hidden[0].data().subspan(0, 3 * d);
  const auto after = trace.hidden[1].data().subspan(0, 3 * d);
  CHECK(std::equal(before.begin(), before.end(), after.begin()));
  // Region rows do change.
  CHECK_FALSE(max_abs_diff(trace.hidden[0].data().subspan(3 * d, d),
                           trace.hidden[1].data().subspan(3 * d, d)) == 0.0);
}

TEST_CASE("attention weights vanish exactly on relations a head does not own") {
  const ModelConfig cfg = small_config("1N->1S", 12, 2);
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 2, 3, 5, 2, 9);
  ForwardTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  model.forward(ex.batch, ex.graph, {0}, opts);
  const Tensor& w = trace.attention[1];
  const ModalityLayout layout = ex.batch.layout(2);
  const HeadAssignment assign = assign_head_relations(12, 2);
  for (std::size_t h = 0; h < 12; ++h) {
    for (std::size_t i = layout.obj_begin(); i < layout.ans_begin(); ++i) {
      for (std::size_t j = layout.obj_begin(); j < layout.ans_begin(); ++j) {
        const Relation r = ex.graph.at(i - layout.obj_begin(), j - layout.obj_begin());
        CHECK((w.at(h, i, j) == 0.0) == !assign.owns(h, r));
      }
    }
  }
}

TEST_CASE("scores of step t ignore later answer tokens") {
  const ModelConfig cfg = small_config("1N->2S");
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 2, 2, 4, 3, 13);
  const Tensor a = model.forward(ex.batch, ex.graph, {1, 2, 8});
  const Tensor b = model.forward(ex.batch, ex.graph, {1, 3, 9});
  const std::size_t cols = a.dim(1);
  CHECK(max_abs_diff(a.data().subspan(0, 2 * cols), b.data().subspan(0, 2 * cols)) <= 1e-9);
  CHECK(max_abs_diff(a.data().subspan(2 * cols, cols), b.data().subspan(2 * cols, cols)) > 0.0);
}

TEST_CASE("reordering OCR tokens permutes the copy scores") {
  const ModelConfig cfg = small_config("1N->2S", 12, 2);
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 2, 1, 5, 1, 21);
  const std::vector<std::size_t> order = {3, 0, 4, 2, 1};
  TokenBatch p = ex.batch;
  for (std::size_t k = 0; k < 5; ++k) {
    p.ocr_boxes[k] = ex.batch.ocr_boxes[order[k]];
    p.ocr_features[k] = ex.batch.ocr_features[order[k]];
    p.ocr_texts[k] = ex.batch.ocr_texts[order[k]];
  }
  std::vector<std::size_t> node_order = {0};
  for (std::size_t k : order) node_order.push_back(1 + k);
  const Tensor a = model.forward(ex.batch, ex.graph, {});
  const Tensor b = model.forward(p, ex.graph.permuted(node_order), {});
  const std::size_t v = cfg.vocab_size;
  for (std::size_t c = 0; c < v; ++c) CHECK(std::abs(a.at(0, c) - b.at(0, c)) < 1e-9);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(std::abs(b.at(0, v + k) - a.at(0, v + order[k])) < 1e-9);
  }
}

TEST_CASE("forward rejects mismatched inputs") {
  const ModelConfig cfg = small_config("1N->1S");
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 2, 2, 3, 1, 3);
  CHECK_THROWS_AS(model.forward(ex.batch, SpatialGraph(4), {}), LayoutError);
  CHECK_THROWS_AS(model.forward(ex.batch, ex.graph, {cfg.vocab_size + 3}), std::out_of_range);
  CHECK_THROWS_AS(model.forward(ex.batch, ex.graph, {0, 0, 0, 0}), std::out_of_range);
  TokenBatch empty;
  CHECK_THROWS(model.forward(empty, SpatialGraph(0), {}));
}

TEST_CASE("identical seeds give bitwise identical models and outputs") {
  const ModelConfig cfg = small_config("1N->1S");
  const Model a(cfg);
  const Model b(cfg);
  const TrainingExample ex = random_example(cfg, 2, 2, 3, 1, 3);
  const Tensor sa = a.forward(ex.batch, ex.graph, {2});
  const Tensor sb = b.forward(ex.batch, ex.graph, {2});
  CHECK(std::equal(sa.data().begin(), sa.data().end(), sb.data().begin()));
}

TEST_CASE("gradients with the learned relation bias match finite differences") {
  ModelConfig cfg = gradcheck_config();
  cfg.learned_beta = true;
  const auto report = gradcheck_model(cfg, 4);
  INFO(report.worst.name << "[" << report.worst.index << "]");
  CHECK(report.max_rel_error() < 1e-5);
  CHECK(report.checked > 5000);
}

TEST_CASE("top-k spatial layers run and keep at most k weights per row") {
  ModelConfig cfg = small_config("1N->1S");
  cfg.top_k = 3;
  const Model model(cfg);
  const TrainingExample ex = random_example(cfg, 2, 2, 4, 1, 8);
  ForwardTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  model.forward(ex.batch, ex.graph, {}, opts);
  const Tensor& w = trace.attention[1];
  const std::size_t n = w.dim(1);
  for (std::size_t r = 0; r < w.numel() / n; ++r) {
    std::size_t nz = 0;
    for (std::size_t j = 0; j < n; ++j) nz += w.data()[r * n + j] != 0.0;
    CHECK(nz <= 3);
  }
}

TEST_CASE("checkpoints round-trip and reject bad files") {
  ModelConfig cfg = small_config("1N->1S", 12, 2);
  cfg.learned_beta = true;
  const Model model(cfg);
  const std::string path = "test_model_checkpoint.json";
  save_checkpoint(model, path);
  const Model back = load_checkpoint(path);
  const TrainingExample ex = random_example(cfg, 2, 2, 3, 1, 3);
  const Tensor a = model.forward(ex.batch, ex.graph, {4});
  const Tensor b = back.forward(ex.batch, ex.graph, {4});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  auto j = model.to_json();
  j["parameters"]["layer0.wq"]["shape"] = {3, 3};
  CHECK_THROWS_AS(Model::from_json(j), LoadError);
  auto missing = model.to_json();
  missing["parameters"].erase("output.vocab_w");
  CHECK_THROWS_AS(Model::from_json(missing), LoadError);
  CHECK_THROWS_AS(Model::from_json({{"format", "other"}}), LoadError);
  {
    std::ofstream out(path);
    out << "{ truncated";
  }
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does-not-exist.json"), LoadError);
}

TEST_CASE("parameter names are unique and counted") {
  const Model model(small_config("1N->1S"));
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto* p : model.parameters()) {
    names.insert(p->name);
    total += p->tensor.numel();
  }
  CHECK(names.size() == model.parameters().size());
  CHECK(total == model.parameter_count());
  CHECK(names.count("layer1.wq") == 1);
}
