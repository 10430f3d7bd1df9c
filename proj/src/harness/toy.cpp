#include "sat/toy.hpp"

#include <random>

namespace sat {

TrainingExample random_example(const ModelConfig& cfg, std::size_t n_ques,
                               std::size_t n_obj, std::size_t n_ocr, std::size_t steps,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> coord(0.0, 90.0);
  std::uniform_real_distribution<double> extent(2.0, 30.0);
  auto box = [&] {
    const double x = coord(rng);
    const double y = coord(rng);
    return BoundingBox{x, y, std::min(100.0, x + extent(rng)),
                       std::min(100.0, y + extent(rng))};
  };
  auto features = [&](std::size_t dim) {
    std::vector<double> f(dim);
    for (auto& v : f) v = unit(rng);
    return f;
  };

  TrainingExample ex;
  ex.batch.image_width = 100.0;
  ex.batch.image_height = 100.0;
  for (std::size_t i = 0; i < n_ques; ++i) {
    ex.batch.question_ids.push_back(
        std::uniform_int_distribution<std::size_t>(0, cfg.question_vocab - 1)(rng));
  }
  for (std::size_t i = 0; i < n_obj; ++i) {
    ex.batch.obj_boxes.push_back(box());
    ex.batch.obj_features.push_back(features(cfg.obj_feature_dim));
  }
  for (std::size_t i = 0; i < n_ocr; ++i) {
    ex.batch.ocr_boxes.push_back(box());
    ex.batch.ocr_features.push_back(features(cfg.ocr_feature_dim));
    ex.batch.ocr_texts.push_back("w" + std::to_string(i));
  }
  ex.graph = build_graph(ex.batch.region_boxes(), 100.0, 100.0);

  const std::size_t classes = cfg.vocab_size + n_ocr;
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> ids = {pick(rng)};
    const std::size_t extra = pick(rng);
    if (extra != ids[0]) ids.push_back(extra);
    ex.targets.steps.push_back(std::move(ids));
  }
  return ex;
}

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 4;
  cfg.context = 3;
  cfg.layers = parse_structure("1N->1S");
  cfg.intermediate = 32;
  cfg.vocab_size = 6;
  cfg.max_steps = 3;
  cfg.dropout = 0.0;
  cfg.ln_eps = 1e-5;
  cfg.question_vocab = 10;
  cfg.obj_feature_dim = 5;
  cfg.ocr_feature_dim = 5;
  cfg.init_std = 0.3;
  return cfg;
}

GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                const GradCheckOptions& opts) {
  ModelConfig c = cfg;
  c.init_seed = seed;
  Model model(c);
  const TrainingExample ex = random_example(c, 3, 2, 5, 3, seed + 1);
  std::vector<NamedTensor> leaves;
  for (Parameter* p : model.parameters()) leaves.push_back({p->name, p->tensor});
  return check_gradients([&] { return decoding_loss(model, ex); }, std::move(leaves),
                         opts);
}

}  // namespace sat
