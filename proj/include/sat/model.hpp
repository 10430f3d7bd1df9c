#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sat/attention_masks.hpp"
#include "sat/optim.hpp"
#include "sat/spatial_graph.hpp"
#include "sat/tensor.hpp"

namespace sat {

enum class LayerKind { kNormal, kSpatial };

/// Parses stack descriptions such as "2N->4S", "6N" or "NNSS".
std::vector<LayerKind> parse_structure(const std::string& text);
std::string structure_string(const std::vector<LayerKind>& layers);

struct ModelConfig {
  std::size_t d_model = 768;
  std::size_t heads = 12;
  std::vector<LayerKind> layers = parse_structure("2N->4S");
  std::size_t intermediate = 3072;
  std::size_t context = 2;
  // Answer vocabulary size, including the begin and end tokens which
  // occupy the last two ids.
  std::size_t vocab_size = 5000;
  std::size_t max_steps = 12;
  double dropout = 0.1;
  double ln_eps = 1e-12;

  std::size_t question_vocab = 30522;
  std::size_t obj_feature_dim = 2048;
  std::size_t ocr_feature_dim = 300;

  // Optional learned per-(head, relation) attention offset.
  bool learned_beta = false;
  // When > 0, spatial layers attend densely and keep only the top-k
  // weights per row instead of following the graph.
  std::size_t top_k = 0;
  double init_std = 0.02;
  std::uint64_t init_seed = 1;

  std::size_t head_dim() const { return d_model / heads; }
  std::size_t begin_id() const { return vocab_size - 2; }
  std::size_t end_id() const { return vocab_size - 1; }

  /// Throws ConfigError on hard violations; returns advisory warnings.
  std::vector<std::string> validate() const;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// One scene's model inputs.
struct TokenBatch {
  std::vector<std::size_t> question_ids;
  std::vector<std::vector<double>> obj_features;
  std::vector<BoundingBox> obj_boxes;
  std::vector<std::vector<double>> ocr_features;
  std::vector<BoundingBox> ocr_boxes;
  std::vector<std::string> ocr_texts;
  double image_width = 1.0;
  double image_height = 1.0;

  ModalityLayout layout(std::size_t n_ans) const {
    return {question_ids.size(), obj_boxes.size(), ocr_boxes.size(), n_ans};
  }
  std::vector<BoundingBox> region_boxes() const;
};

/// Answer tokens are ids in the joint space: [0, vocab) picks a vocabulary
/// word, vocab + k copies OCR token k.
struct DecodeState {
  std::size_t step = 0;
  std::vector<std::size_t> emitted;
  bool finished = false;
};

/// Attention probabilities and hidden states captured during a forward.
struct ForwardTrace {
  std::vector<Tensor> attention;  // per layer, [H, N, N]
  std::vector<Tensor> hidden;     // per layer output, [N, d]
  std::vector<AttentionBias> bias;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  ForwardTrace* trace = nullptr;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  std::size_t parameter_count() const;

  /// Question, object and OCR rows, [n_ques + n_obj + n_ocr, d].
  Tensor embed(const TokenBatch& batch) const;

  /// Scores [prev.size() + 1, vocab + n_ocr]. Row t scores answer step t given
  /// the fed-back tokens `prev` (step 0 sees only the begin token).
  Tensor forward(const TokenBatch& batch, const SpatialGraph& graph,
                 const std::vector<std::size_t>& prev,
                 const ForwardOptions& opts = {}) const;

  /// Runs only the layer stack on given inputs; used by equivalence checks.
  Tensor run_layers(const Tensor& x, const ModalityLayout& layout,
                    const SpatialGraph& graph, const ForwardOptions& opts = {}) const;

  /// One transformer layer with an explicit bias.
  Tensor run_layer(std::size_t index, const Tensor& x, const Tensor& bias,
                   LayerKind kind, const ModalityLayout& layout,
                   const ForwardOptions& opts = {}) const;

  Tensor layer_bias(LayerKind kind, const SpatialGraph& graph,
                    const ModalityLayout& layout, AttentionBias* raw = nullptr) const;

  const HeadAssignment& head_assignment() const { return assign_; }

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);

 private:
  struct LayerParams {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
    std::optional<Parameter> beta;
  };

  Parameter make_param(const std::string& name, Shape shape, std::mt19937_64& rng,
                       double fill = std::numeric_limits<double>::quiet_NaN());
  Tensor answer_inputs(const TokenBatch& batch, const Tensor& x,
                       const std::vector<std::size_t>& prev) const;

  ModelConfig cfg_;
  HeadAssignment assign_;

  Parameter ques_emb_, obj_proj_, obj_loc_, ocr_proj_, ocr_loc_, type_emb_;
  Parameter emb_ln_g_, emb_ln_b_;
  Parameter ans_vocab_emb_, ans_pos_emb_, ans_ln_g_, ans_ln_b_;
  std::vector<LayerParams> layers_;
  Parameter vocab_w_, vocab_b_, ocr_ptr_w_, ocr_ptr_b_, ans_ptr_w_, ans_ptr_b_;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace sat
