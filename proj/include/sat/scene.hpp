#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sat/model.hpp"
#include "sat/spatial_graph.hpp"

namespace sat {

struct SceneObject {
  BoundingBox box;
  std::string label;  // object class; may be empty
  std::vector<double> feature;
};

struct SceneText {
  BoundingBox box;
  std::string text;
  std::vector<double> feature;
};

/// One image: its regions, and optionally a question with reference answers.
struct Scene {
  std::string id;
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<SceneObject> objects;
  std::vector<SceneText> ocr;
  std::string question;
  std::vector<std::string> answers;

  /// Object boxes followed by OCR boxes, the graph's node order.
  std::vector<BoundingBox> region_boxes() const;
};

/// Parses the scene JSON:
///   {image_width, image_height,
///    objects: [{box: [x0, y0, x1, y1], feature: [...], label?}],
///    ocr: [{box: [...], text: "...", feature: [...]}],
///    id?, question?, answers?}
/// Boxes are validated against the image; failures raise IngestError.
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const Scene& scene);

SpatialGraph scene_graph(const Scene& scene, const ClassifierConfig& config = {});

/// Word-level vocabulary with a fixed order. Id 0 is "<unk>".
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  std::size_t id(const std::string& word) const;
  std::optional<std::size_t> find(const std::string& word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }

  /// Lowercased whitespace tokens mapped to ids.
  std::vector<std::size_t> encode(const std::string& text) const;

 private:
  std::vector<std::string> words_;
};

/// Answer vocabulary: plain words then "<begin>" and "<end>" last.
class AnswerVocabulary {
 public:
  explicit AnswerVocabulary(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  std::size_t begin_id() const { return words_.size() - 2; }
  std::size_t end_id() const { return words_.size() - 1; }
  std::optional<std::size_t> find(const std::string& word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
};

struct TokenLimits {
  std::size_t max_question = 20;
  std::size_t max_objects = 100;
  std::size_t max_ocr = 50;
};

/// Builds model inputs, truncating each segment to its token budget.
TokenBatch make_token_batch(const Scene& scene, const Vocabulary& question_vocab,
                            const TokenLimits& limits = {});

/// Per-step targets for an answer string: each word maps to its vocabulary
/// id and to every OCR token with the same text; the end token follows.
/// Words matching neither leave the step empty.
std::vector<std::vector<std::size_t>> answer_targets(const std::string& answer,
                                                     const TokenBatch& batch,
                                                     const AnswerVocabulary& vocab);

/// Joint ids back to text: vocabulary words or copied OCR strings.
std::string answer_text(const std::vector<std::size_t>& tokens,
                        const TokenBatch& batch, const AnswerVocabulary& vocab);

}  // namespace sat
