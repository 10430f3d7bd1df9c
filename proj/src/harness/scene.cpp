#include "sat/scene.hpp"

#include <algorithm>
#include <sstream>

#include "sat/metrics.hpp"

namespace sat {

namespace {

BoundingBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw IngestError("box must be [x_min, y_min, x_max, y_max]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

nlohmann::json box_to_json(const BoundingBox& b) {
  return nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

}  // namespace

std::vector<BoundingBox> Scene::region_boxes() const {
  std::vector<BoundingBox> out;
  out.reserve(objects.size() + ocr.size());
  for (const auto& o : objects) out.push_back(o.box);
  for (const auto& t : ocr) out.push_back(t.box);
  return out;
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  try {
    s.id = j.value("id", "");
    s.image_width = j.at("image_width").get<double>();
    s.image_height = j.at("image_height").get<double>();
    if (!(s.image_width > 0.0) || !(s.image_height > 0.0)) {
      throw IngestError("image size must be positive");
    }
    for (const auto& o : j.value("objects", nlohmann::json::array())) {
      SceneObject obj{box_from_json(o.at("box")), o.value("label", ""),
                      o.at("feature").get<std::vector<double>>()};
      validate_box(obj.box, s.image_width, s.image_height);
      s.objects.push_back(std::move(obj));
    }
    for (const auto& t : j.value("ocr", nlohmann::json::array())) {
      SceneText txt{box_from_json(t.at("box")), t.at("text").get<std::string>(),
                    t.at("feature").get<std::vector<double>>()};
      validate_box(txt.box, s.image_width, s.image_height);
      s.ocr.push_back(std::move(txt));
    }
    s.question = j.value("question", "");
    s.answers = j.value("answers", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(std::string("malformed scene: ") + e.what());
  }
  return s;
}

nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objects.push_back(
        {{"box", box_to_json(o.box)}, {"label", o.label}, {"feature", o.feature}});
  }
  nlohmann::json ocr = nlohmann::json::array();
  for (const auto& t : s.ocr) {
    ocr.push_back({{"box", box_to_json(t.box)}, {"text", t.text}, {"feature", t.feature}});
  }
  nlohmann::json j = {{"id", s.id},
                      {"image_width", s.image_width},
                      {"image_height", s.image_height},
                      {"objects", std::move(objects)},
                      {"ocr", std::move(ocr)}};
  if (!s.question.empty()) j["question"] = s.question;
  if (!s.answers.empty()) j["answers"] = s.answers;
  return j;
}

SpatialGraph scene_graph(const Scene& scene, const ClassifierConfig& config) {
  return build_graph(scene.region_boxes(), scene.image_width, scene.image_height,
                     config);
}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  words_.push_back("<unk>");
  for (auto& w : words) {
    if (w != "<unk>" && std::find(words_.begin(), words_.end(), w) == words_.end()) {
      words_.push_back(std::move(w));
    }
  }
}

std::optional<std::size_t> Vocabulary::find(const std::string& word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - words_.begin());
}

std::size_t Vocabulary::id(const std::string& word) const {
  return find(word).value_or(0);
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
  std::istringstream in(normalize_answer(text));
  std::vector<std::size_t> ids;
  for (std::string w; in >> w;) ids.push_back(id(w));
  return ids;
}

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> words) {
  for (auto& w : words) {
    if (w == "<begin>" || w == "<end>") continue;
    if (std::find(words_.begin(), words_.end(), w) == words_.end()) {
      words_.push_back(std::move(w));
    }
  }
  words_.push_back("<begin>");
  words_.push_back("<end>");
}

std::optional<std::size_t> AnswerVocabulary::find(const std::string& word) const {
  const auto it = std::find(words_.begin(), words_.end() - 2, word);
  if (it == words_.end() - 2) return std::nullopt;
  return static_cast<std::size_t>(it - words_.begin());
}

TokenBatch make_token_batch(const Scene& s, const Vocabulary& question_vocab,
                            const TokenLimits& limits) {
  TokenBatch b;
  b.image_width = s.image_width;
  b.image_height = s.image_height;
  b.question_ids = question_vocab.encode(s.question);
  if (b.question_ids.size() > limits.max_question) {
    b.question_ids.resize(limits.max_question);
  }
  for (std::size_t i = 0; i < s.objects.size() && i < limits.max_objects; ++i) {
    b.obj_boxes.push_back(s.objects[i].box);
    b.obj_features.push_back(s.objects[i].feature);
  }
  for (std::size_t i = 0; i < s.ocr.size() && i < limits.max_ocr; ++i) {
    b.ocr_boxes.push_back(s.ocr[i].box);
    b.ocr_features.push_back(s.ocr[i].feature);
    b.ocr_texts.push_back(s.ocr[i].text);
  }
  return b;
}

std::vector<std::vector<std::size_t>> answer_targets(const std::string& answer,
                                                     const TokenBatch& batch,
                                                     const AnswerVocabulary& vocab) {
  std::vector<std::vector<std::size_t>> steps;
  std::istringstream in(normalize_answer(answer));
  for (std::string w; in >> w;) {
    std::vector<std::size_t> ids;
    if (auto v = vocab.find(w)) ids.push_back(*v);
    for (std::size_t k = 0; k < batch.ocr_texts.size(); ++k) {
      if (normalize_answer(batch.ocr_texts[k]) == w) ids.push_back(vocab.size() + k);
    }
    steps.push_back(std::move(ids));
  }
  steps.push_back({vocab.end_id()});
  return steps;
}

std::string answer_text(const std::vector<std::size_t>& tokens,
                        const TokenBatch& batch, const AnswerVocabulary& vocab) {
  std::string out;
  for (std::size_t tok : tokens) {
    if (!out.empty()) out.push_back(' ');
    if (tok < vocab.size()) {
      out += vocab.word(tok);
    } else {
      out += batch.ocr_texts.at(tok - vocab.size());
    }
  }
  return out;
}

}  // namespace sat
