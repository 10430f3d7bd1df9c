#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sat/scene.hpp"

namespace sat {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relations a synthetic question can ask about.
enum class QueryRelation { kRight, kLeft, kAbove, kBelow, kContains, kInside };

inline constexpr std::size_t kNumQueryRelations = 6;

std::string query_name(QueryRelation q);
QueryRelation parse_query(const std::string& name);

/// True when `r`, the classifier's type for anchor -> candidate, makes the
/// candidate an answer to `q` about the anchor.
bool satisfies(QueryRelation q, Relation r);

struct GeneratorParams {
  double canvas_width = 100.0;
  double canvas_height = 100.0;
  std::size_t min_text_boxes = 4;
  std::size_t max_text_boxes = 8;
  std::size_t max_objects = 2;
  double min_size = 8.0;
  double max_size = 28.0;
  double object_min_size = 22.0;
  double object_max_size = 40.0;
  // Chance that a new text box is placed inside an existing region.
  double nest_probability = 0.3;
  std::size_t feature_dim = 16;
  std::size_t max_retries = 2000;
  std::vector<std::string> alphabet = {
      "stop", "exit", "sale", "open", "taxi", "cafe", "bank",  "park",
      "hotel", "bar", "gym", "zoo", "pizza", "bus", "post", "shop"};
  std::vector<std::string> object_classes = {"sign", "door", "car", "window"};
  ClassifierConfig classifier;

  /// Throws GenerationError for parameter sets that can never succeed.
  void validate() const;
};

nlohmann::json generator_to_json(const GeneratorParams& p);
GeneratorParams generator_from_json(const nlohmann::json& j, GeneratorParams base = {});

struct SyntheticScene {
  Scene scene;
  QueryRelation query = QueryRelation::kRight;
  std::size_t anchor = 0;  // region index: objects first, then OCR
  std::size_t answer = 0;  // OCR index
};

/// Scenes are independent given (seed, index), so the output does not depend
/// on `threads`.
std::vector<SyntheticScene> generate_dataset(std::size_t n, const GeneratorParams& params,
                                             std::uint64_t seed, unsigned threads = 1);

SyntheticScene generate_scene(const GeneratorParams& params, std::uint64_t seed,
                              std::size_t index);

/// Deterministic per-word feature vector in [-1, 1]^dim.
std::vector<double> word_feature(const std::string& word, std::size_t dim);

/// Question words of every template plus the alphabet and object classes.
Vocabulary question_vocabulary(const GeneratorParams& params);

nlohmann::json dataset_to_json(const std::vector<SyntheticScene>& scenes,
                               const GeneratorParams& params, std::uint64_t seed);
std::vector<SyntheticScene> dataset_from_json(const nlohmann::json& j);

void write_dataset(const std::string& path, const std::vector<SyntheticScene>& scenes,
                   const GeneratorParams& params, std::uint64_t seed);
std::vector<SyntheticScene> read_dataset(const std::string& path,
                                         GeneratorParams* params = nullptr);

/// Keeps the questions mentioning a spatial preposition as a whole word,
/// case-insensitively.
std::vector<std::string> filter_spatial_questions(const std::vector<std::string>& questions);
bool is_spatial_question(const std::string& question);

/// Mixes (seed, stream, index) into one 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace sat
