#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sat/metrics.hpp"
#include "sat/model.hpp"
#include "sat/synthetic.hpp"
#include "sat/training.hpp"

namespace sat {

/// Which graph a model trains on. Vanilla replaces every spatial layer by a
/// normal one; top-k keeps the structure but spatial layers attend densely
/// and keep the k largest weights per row.
struct GraphMode {
  enum class Kind { kNormal, kRandom, kReversed, kVanilla, kTopK };
  Kind kind = Kind::kNormal;
  std::size_t k = 0;

  std::string name() const;
  friend bool operator==(const GraphMode&, const GraphMode&) = default;
};

/// Accepts "normal", "random", "reversed", "vanilla", "top-k(K)" or "top-K".
GraphMode parse_graph_mode(const std::string& text);

/// Graph fed to the model for one scene. `scene_seed` drives randomization.
enum class InferenceGraph { kNormal, kRandom, kReversed };
std::string inference_graph_name(InferenceGraph g);
SpatialGraph make_graph(const Scene& scene, InferenceGraph kind, std::uint64_t scene_seed,
                        const ClassifierConfig& classifier = {});

struct ExperimentSpec {
  std::string name;
  ModelConfig model;
  GraphMode mode;
  std::uint64_t seed = 1;
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  // When set, scenes are read from these files instead of generated.
  std::string train_path;
  std::string test_path;
  GeneratorParams generator;
  ScheduleConfig schedule;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::size_t beam = 1;
  // Test scenes come from this seed; defaults to seed + 1 when zero.
  std::uint64_t test_seed = 0;
  unsigned eval_threads = 1;
};

/// Desk-scale defaults: 12 heads over d_model 96, 2N->4S with c = 2, no
/// dropout, and a schedule shortened to match a few thousand scenes.
ExperimentSpec desk_spec();

nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec base = {});

/// Model config after applying the graph mode (vanilla and top-k rewrite
/// the layer stack or attention filter) and the dataset's vocabularies.
ModelConfig effective_config(const ExperimentSpec& spec);

/// Answers come only from OCR copies; the vocabulary holds the begin and
/// end tokens plus the generic fallback "unanswerable".
AnswerVocabulary synthetic_answer_vocabulary();

struct EvalSummary {
  double accuracy = 0.0;  // mean VQA accuracy
  double anls = 0.0;
  double copy_rate = 0.0;
  std::map<std::string, double> accuracy_by_relation;
  std::vector<EvalRecord> records;
};

/// Decodes every scene with the given inference graph and scores it.
EvalSummary evaluate(const Model& model, const std::vector<SyntheticScene>& scenes,
                     const Vocabulary& question_vocab, const AnswerVocabulary& answer_vocab,
                     InferenceGraph graph, std::uint64_t seed, std::size_t beam = 1,
                     unsigned threads = 1);

/// Mean fraction of masked bias entries per head over the scenes, for the
/// first layer of each kind present.
struct SparsityReport {
  std::vector<double> spatial;
  std::vector<double> normal;
};
SparsityReport attention_sparsity(const Model& model,
                                  const std::vector<SyntheticScene>& scenes,
                                  const Vocabulary& question_vocab);

struct ExperimentResult {
  nlohmann::json report;
  Model model;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains per experiment spec and evaluates on held-out scenes under the normal,
/// randomized and reversed inference graphs. The report holds no timing so
/// identical specs give identical reports.
ExperimentResult run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {});

/// Evaluates an existing model on the experiment spec's test scenes.
nlohmann::json evaluate_model(const Model& model, const ExperimentSpec& spec);

/// Fixed-width results table, one row per report.
std::string results_table(const std::vector<nlohmann::json>& reports);

}  // namespace sat
