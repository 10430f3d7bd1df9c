#include "sat/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>
#include <thread>

#include "sat/decode.hpp"
#include "sat/metrics.hpp"
#include "sat/tensor.hpp"

namespace sat {

namespace {

// Seed streams so that training, shuffling and evaluation draws never
// collide for the same base seed.
enum Stream : std::uint64_t {
  kTrainGraphStream = 1,
  kShuffleStream = 2,
  kTrainerStream = 3,
  kEvalGraphStream = 4,
};

constexpr std::array<InferenceGraph, 3> kInferenceGraphs = {
    InferenceGraph::kNormal, InferenceGraph::kRandom, InferenceGraph::kReversed};

InferenceGraph own_inference_graph(const GraphMode& mode) {
  switch (mode.kind) {
    case GraphMode::Kind::kRandom:
      return InferenceGraph::kRandom;
    case GraphMode::Kind::kReversed:
      return InferenceGraph::kReversed;
    default:
      return InferenceGraph::kNormal;
  }
}

bool uses_graph(const ModelConfig& cfg) {
  return cfg.top_k == 0 &&
         std::find(cfg.layers.begin(), cfg.layers.end(), LayerKind::kSpatial) !=
             cfg.layers.end();
}

std::uint64_t test_seed_of(const ExperimentSpec& spec) {
  return spec.test_seed != 0 ? spec.test_seed : spec.seed + 1;
}

std::vector<SyntheticScene> load_or_generate(const std::string& path, std::size_t n,
                                             GeneratorParams& generator,
                                             std::uint64_t seed, unsigned threads) {
  if (!path.empty()) return read_dataset(path, &generator);
  return generate_dataset(n, generator, seed, threads);
}

nlohmann::json summary_json(const EvalSummary& s) {
  return {{"accuracy", s.accuracy},
          {"anls", s.anls},
          {"copy_rate", s.copy_rate},
          {"accuracy_by_relation", s.accuracy_by_relation}};
}

std::vector<TrainingExample> training_examples(const std::vector<SyntheticScene>& scenes,
                                               const Vocabulary& qv,
                                               const AnswerVocabulary& av,
                                               const GraphMode& mode, std::uint64_t seed,
                                               const ClassifierConfig& classifier) {
  const InferenceGraph kind = own_inference_graph(mode);
  std::vector<TrainingExample> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i].scene;
    TrainingExample ex;
    ex.batch = make_token_batch(s, qv);
    ex.graph = make_graph(s, kind, derive_seed(seed, kTrainGraphStream, i), classifier);
    ex.targets.steps = answer_targets(s.answers.at(0), ex.batch, av);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

std::string GraphMode::name() const {
  switch (kind) {
    case Kind::kNormal:
      return "normal";
    case Kind::kRandom:
      return "random";
    case Kind::kReversed:
      return "reversed";
    case Kind::kVanilla:
      return "vanilla";
    case Kind::kTopK:
      return "top-k(" + std::to_string(k) + ")";
  }
  return "normal";
}

GraphMode parse_graph_mode(const std::string& text) {
  if (text == "normal") return {GraphMode::Kind::kNormal, 0};
  if (text == "random") return {GraphMode::Kind::kRandom, 0};
  if (text == "reversed") return {GraphMode::Kind::kReversed, 0};
  if (text == "vanilla") return {GraphMode::Kind::kVanilla, 0};
  static const std::regex top_k(R"(top-?k?\(?(\d+)\)?)");
  std::smatch m;
  if (std::regex_match(text, m, top_k)) {
    const auto k = std::stoul(m[1].str());
    if (k == 0) throw ConfigError("top-k needs k >= 1");
    return {GraphMode::Kind::kTopK, k};
  }
  throw ConfigError("unknown graph mode '" + text + "'");
}

std::string inference_graph_name(InferenceGraph g) {
  switch (g) {
    case InferenceGraph::kNormal:
      return "normal";
    case InferenceGraph::kRandom:
      return "random";
    case InferenceGraph::kReversed:
      return "reversed";
  }
  return "normal";
}

SpatialGraph make_graph(const Scene& scene, InferenceGraph kind, std::uint64_t scene_seed,
                        const ClassifierConfig& classifier) {
  switch (kind) {
    case InferenceGraph::kRandom:
      return randomize_graph(scene.objects.size() + scene.ocr.size(), scene_seed);
    case InferenceGraph::kReversed:
      return reverse_graph(scene_graph(scene, classifier));
    case InferenceGraph::kNormal:
      break;
  }
  return scene_graph(scene, classifier);
}

ExperimentSpec desk_spec() {
  ExperimentSpec s;
  s.name = "desk";
  s.model.d_model = 96;
  s.model.heads = 12;
  s.model.intermediate = 192;
  s.model.layers = parse_structure("2N->4S");
  s.model.context = 2;
  s.model.dropout = 0.0;
  s.model.max_steps = 3;
  s.schedule.base_lr = 1e-3;
  s.schedule.warmup_iterations = 100;
  s.schedule.decay_steps = {2000, 2600};
  s.batch_size = 16;
  s.epochs = 8;
  return s;
}

nlohmann::json spec_to_json(const ExperimentSpec& s) {
  return {{"name", s.name},
          {"mode", s.mode.name()},
          {"seed", s.seed},
          {"test_seed", test_seed_of(s)},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"train_path", s.train_path},
          {"test_path", s.test_path},
          {"batch_size", s.batch_size},
          {"epochs", s.epochs},
          {"beam", s.beam},
          {"model", config_to_json(s.model)},
          {"generator", generator_to_json(s.generator)},
          {"schedule",
           {{"base_lr", s.schedule.base_lr},
            {"warmup_factor", s.schedule.warmup_factor},
            {"warmup_iterations", s.schedule.warmup_iterations},
            {"decay", s.schedule.decay},
            {"decay_steps", s.schedule.decay_steps},
            {"clip_norm", s.schedule.clip_norm}}}};
}

ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec s) {
  auto get = [](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) o.at(key).get_to(field);
  };
  get(j, "name", s.name);
  if (j.contains("mode")) s.mode = parse_graph_mode(j.at("mode").get<std::string>());
  get(j, "seed", s.seed);
  get(j, "test_seed", s.test_seed);
  get(j, "n_train", s.n_train);
  get(j, "n_test", s.n_test);
  get(j, "train_path", s.train_path);
  get(j, "test_path", s.test_path);
  get(j, "batch_size", s.batch_size);
  get(j, "epochs", s.epochs);
  get(j, "beam", s.beam);
  if (j.contains("model")) s.model = config_from_json(j.at("model"), s.model);
  if (j.contains("generator")) s.generator = generator_from_json(j.at("generator"), s.generator);
  if (j.contains("schedule")) {
    const auto& sc = j.at("schedule");
    get(sc, "base_lr", s.schedule.base_lr);
    get(sc, "warmup_factor", s.schedule.warmup_factor);
    get(sc, "warmup_iterations", s.schedule.warmup_iterations);
    get(sc, "decay", s.schedule.decay);
    get(sc, "decay_steps", s.schedule.decay_steps);
    get(sc, "clip_norm", s.schedule.clip_norm);
  }
  return s;
}

AnswerVocabulary synthetic_answer_vocabulary() {
  return AnswerVocabulary({"unanswerable"});
}

ModelConfig effective_config(const ExperimentSpec& spec) {
  ModelConfig cfg = spec.model;
  cfg.question_vocab = question_vocabulary(spec.generator).size();
  cfg.vocab_size = synthetic_answer_vocabulary().size();
  cfg.obj_feature_dim = spec.generator.feature_dim;
  cfg.ocr_feature_dim = spec.generator.feature_dim;
  cfg.init_seed = spec.seed;
  switch (spec.mode.kind) {
    case GraphMode::Kind::kVanilla:
      std::fill(cfg.layers.begin(), cfg.layers.end(), LayerKind::kNormal);
      cfg.top_k = 0;
      break;
    case GraphMode::Kind::kTopK:
      cfg.top_k = spec.mode.k;
      break;
    default:
      cfg.top_k = 0;
      break;
  }
  cfg.validate();
  return cfg;
}

EvalSummary evaluate(const Model& model, const std::vector<SyntheticScene>& scenes,
                     const Vocabulary& qv, const AnswerVocabulary& av,
                     InferenceGraph graph, std::uint64_t seed, std::size_t beam,
                     unsigned threads) {
  EvalSummary out;
  out.records.resize(scenes.size());
  std::vector<char> copied(scenes.size(), 0);
  auto work = [&](std::size_t begin, std::size_t stride) {
    NoGradGuard no_grad;
    for (std::size_t i = begin; i < scenes.size(); i += stride) {
      const Scene& s = scenes[i].scene;
      const TokenBatch batch = make_token_batch(s, qv);
      const SpatialGraph g = make_graph(s, graph, derive_seed(seed, kEvalGraphStream, i));
      const DecodeResult r =
          beam <= 1 ? decode_greedy(model, batch, g) : decode_beam(model, batch, g, beam);
      EvalRecord& rec = out.records[i];
      rec.id = s.id;
      rec.prediction = answer_text(r.tokens, batch, av);
      rec.answers = s.answers;
      score_record(rec);
      copied[i] = !r.tokens.empty() &&
                  std::all_of(r.tokens.begin(), r.tokens.end(),
                              [&](std::size_t t) { return t >= av.size(); });
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(scenes.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }

  std::map<std::string, std::pair<double, std::size_t>> by_rel;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out.accuracy += out.records[i].score_vqa;
    out.anls += out.records[i].score_anls;
    out.copy_rate += copied[i];
    auto& [sum, count] = by_rel[query_name(scenes[i].query)];
    sum += out.records[i].score_vqa;
    ++count;
  }
  if (!scenes.empty()) {
    const double n = static_cast<double>(scenes.size());
    out.accuracy /= n;
    out.anls /= n;
    out.copy_rate /= n;
  }
  for (const auto& [name, acc] : by_rel) {
    out.accuracy_by_relation[name] = acc.first / static_cast<double>(acc.second);
  }
  return out;
}

SparsityReport attention_sparsity(const Model& model,
                                  const std::vector<SyntheticScene>& scenes,
                                  const Vocabulary& qv) {
  const ModelConfig& cfg = model.config();
  SparsityReport out;
  const bool has_spatial = std::find(cfg.layers.begin(), cfg.layers.end(),
                                     LayerKind::kSpatial) != cfg.layers.end();
  const bool has_normal = std::find(cfg.layers.begin(), cfg.layers.end(),
                                    LayerKind::kNormal) != cfg.layers.end();
  if (has_spatial) out.spatial.assign(cfg.heads, 0.0);
  if (has_normal) out.normal.assign(cfg.heads, 0.0);
  const auto av = synthetic_answer_vocabulary();
  for (const auto& sc : scenes) {
    const TokenBatch batch = make_token_batch(sc.scene, qv);
    const auto steps = answer_targets(sc.scene.answers.at(0), batch, av).size();
    const ModalityLayout layout = batch.layout(steps);
    const SpatialGraph g = scene_graph(sc.scene);
    auto accumulate = [&](LayerKind kind, std::vector<double>& acc) {
      AttentionBias raw;
      model.layer_bias(kind, g, layout, &raw);
      const auto f = raw.masked_fraction();
      for (std::size_t h = 0; h < acc.size(); ++h) acc[h] += f[h];
    };
    if (has_spatial) accumulate(LayerKind::kSpatial, out.spatial);
    if (has_normal) accumulate(LayerKind::kNormal, out.normal);
  }
  const double n = static_cast<double>(std::max<std::size_t>(scenes.size(), 1));
  for (auto& v : out.spatial) v /= n;
  for (auto& v : out.normal) v /= n;
  return out;
}

nlohmann::json evaluate_model(const Model& model, const ExperimentSpec& spec) {
  GeneratorParams generator = spec.generator;
  const auto test = load_or_generate(spec.test_path, spec.n_test, generator,
                                     test_seed_of(spec), spec.eval_threads);
  const Vocabulary qv = question_vocabulary(generator);
  const AnswerVocabulary av = synthetic_answer_vocabulary();
  nlohmann::json eval = nlohmann::json::object();
  const bool graph_dependent = uses_graph(model.config());
  std::optional<EvalSummary> shared;
  for (InferenceGraph g : kInferenceGraphs) {
    if (!graph_dependent && shared) {
      eval[inference_graph_name(g)] = summary_json(*shared);
      continue;
    }
    EvalSummary s =
        evaluate(model, test, qv, av, g, test_seed_of(spec), spec.beam, spec.eval_threads);
    eval[inference_graph_name(g)] = summary_json(s);
    if (!graph_dependent) shared = std::move(s);
  }
  const SparsityReport sp = attention_sparsity(model, test, qv);
  const std::string own = inference_graph_name(own_inference_graph(spec.mode));
  return {{"inference", eval},
          {"accuracy", eval[own]["accuracy"]},
          {"copy_rate", eval[own]["copy_rate"]},
          {"attention_sparsity", {{"spatial", sp.spatial}, {"normal", sp.normal}}}};
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const ProgressFn& progress) {
  ExperimentSpec resolved = spec;
  const auto train = load_or_generate(spec.train_path, spec.n_train, resolved.generator,
                                      spec.seed, spec.eval_threads);
  if (spec.batch_size == 0) throw ConfigError("batch_size must be >= 1");

  const ModelConfig cfg = effective_config(resolved);
  Model model(cfg);
  const Vocabulary qv = question_vocabulary(resolved.generator);
  const AnswerVocabulary av = synthetic_answer_vocabulary();
  auto examples = training_examples(train, qv, av, spec.mode, spec.seed,
                                    resolved.generator.classifier);

  Trainer trainer(model, spec.schedule, derive_seed(spec.seed, kTrainerStream, 0));
  std::vector<double> epoch_loss;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(spec.seed, kShuffleStream, epoch));
    std::shuffle(examples.begin(), examples.end(), shuffle_rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < examples.size(); b += spec.batch_size) {
      const std::size_t len = std::min(spec.batch_size, examples.size() - b);
      total += trainer.train_step(std::span<const TrainingExample>(examples.data() + b, len));
      ++batches;
    }
    epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
    if (progress) {
      std::ostringstream msg;
      msg << "epoch " << epoch + 1 << "/" << spec.epochs << " loss " << epoch_loss.back()
          << " lr " << learning_rate(spec.schedule, trainer.iteration());
      progress(msg.str());
    }
  }

  nlohmann::json report = {
      {"name", spec.name},
      {"spec", spec_to_json(resolved)},
      {"model_config", config_to_json(cfg)},
      {"parameters", model.parameter_count()},
      {"train",
       {{"iterations", trainer.iteration()},
        {"epoch_loss", epoch_loss},
        {"final_loss", epoch_loss.empty() ? 0.0 : epoch_loss.back()}}}};
  report.update(evaluate_model(model, resolved));
  return {std::move(report), std::move(model)};
}

std::string results_table(const std::vector<nlohmann::json>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %-10s %-8s %2s %9s %8s %8s %8s %8s %6s\n",
                "name", "mode", "layers", "c", "params", "acc", "normal", "random",
                "reversed", "copy");
  os << line;
  for (const auto& r : reports) {
    const auto& inf = r.at("inference");
    std::snprintf(line, sizeof line,
                  "%-22s %-10s %-8s %2zu %9zu %8.2f %8.2f %8.2f %8.2f %6.2f\n",
                  r.value("name", "").c_str(),
                  r.at("spec").at("mode").get<std::string>().c_str(),
                  r.at("model_config").at("multimodal_layers").get<std::string>().c_str(),
                  r.at("model_config").at("context_size").get<std::size_t>(),
                  r.at("parameters").get<std::size_t>(),
                  100.0 * r.at("accuracy").get<double>(),
                  100.0 * inf.at("normal").at("accuracy").get<double>(),
                  100.0 * inf.at("random").at("accuracy").get<double>(),
                  100.0 * inf.at("reversed").at("accuracy").get<double>(),
                  r.at("copy_rate").get<double>());
    os << line;
  }
  return os.str();
}

}  // namespace sat
