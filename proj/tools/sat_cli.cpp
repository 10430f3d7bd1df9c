#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sat/attention_masks.hpp"
#include "sat/experiment.hpp"
#include "sat/synthetic.hpp"
#include "sat/toy.hpp"

namespace {

using sat::ExperimentSpec;
using sat::GeneratorParams;

struct SpecFlags {
  std::string spec_file;
  std::string mode = "normal";
  std::string layers;
  std::string decay_steps;
  // Copies one flag's value between specs; applied only for flags given.
  std::vector<std::pair<const CLI::Option*,
                        std::function<void(const ExperimentSpec&, ExperimentSpec&)>>>
      copies;
};

void add_generator_flags(CLI::App& cmd, GeneratorParams& g) {
  cmd.add_option("--canvas-width", g.canvas_width, "Canvas width");
  cmd.add_option("--canvas-height", g.canvas_height, "Canvas height");
  cmd.add_option("--min-boxes", g.min_text_boxes, "Fewest text boxes per scene");
  cmd.add_option("--max-boxes", g.max_text_boxes, "Most text boxes per scene");
  cmd.add_option("--max-objects", g.max_objects, "Most object regions per scene");
  cmd.add_option("--nest-probability", g.nest_probability,
                 "Chance a text box is nested inside an existing region");
  cmd.add_option("--feature-dim", g.feature_dim, "Region feature size");
  cmd.add_option("--max-retries", g.max_retries, "Attempts per scene before failing");
}

template <class Get>
void bind(CLI::App& cmd, ExperimentSpec& flags, SpecFlags& f, const std::string& name,
          const std::string& help, Get get) {
  const CLI::Option* o = cmd.add_option(name, get(flags), help);
  f.copies.emplace_back(o, [get](const ExperimentSpec& from, ExperimentSpec& to) {
    get(to) = get(const_cast<ExperimentSpec&>(from));
  });
}

#define SPEC_FIELD(expr) [](ExperimentSpec& s) -> auto& { return s.expr; }

void add_spec_flags(CLI::App& cmd, ExperimentSpec& s, SpecFlags& f) {
  cmd.add_option("--spec", f.spec_file, "Experiment spec JSON; given flags override it");
  cmd.add_option("--mode", f.mode, "normal, random, reversed, vanilla or top-k(K)");
  cmd.add_option("--layers", f.layers, "Layer structure, e.g. 2N->4S");
  cmd.add_option("--decay-steps", f.decay_steps, "Comma-separated decay iterations");
  const CLI::Option* beta =
      cmd.add_flag("--learned-beta", s.model.learned_beta, "Learn per-relation attention offsets");
  f.copies.emplace_back(beta, [](const ExperimentSpec& from, ExperimentSpec& to) {
    to.model.learned_beta = from.model.learned_beta;
  });
  bind(cmd, s, f, "--name", "Experiment name", SPEC_FIELD(name));
  bind(cmd, s, f, "--seed", "Seed for data, init, shuffling and graphs", SPEC_FIELD(seed));
  bind(cmd, s, f, "--test-seed", "Seed of the test split (default seed + 1)",
       SPEC_FIELD(test_seed));
  bind(cmd, s, f, "--d-model", "Hidden size", SPEC_FIELD(model.d_model));
  bind(cmd, s, f, "--heads", "Attention heads", SPEC_FIELD(model.heads));
  bind(cmd, s, f, "--intermediate", "Feed-forward size", SPEC_FIELD(model.intermediate));
  bind(cmd, s, f, "--context", "Relations per head (c)", SPEC_FIELD(model.context));
  bind(cmd, s, f, "--dropout", "Dropout rate", SPEC_FIELD(model.dropout));
  bind(cmd, s, f, "--max-steps", "Decoding step limit", SPEC_FIELD(model.max_steps));
  bind(cmd, s, f, "--n-train", "Generated training scenes", SPEC_FIELD(n_train));
  bind(cmd, s, f, "--n-test", "Generated test scenes", SPEC_FIELD(n_test));
  bind(cmd, s, f, "--train", "Training dataset file", SPEC_FIELD(train_path));
  bind(cmd, s, f, "--test", "Test dataset file", SPEC_FIELD(test_path));
  bind(cmd, s, f, "--epochs", "Training epochs", SPEC_FIELD(epochs));
  bind(cmd, s, f, "--batch-size", "Scenes per update", SPEC_FIELD(batch_size));
  bind(cmd, s, f, "--lr", "Base learning rate", SPEC_FIELD(schedule.base_lr));
  bind(cmd, s, f, "--warmup", "Warmup iterations", SPEC_FIELD(schedule.warmup_iterations));
  bind(cmd, s, f, "--clip", "Gradient clipping norm", SPEC_FIELD(schedule.clip_norm));
  bind(cmd, s, f, "--beam", "Beam size at evaluation (1 = greedy)", SPEC_FIELD(beam));
  bind(cmd, s, f, "--threads", "Threads for generation and evaluation",
       SPEC_FIELD(eval_threads));
  bind(cmd, s, f, "--canvas-width", "Canvas width", SPEC_FIELD(generator.canvas_width));
  bind(cmd, s, f, "--canvas-height", "Canvas height", SPEC_FIELD(generator.canvas_height));
  bind(cmd, s, f, "--min-boxes", "Fewest text boxes per scene",
       SPEC_FIELD(generator.min_text_boxes));
  bind(cmd, s, f, "--max-boxes", "Most text boxes per scene",
       SPEC_FIELD(generator.max_text_boxes));
  bind(cmd, s, f, "--max-objects", "Most object regions per scene",
       SPEC_FIELD(generator.max_objects));
  bind(cmd, s, f, "--nest-probability", "Chance a text box is nested inside a region",
       SPEC_FIELD(generator.nest_probability));
  bind(cmd, s, f, "--feature-dim", "Region feature size", SPEC_FIELD(generator.feature_dim));
}

#undef SPEC_FIELD

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return nlohmann::json::parse(in);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Starts from the experiment spec file (or the desk defaults) and applies only the
// flags given on the command line.
ExperimentSpec resolve_spec(const CLI::App& cmd, const ExperimentSpec& flags,
                            const SpecFlags& f) {
  ExperimentSpec s = f.spec_file.empty()
                         ? sat::desk_spec()
                         : sat::spec_from_json(read_json(f.spec_file), sat::desk_spec());
  for (const auto& [opt, copy] : f.copies) {
    if (opt->count() > 0) copy(flags, s);
  }
  if (cmd.count("--mode") > 0 || f.spec_file.empty()) s.mode = sat::parse_graph_mode(f.mode);
  if (!f.layers.empty()) s.model.layers = sat::parse_structure(f.layers);
  if (!f.decay_steps.empty()) {
    s.schedule.decay_steps.clear();
    std::stringstream in(f.decay_steps);
    for (std::string item; std::getline(in, item, ',');) {
      s.schedule.decay_steps.push_back(std::stol(item));
    }
  }
  return s;
}

void progress(const std::string& msg) { std::cerr << msg << '\n'; }

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially aware multimodal transformer: data, training and ablations"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic spatial-QA dataset");
  GeneratorParams gen_params;
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  unsigned gen_threads = 1;
  std::string gen_out;
  gen->add_option("-n,--count", gen_n, "Number of scenes");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--threads", gen_threads, "Worker threads");
  gen->add_option("-o,--out", gen_out, "Output file (default stdout)");
  add_generator_flags(*gen, gen_params);

  // graph
  auto* graph = app.add_subcommand("graph", "Emit the relation graph of a scene");
  std::string graph_in;
  std::size_t graph_index = 0;
  std::string graph_out;
  std::string graph_variant = "normal";
  std::uint64_t graph_seed = 1;
  std::size_t bias_heads = 0;
  std::size_t bias_context = 1;
  graph->add_option("scene", graph_in, "Scene JSON or synthetic dataset file")->required();
  graph->add_option("--index", graph_index, "Scene index within a dataset file");
  graph->add_option("--variant", graph_variant, "normal, random or reversed");
  graph->add_option("--seed", graph_seed, "Seed for the random variant");
  graph->add_option("--bias-heads", bias_heads,
                    "Also emit spatial-layer attention masks for this many heads");
  graph->add_option("--context", bias_context, "Relations per head for the masks");
  graph->add_option("-o,--out", graph_out, "Output file (default stdout)");

  // train
  auto* train = app.add_subcommand("train", "Train a model and report held-out accuracy");
  ExperimentSpec train_spec = sat::desk_spec();
  SpecFlags train_flags;
  std::string train_report;
  std::string train_checkpoint;
  add_spec_flags(*train, train_spec, train_flags);
  train->add_option("-o,--report", train_report, "Report file (default stdout)");
  train->add_option("--checkpoint", train_checkpoint, "Write the trained model here");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out scenes");
  ExperimentSpec eval_spec = sat::desk_spec();
  SpecFlags eval_flags;
  std::string eval_checkpoint;
  std::string eval_report;
  add_spec_flags(*eval, eval_spec, eval_flags);
  eval->add_option("--checkpoint", eval_checkpoint, "Model checkpoint")->required();
  eval->add_option("-o,--report", eval_report, "Report file (default stdout)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of variants");
  ExperimentSpec ablate_spec = sat::desk_spec();
  SpecFlags ablate_flags;
  std::vector<std::string> grid_modes;
  std::vector<std::string> grid_layers;
  std::vector<std::size_t> grid_contexts;
  std::string ablate_report;
  std::string ablate_table;
  add_spec_flags(*ablate, ablate_spec, ablate_flags);
  ablate->add_option("--modes", grid_modes, "Graph modes to sweep")->delimiter(',');
  ablate->add_option("--structures", grid_layers, "Layer structures to sweep")->delimiter(',');
  ablate->add_option("--contexts", grid_contexts, "Context sizes to sweep")->delimiter(',');
  ablate->add_option("-o,--report", ablate_report, "JSON report file (default stdout)");
  ablate->add_option("--table", ablate_table, "Plain-text results table file");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck",
                                  "Check model gradients against finite differences");
  std::uint64_t grad_seed = 1;
  double grad_tol = 1e-5;
  double grad_step = 1e-5;
  grad->add_option("--seed", grad_seed, "Seed for weights and inputs");
  grad->add_option("--tolerance", grad_tol, "Largest allowed relative error");
  grad->add_option("--step", grad_step, "Central-difference step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto scenes = sat::generate_dataset(gen_n, gen_params, gen_seed, gen_threads);
      write_text(gen_out, sat::dataset_to_json(scenes, gen_params, gen_seed).dump() + "\n");
      return 0;
    }

    if (*graph) {
      const nlohmann::json j = read_json(graph_in);
      sat::Scene scene;
      if (j.contains("scenes")) {
        scene = sat::dataset_from_json(j).at(graph_index).scene;
      } else {
        scene = sat::scene_from_json(j);
      }
      sat::InferenceGraph kind = sat::InferenceGraph::kNormal;
      if (graph_variant == "random") kind = sat::InferenceGraph::kRandom;
      else if (graph_variant == "reversed") kind = sat::InferenceGraph::kReversed;
      else if (graph_variant != "normal") throw sat::ConfigError("unknown variant " + graph_variant);
      const sat::SpatialGraph g = sat::make_graph(scene, kind, graph_seed);
      nlohmann::json out = sat::graph_to_json(g);
      if (bias_heads > 0) {
        const auto assign = sat::assign_head_relations(bias_heads, bias_context);
        const sat::Vocabulary words;
        const sat::ModalityLayout layout{words.encode(scene.question).size(),
                                         scene.objects.size(), scene.ocr.size(), 1};
        out["bias"] = sat::bias_to_json(sat::build_bias(g, layout, assign, true));
        nlohmann::json unowned = nlohmann::json::array();
        for (auto r : assign.unowned()) unowned.push_back(std::string(relation_name(r)));
        out["unowned_relations"] = unowned;
      }
      write_text(graph_out, out.dump(2) + "\n");
      return 0;
    }

    if (*train) {
      const ExperimentSpec spec = resolve_spec(*train, train_spec, train_flags);
      const double t0 = cpu_seconds();
      auto result = sat::run_experiment(spec, progress);
      std::cerr << "cpu seconds: " << cpu_seconds() - t0 << '\n';
      if (!train_checkpoint.empty()) sat::save_checkpoint(result.model, train_checkpoint);
      write_text(train_report, result.report.dump(2) + "\n");
      std::cerr << sat::results_table({result.report});
      return 0;
    }

    if (*eval) {
      const ExperimentSpec spec = resolve_spec(*eval, eval_spec, eval_flags);
      const sat::Model model = sat::load_checkpoint(eval_checkpoint);
      nlohmann::json report = sat::evaluate_model(model, spec);
      report["checkpoint"] = eval_checkpoint;
      report["model_config"] = sat::config_to_json(model.config());
      write_text(eval_report, report.dump(2) + "\n");
      return 0;
    }

    if (*ablate) {
      const ExperimentSpec base = resolve_spec(*ablate, ablate_spec, ablate_flags);
      if (grid_modes.empty()) grid_modes = {base.mode.name()};
      if (grid_layers.empty()) grid_layers = {sat::structure_string(base.model.layers)};
      if (grid_contexts.empty()) grid_contexts = {base.model.context};
      std::vector<nlohmann::json> reports;
      for (const auto& layers : grid_layers) {
        for (const auto& mode : grid_modes) {
          for (std::size_t c : grid_contexts) {
            ExperimentSpec s = base;
            s.mode = sat::parse_graph_mode(mode);
            s.model.layers = sat::parse_structure(layers);
            s.model.context = c;
            s.name = layers + "/" + s.mode.name() + "/c" + std::to_string(c);
            std::cerr << "== " << s.name << '\n';
            reports.push_back(sat::run_experiment(s, progress).report);
          }
        }
      }
      const std::string table = sat::results_table(reports);
      write_text(ablate_report, nlohmann::json(reports).dump(2) + "\n");
      if (!ablate_table.empty()) write_text(ablate_table, table);
      std::cerr << table;
      return 0;
    }

    if (*grad) {
      sat::GradCheckOptions opts;
      opts.step = grad_step;
      const auto report = sat::gradcheck_model(sat::gradcheck_config(), grad_seed, opts);
      std::cout << "checked " << report.checked << " entries; worst " << report.worst.name
                << "[" << report.worst.index << "] analytic " << report.worst.analytic
                << " numeric " << report.worst.numeric << " rel error "
                << report.worst.rel_error << '\n';
      return report.max_rel_error() <= grad_tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
