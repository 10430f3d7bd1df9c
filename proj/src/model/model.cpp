#include "sat/model.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sat/ops.hpp"

namespace sat {

namespace {

enum TypeRow : std::size_t { kQuesType = 0, kObjType, kOcrType, kAnsType };

Tensor rows_tensor(const std::vector<std::vector<double>>& rows, std::size_t dim,
                   const char* what) {
  std::vector<double> flat;
  flat.reserve(rows.size() * dim);
  for (const auto& r : rows) {
    if (r.size() != dim) {
      throw IngestError(std::string(what) + " feature has length " +
                        std::to_string(r.size()) + ", expected " +
                        std::to_string(dim));
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({rows.size(), dim}, std::move(flat));
}

Tensor box_tensor(const std::vector<BoundingBox>& boxes, double w, double h) {
  std::vector<double> flat;
  flat.reserve(boxes.size() * 4);
  for (const auto& b : boxes) {
    flat.insert(flat.end(), {b.x_min / w, b.y_min / h, b.x_max / w, b.y_max / h});
  }
  return Tensor::from({boxes.size(), 4}, std::move(flat));
}

Tensor row_of(const Parameter& table, std::size_t row) {
  const std::size_t ids[1] = {row};
  return embedding(table.tensor, ids);
}

}  // namespace

std::vector<LayerKind> parse_structure(const std::string& text) {
  std::vector<LayerKind> out;
  std::size_t count = 0;
  bool have_count = false;
  for (char ch : text) {
    if (std::isdigit(static_cast<unsigned char>(ch))) {
      count = count * 10 + static_cast<std::size_t>(ch - '0');
      have_count = true;
    } else if (ch == 'N' || ch == 'n' || ch == 'S' || ch == 's') {
      const LayerKind kind =
          (ch == 'N' || ch == 'n') ? LayerKind::kNormal : LayerKind::kSpatial;
      out.insert(out.end(), have_count ? count : 1, kind);
      count = 0;
      have_count = false;
    } else if (ch == '-' || ch == '>' || ch == ' ' || ch == ',') {
      if (have_count) throw ConfigError("dangling count in structure '" + text + "'");
    } else {
      throw ConfigError("bad character in layer structure '" + text + "'");
    }
  }
  if (have_count) throw ConfigError("dangling count in structure '" + text + "'");
  if (out.empty()) throw ConfigError("empty layer structure");
  return out;
}

std::string structure_string(const std::vector<LayerKind>& layers) {
  std::ostringstream os;
  std::size_t i = 0;
  bool first = true;
  while (i < layers.size()) {
    std::size_t j = i;
    while (j < layers.size() && layers[j] == layers[i]) ++j;
    if (!first) os << "->";
    os << (j - i) << (layers[i] == LayerKind::kNormal ? 'N' : 'S');
    first = false;
    i = j;
  }
  return os.str();
}

std::vector<std::string> ModelConfig::validate() const {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (layers.empty()) throw ConfigError("model needs at least one layer");
  if (vocab_size < 2) throw ConfigError("vocabulary must hold begin and end tokens");
  if (max_steps < 1) throw ConfigError("max decoding steps must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  std::vector<std::string> warnings;
  const bool any_spatial = std::find(layers.begin(), layers.end(),
                                     LayerKind::kSpatial) != layers.end();
  if (any_spatial) {
    assign_head_relations(heads, context);  // range check on c
    if (layers.front() == LayerKind::kSpatial) {
      warnings.push_back(
          "first layer is spatial: question tokens never attend to the image");
    }
    const auto unowned = assign_head_relations(heads, context).unowned();
    if (!unowned.empty() && top_k == 0) {
      std::string msg = "no head owns:";
      for (Relation r : unowned) msg += " " + std::string(relation_name(r));
      warnings.push_back(msg);
    }
  }
  return warnings;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"embedding_size", c.d_model},
      {"num_attention_heads", c.heads},
      {"multimodal_layers", structure_string(c.layers)},
      {"intermediate_size", c.intermediate},
      {"context_size", c.context},
      {"vocabulary_size", c.vocab_size},
      {"max_decoding_steps", c.max_steps},
      {"dropout", c.dropout},
      {"layer_norm_eps", c.ln_eps},
      {"question_vocabulary_size", c.question_vocab},
      {"object_feature_size", c.obj_feature_dim},
      {"ocr_feature_size", c.ocr_feature_dim},
      {"learned_relation_bias", c.learned_beta},
      {"top_k", c.top_k},
      {"init_std", c.init_std},
      {"init_seed", c.init_seed},
  };
}

ModelConfig config_from_json(const nlohmann::json& j, ModelConfig c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("embedding_size", c.d_model);
  get("num_attention_heads", c.heads);
  if (j.contains("multimodal_layers")) {
    c.layers = parse_structure(j.at("multimodal_layers").get<std::string>());
  }
  get("intermediate_size", c.intermediate);
  get("context_size", c.context);
  get("vocabulary_size", c.vocab_size);
  get("max_decoding_steps", c.max_steps);
  get("dropout", c.dropout);
  get("layer_norm_eps", c.ln_eps);
  get("question_vocabulary_size", c.question_vocab);
  get("object_feature_size", c.obj_feature_dim);
  get("ocr_feature_size", c.ocr_feature_dim);
  get("learned_relation_bias", c.learned_beta);
  get("top_k", c.top_k);
  get("init_std", c.init_std);
  get("init_seed", c.init_seed);
  return c;
}

std::vector<BoundingBox> TokenBatch::region_boxes() const {
  std::vector<BoundingBox> out = obj_boxes;
  out.insert(out.end(), ocr_boxes.begin(), ocr_boxes.end());
  return out;
}

Parameter Model::make_param(const std::string& name, Shape shape,
                            std::mt19937_64& rng, double fill) {
  std::vector<double> values(shape_numel(shape));
  if (std::isnan(fill)) {
    std::normal_distribution<double> dist(0.0, cfg_.init_std);
    for (double& v : values) v = dist(rng);
  } else {
    std::fill(values.begin(), values.end(), fill);
  }
  return Parameter(name, Tensor::from(std::move(shape), std::move(values)));
}

Model::Model(ModelConfig cfg)
    : cfg_(std::move(cfg)),
      assign_(assign_head_relations(std::max<std::size_t>(cfg_.heads, 1),
                                    std::clamp<std::size_t>(cfg_.context, 1, 12))) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.init_seed);
  const std::size_t d = cfg_.d_model;
  ques_emb_ = make_param("embed.question", {cfg_.question_vocab, d}, rng);
  obj_proj_ = make_param("embed.obj_feature", {cfg_.obj_feature_dim, d}, rng);
  obj_loc_ = make_param("embed.obj_location", {4, d}, rng);
  ocr_proj_ = make_param("embed.ocr_feature", {cfg_.ocr_feature_dim, d}, rng);
  ocr_loc_ = make_param("embed.ocr_location", {4, d}, rng);
  type_emb_ = make_param("embed.type", {4, d}, rng);
  emb_ln_g_ = make_param("embed.ln_gain", {d}, rng, 1.0);
  emb_ln_b_ = make_param("embed.ln_shift", {d}, rng, 0.0);
  ans_vocab_emb_ = make_param("answer.vocab_embedding", {cfg_.vocab_size, d}, rng);
  ans_pos_emb_ = make_param("answer.position", {cfg_.max_steps, d}, rng);
  ans_ln_g_ = make_param("answer.ln_gain", {d}, rng, 1.0);
  ans_ln_b_ = make_param("answer.ln_shift", {d}, rng, 0.0);

  const std::size_t ff = cfg_.intermediate;
  for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams lp{
        make_param(p + "wq", {d, d}, rng),       make_param(p + "bq", {d}, rng, 0.0),
        make_param(p + "wk", {d, d}, rng),       make_param(p + "bk", {d}, rng, 0.0),
        make_param(p + "wv", {d, d}, rng),       make_param(p + "bv", {d}, rng, 0.0),
        make_param(p + "wo", {d, d}, rng),       make_param(p + "bo", {d}, rng, 0.0),
        make_param(p + "ln1_gain", {d}, rng, 1.0), make_param(p + "ln1_shift", {d}, rng, 0.0),
        make_param(p + "w1", {d, ff}, rng),      make_param(p + "b1", {ff}, rng, 0.0),
        make_param(p + "w2", {ff, d}, rng),      make_param(p + "b2", {d}, rng, 0.0),
        make_param(p + "ln2_gain", {d}, rng, 1.0), make_param(p + "ln2_shift", {d}, rng, 0.0),
        std::nullopt};
    if (cfg_.learned_beta && cfg_.layers[l] == LayerKind::kSpatial) {
      lp.beta = make_param(p + "relation_bias", {cfg_.heads, HeadAssignment::kSlots},
                           rng, 0.0);
    }
    layers_.push_back(std::move(lp));
  }

  vocab_w_ = make_param("output.vocab_w", {d, cfg_.vocab_size}, rng);
  vocab_b_ = make_param("output.vocab_b", {cfg_.vocab_size}, rng, 0.0);
  ocr_ptr_w_ = make_param("output.ocr_pointer_w", {d, d}, rng);
  ocr_ptr_b_ = make_param("output.ocr_pointer_b", {d}, rng, 0.0);
  ans_ptr_w_ = make_param("output.answer_pointer_w", {d, d}, rng);
  ans_ptr_b_ = make_param("output.answer_pointer_b", {d}, rng, 0.0);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = {&ques_emb_,      &obj_proj_,     &obj_loc_,
                                 &ocr_proj_,      &ocr_loc_,      &type_emb_,
                                 &emb_ln_g_,      &emb_ln_b_,     &ans_vocab_emb_,
                                 &ans_pos_emb_,   &ans_ln_g_,     &ans_ln_b_};
  for (auto& l : layers_) {
    for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                         &l.ln1_g, &l.ln1_b, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_g,
                         &l.ln2_b}) {
      out.push_back(p);
    }
    if (l.beta) out.push_back(&*l.beta);
  }
  for (Parameter* p : {&vocab_w_, &vocab_b_, &ocr_ptr_w_, &ocr_ptr_b_, &ans_ptr_w_,
                       &ans_ptr_b_}) {
    out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Parameter* Model::find(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->tensor.numel();
  return n;
}

Tensor Model::embed(const TokenBatch& batch) const {
  std::vector<Tensor> parts;
  if (!batch.question_ids.empty()) {
    parts.push_back(add_row(embedding(ques_emb_.tensor, batch.question_ids),
                            row_of(type_emb_, kQuesType)));
  }
  auto region = [&](const std::vector<std::vector<double>>& feats,
                    const std::vector<BoundingBox>& boxes, const Parameter& proj,
                    const Parameter& loc, std::size_t type, const char* what) {
    if (feats.size() != boxes.size()) {
      throw IngestError(std::string(what) + ": " + std::to_string(feats.size()) +
                        " features for " + std::to_string(boxes.size()) + " boxes");
    }
    if (boxes.empty()) return;
    Tensor f = matmul(rows_tensor(feats, proj.tensor.dim(0), what), proj.tensor);
    Tensor l = matmul(box_tensor(boxes, batch.image_width, batch.image_height),
                      loc.tensor);
    parts.push_back(add_row(add(f, l), row_of(type_emb_, type)));
  };
  region(batch.obj_features, batch.obj_boxes, obj_proj_, obj_loc_, kObjType, "object");
  region(batch.ocr_features, batch.ocr_boxes, ocr_proj_, ocr_loc_, kOcrType, "OCR");
  if (parts.empty()) {
    throw IngestError("scene has no question, object or OCR tokens");
  }
  Tensor x = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return layer_norm(x, emb_ln_g_.tensor, emb_ln_b_.tensor, cfg_.ln_eps);
}

Tensor Model::answer_inputs(const TokenBatch& batch, const Tensor& x,
                            const std::vector<std::size_t>& prev) const {
  const std::size_t vocab = cfg_.vocab_size;
  const std::size_t ocr0 = batch.question_ids.size() + batch.obj_boxes.size();
  std::vector<Tensor> rows;
  rows.push_back(row_of(ans_vocab_emb_, cfg_.begin_id()));
  // Consecutive vocabulary tokens share one gather.
  std::vector<std::size_t> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    rows.push_back(embedding(ans_vocab_emb_.tensor, pending));
    pending.clear();
  };
  for (std::size_t tok : prev) {
    if (tok < vocab) {
      pending.push_back(tok);
    } else {
      flush();
      rows.push_back(slice_rows(x, ocr0 + (tok - vocab), 1));
    }
  }
  flush();
  Tensor fed = rows.size() == 1 ? rows.front() : concat_rows(rows);
  std::vector<std::size_t> steps(prev.size() + 1);
  std::iota(steps.begin(), steps.end(), 0);
  Tensor a = add(fed, embedding(ans_pos_emb_.tensor, steps));
  a = add_row(a, row_of(type_emb_, kAnsType));
  return layer_norm(a, ans_ln_g_.tensor, ans_ln_b_.tensor, cfg_.ln_eps);
}

Tensor Model::layer_bias(LayerKind kind, const SpatialGraph& graph,
                         const ModalityLayout& layout, AttentionBias* raw) const {
  const bool spatial = kind == LayerKind::kSpatial && cfg_.top_k == 0;
  AttentionBias b = spatial ? build_bias(graph, layout, assign_, true)
                            : build_dense_bias(layout, cfg_.heads);
  Tensor t = Tensor::from({b.heads, b.n, b.n}, b.mask);
  if (raw) *raw = std::move(b);
  return t;
}

Tensor Model::run_layer(std::size_t index, const Tensor& x, const Tensor& bias,
                        LayerKind kind, const ModalityLayout& layout,
                        const ForwardOptions& opts) const {
  const LayerParams& lp = layers_.at(index);
  const std::size_t heads = cfg_.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
  const bool drop = opts.training && cfg_.dropout > 0.0;
  if (drop && opts.rng == nullptr) {
    throw std::invalid_argument("dropout during training needs an rng");
  }

  Tensor q = split_heads(add_row(matmul(x, lp.wq.tensor), lp.bq.tensor), heads);
  Tensor k = split_heads(add_row(matmul(x, lp.wk.tensor), lp.bk.tensor), heads);
  Tensor v = split_heads(add_row(matmul(x, lp.wv.tensor), lp.bv.tensor), heads);
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);

  Tensor w = masked_softmax(scores, bias);
  if (kind == LayerKind::kSpatial && cfg_.top_k > 0) w = top_k_filter(w, cfg_.top_k);
  if (opts.trace) opts.trace->attention.push_back(w);

  Tensor ctx = merge_heads(matmul(w, v));
  Tensor attn = add_row(matmul(ctx, lp.wo.tensor), lp.bo.tensor);
  if (drop) attn = dropout(attn, cfg_.dropout, *opts.rng);
  Tensor h = layer_norm(add(x, attn), lp.ln1_g.tensor, lp.ln1_b.tensor, cfg_.ln_eps);

  Tensor ff = gelu(add_row(matmul(h, lp.w1.tensor), lp.b1.tensor));
  ff = add_row(matmul(ff, lp.w2.tensor), lp.b2.tensor);
  if (drop) ff = dropout(ff, cfg_.dropout, *opts.rng);
  Tensor out = layer_norm(add(h, ff), lp.ln2_g.tensor, lp.ln2_b.tensor, cfg_.ln_eps);

  const std::size_t nq = layout.n_ques;
  if (kind == LayerKind::kSpatial && cfg_.top_k == 0 && nq > 0) {
    out = concat_rows({slice_rows(x, 0, nq), slice_rows(out, nq, x.dim(0) - nq)});
  }
  if (opts.trace) opts.trace->hidden.push_back(out);
  return out;
}

Tensor Model::run_layers(const Tensor& x, const ModalityLayout& layout,
                         const SpatialGraph& graph, const ForwardOptions& opts) const {
  if (x.rank() != 2 || x.dim(0) != layout.total() || x.dim(1) != cfg_.d_model) {
    throw LayoutError("layer input " + shape_str(x.shape()) +
                      " does not match layout of " + std::to_string(layout.total()) +
                      " tokens");
  }
  std::optional<Tensor> dense;
  std::optional<Tensor> spatial;
  AttentionBias dense_raw;
  AttentionBias spatial_raw;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
  Tensor h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerKind kind = cfg_.layers[l];
    const bool graph_layer = kind == LayerKind::kSpatial && cfg_.top_k == 0;
    Tensor bias;
    if (graph_layer) {
      if (!spatial) spatial = layer_bias(kind, graph, layout, &spatial_raw);
      bias = *spatial;
      if (layers_[l].beta) {
        bias = scale(relation_bias(layers_[l].beta->tensor, spatial_raw.mask,
                                   spatial_raw.relation_slot, cfg_.heads,
                                   layout.total()),
                     inv_sqrt_dh);
      }
    } else {
      if (!dense) dense = layer_bias(kind, graph, layout, &dense_raw);
      bias = *dense;
    }
    if (opts.trace) opts.trace->bias.push_back(graph_layer ? spatial_raw : dense_raw);
    h = run_layer(l, h, bias, kind, layout, opts);
  }
  return h;
}

Tensor Model::forward(const TokenBatch& batch, const SpatialGraph& graph,
                      const std::vector<std::size_t>& prev,
                      const ForwardOptions& opts) const {
  const ModalityLayout layout = batch.layout(prev.size() + 1);
  if (graph.size() != layout.region_count()) {
    throw LayoutError("graph has " + std::to_string(graph.size()) +
                      " nodes for " + std::to_string(layout.region_count()) +
                      " object/OCR tokens");
  }
  if (layout.n_ans > cfg_.max_steps) {
    throw std::out_of_range("decoding step " + std::to_string(layout.n_ans - 1) +
                            " beyond the " + std::to_string(cfg_.max_steps) +
                            "-step limit");
  }
  for (std::size_t tok : prev) {
    if (tok >= cfg_.vocab_size + layout.n_ocr) {
      throw std::out_of_range("answer token " + std::to_string(tok) +
                              " outside vocabulary + OCR range");
    }
  }

  Tensor x = embed(batch);
  Tensor h = concat_rows({x, answer_inputs(batch, x, prev)});
  h = run_layers(h, layout, graph, opts);

  Tensor ans = slice_rows(h, layout.ans_begin(), layout.n_ans);
  Tensor vocab = add_row(matmul(ans, vocab_w_.tensor), vocab_b_.tensor);
  if (layout.n_ocr == 0) return vocab;
  Tensor ocr = slice_rows(h, layout.ocr_begin(), layout.n_ocr);
  Tensor ocr_p = add_row(matmul(ocr, ocr_ptr_w_.tensor), ocr_ptr_b_.tensor);
  Tensor ans_p = add_row(matmul(ans, ans_ptr_w_.tensor), ans_ptr_b_.tensor);
  Tensor copy = scale(matmul(ans_p, transpose(ocr_p)),
                      1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
  return concat_cols(vocab, copy);
}

nlohmann::json Model::to_json() const {
  nlohmann::json params = nlohmann::json::object();
  for (const auto* p : parameters()) {
    params[p->name] = {{"shape", p->tensor.shape()},
                       {"data", std::vector<double>(p->tensor.data().begin(),
                                                    p->tensor.data().end())}};
  }
  return {{"format", "sat-checkpoint"},
          {"version", 1},
          {"config", config_to_json(cfg_)},
          {"parameters", std::move(params)}};
}

Model Model::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "sat-checkpoint" || j.value("version", 0) != 1) {
    throw LoadError("not a version-1 checkpoint");
  }
  Model m(config_from_json(j.at("config")));
  const auto& params = j.at("parameters");
  for (auto* p : m.parameters()) {
    if (!params.contains(p->name)) throw LoadError("checkpoint lacks " + p->name);
    const auto& entry = params.at(p->name);
    if (entry.at("shape").get<Shape>() != p->tensor.shape()) {
      throw LoadError("shape mismatch for " + p->name + ": checkpoint " +
                      shape_str(entry.at("shape").get<Shape>()) + ", model " +
                      shape_str(p->tensor.shape()));
    }
    const auto values = entry.at("data").get<std::vector<double>>();
    std::copy(values.begin(), values.end(), p->tensor.mutable_data().begin());
  }
  if (params.size() != m.parameters().size()) {
    throw LoadError("checkpoint has parameters the model does not know");
  }
  return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write checkpoint " + path);
  out << model.to_json().dump() << '\n';
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint " + path + ": " + e.what());
  }
  return Model::from_json(j);
}

}  // namespace sat
