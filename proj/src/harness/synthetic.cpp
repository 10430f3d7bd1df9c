#include "sat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

namespace sat {

namespace {

constexpr std::array<const char*, kNumQueryRelations> kQueryNames = {
    "right", "left", "above", "below", "contains", "inside"};

// Question template per query; "{}" is replaced by the anchor label.
constexpr std::array<const char*, kNumQueryRelations> kTemplates = {
    "right of {}", "left of {}",       "above the {}",
    "below the {}", "what contains {}", "inside the {}"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fill_template(QueryRelation q, const std::string& anchor) {
  std::string t = kTemplates[static_cast<std::size_t>(q)];
  t.replace(t.find("{}"), 2, anchor);
  return t;
}

bool intersects_any(const BoundingBox& b, const std::vector<BoundingBox>& placed,
                    bool allow_ancestors) {
  for (const auto& p : placed) {
    if (intersection_area(b, p) <= 0.0) continue;
    if (allow_ancestors && p.contains(b)) continue;
    return true;
  }
  return false;
}

class Placer {
 public:
  Placer(const GeneratorParams& p, std::mt19937_64& rng) : p_(p), rng_(rng) {}

  std::optional<BoundingBox> free_box(double lo, double hi) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double w = uniform_int(lo, hi);
      const double h = uniform_int(lo, hi);
      if (w > p_.canvas_width || h > p_.canvas_height) continue;
      const double x = uniform_int(0.0, p_.canvas_width - w);
      const double y = uniform_int(0.0, p_.canvas_height - h);
      const BoundingBox b{x, y, x + w, y + h};
      if (!intersects_any(b, placed_, false)) return b;
    }
    return std::nullopt;
  }

  std::optional<BoundingBox> nested_box(const BoundingBox& outer) {
    const double w_hi = std::min(p_.max_size, std::floor(0.6 * outer.width()));
    const double h_hi = std::min(p_.max_size, std::floor(0.6 * outer.height()));
    if (w_hi < p_.min_size || h_hi < p_.min_size) return std::nullopt;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double w = uniform_int(p_.min_size, w_hi);
      const double h = uniform_int(p_.min_size, h_hi);
      const double x = uniform_int(outer.x_min + 1.0, outer.x_max - 1.0 - w);
      const double y = uniform_int(outer.y_min + 1.0, outer.y_max - 1.0 - h);
      const BoundingBox b{x, y, x + w, y + h};
      if (!intersects_any(b, placed_, true)) return b;
    }
    return std::nullopt;
  }

  void add(const BoundingBox& b) { placed_.push_back(b); }
  const std::vector<BoundingBox>& placed() const { return placed_; }

 private:
  double uniform_int(double lo, double hi) {
    const auto a = static_cast<long>(std::ceil(lo));
    const auto b = static_cast<long>(std::floor(hi));
    if (b <= a) return static_cast<double>(a);
    return static_cast<double>(std::uniform_int_distribution<long>(a, b)(rng_));
  }

  const GeneratorParams& p_;
  std::mt19937_64& rng_;
  std::vector<BoundingBox> placed_;
};

// One attempt at a scene answering `q`; nullopt when the layout admits no
// anchor with exactly one answer.
std::optional<SyntheticScene> try_scene(const GeneratorParams& p, QueryRelation q,
                                        std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_text_dist(p.min_text_boxes,
                                                         p.max_text_boxes);
  std::uniform_int_distribution<std::size_t> n_obj_dist(0, p.max_objects);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n_obj = n_obj_dist(rng);
  const std::size_t n_text = n_text_dist(rng);

  Placer placer(p, rng);
  Scene s;
  s.image_width = p.canvas_width;
  s.image_height = p.canvas_height;

  for (std::size_t i = 0; i < n_obj; ++i) {
    auto b = placer.free_box(p.object_min_size, p.object_max_size);
    if (!b) return std::nullopt;
    placer.add(*b);
    const auto& cls =
        p.object_classes[std::uniform_int_distribution<std::size_t>(
            0, p.object_classes.size() - 1)(rng)];
    s.objects.push_back({*b, cls, word_feature(cls, p.feature_dim)});
  }

  std::vector<std::string> words = p.alphabet;
  std::shuffle(words.begin(), words.end(), rng);
  for (std::size_t i = 0; i < n_text; ++i) {
    std::optional<BoundingBox> b;
    if (!placer.placed().empty() && unit(rng) < p.nest_probability) {
      const auto& regions = placer.placed();
      const auto& outer = regions[std::uniform_int_distribution<std::size_t>(
          0, regions.size() - 1)(rng)];
      b = placer.nested_box(outer);
    }
    if (!b) b = placer.free_box(p.min_size, p.max_size);
    if (!b) return std::nullopt;
    placer.add(*b);
    s.ocr.push_back({*b, words[i], word_feature(words[i], p.feature_dim)});
  }

  const auto boxes = s.region_boxes();
  const double diag = std::hypot(p.canvas_width, p.canvas_height);
  std::vector<std::size_t> anchors;
  for (std::size_t a = 0; a < boxes.size(); ++a) {
    if (a < n_obj) {
      const auto same = std::count_if(s.objects.begin(), s.objects.end(),
                                      [&](const SceneObject& o) {
                                        return o.label == s.objects[a].label;
                                      });
      if (same != 1) continue;
    }
    anchors.push_back(a);
  }
  std::shuffle(anchors.begin(), anchors.end(), rng);

  for (std::size_t a : anchors) {
    std::vector<std::size_t> hits;
    for (std::size_t k = 0; k < n_text; ++k) {
      const std::size_t region = n_obj + k;
      if (region == a) continue;
      if (satisfies(q, classify_pair(boxes[a], boxes[region], diag, p.classifier))) {
        hits.push_back(k);
      }
    }
    if (hits.size() != 1) continue;
    const std::string& label = a < n_obj ? s.objects[a].label : s.ocr[a - n_obj].text;
    s.question = fill_template(q, label);
    s.answers.assign(10, s.ocr[hits[0]].text);
    return SyntheticScene{std::move(s), q, a, hits[0]};
  }
  return std::nullopt;
}

}  // namespace

std::string query_name(QueryRelation q) { return kQueryNames[static_cast<std::size_t>(q)]; }

QueryRelation parse_query(const std::string& name) {
  for (std::size_t i = 0; i < kQueryNames.size(); ++i) {
    if (name == kQueryNames[i]) return static_cast<QueryRelation>(i);
  }
  throw std::invalid_argument("unknown query relation '" + name + "'");
}

bool satisfies(QueryRelation q, Relation r) {
  switch (q) {
    case QueryRelation::kRight:
      return r == Relation::kDir1 || r == Relation::kDir8;
    case QueryRelation::kBelow:
      return r == Relation::kDir2 || r == Relation::kDir3;
    case QueryRelation::kLeft:
      return r == Relation::kDir4 || r == Relation::kDir5;
    case QueryRelation::kAbove:
      return r == Relation::kDir6 || r == Relation::kDir7;
    case QueryRelation::kContains:
      return r == Relation::kInside;
    case QueryRelation::kInside:
      return r == Relation::kContains;
  }
  return false;
}

void GeneratorParams::validate() const {
  auto fail = [](const std::string& msg) { throw GenerationError(msg); };
  if (!(canvas_width > 0.0) || !(canvas_height > 0.0)) fail("canvas must be positive");
  if (min_text_boxes < 2 || min_text_boxes > max_text_boxes) {
    fail("need 2 <= min_text_boxes <= max_text_boxes");
  }
  if (alphabet.size() < max_text_boxes) {
    fail("alphabet has " + std::to_string(alphabet.size()) + " words but scenes hold up to " +
         std::to_string(max_text_boxes) + " text boxes");
  }
  if (max_objects > 0 && object_classes.empty()) fail("objects need at least one class");
  if (!(min_size >= 1.0) || min_size > max_size) fail("need 1 <= min_size <= max_size");
  if (max_objects > 0 && (!(object_min_size >= 1.0) || object_min_size > object_max_size)) {
    fail("need 1 <= object_min_size <= object_max_size");
  }
  if (min_size > std::min(canvas_width, canvas_height)) fail("boxes larger than the canvas");
  if (feature_dim == 0) fail("feature_dim must be positive");
  if (max_retries == 0) fail("max_retries must be positive");
  for (const auto& w : alphabet) {
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) {
      fail("alphabet entries must be single words");
    }
    if (std::count(alphabet.begin(), alphabet.end(), w) != 1) {
      fail("duplicate alphabet word '" + w + "'");
    }
    if (std::find(object_classes.begin(), object_classes.end(), w) != object_classes.end()) {
      fail("'" + w + "' is both a text word and an object class");
    }
  }
}

nlohmann::json generator_to_json(const GeneratorParams& p) {
  return {{"canvas_width", p.canvas_width},
          {"canvas_height", p.canvas_height},
          {"min_text_boxes", p.min_text_boxes},
          {"max_text_boxes", p.max_text_boxes},
          {"max_objects", p.max_objects},
          {"min_size", p.min_size},
          {"max_size", p.max_size},
          {"object_min_size", p.object_min_size},
          {"object_max_size", p.object_max_size},
          {"nest_probability", p.nest_probability},
          {"feature_dim", p.feature_dim},
          {"max_retries", p.max_retries},
          {"alphabet", p.alphabet},
          {"object_classes", p.object_classes},
          {"overlap_iou", p.classifier.overlap_iou},
          {"max_distance_fraction", p.classifier.max_distance_fraction}};
}

GeneratorParams generator_from_json(const nlohmann::json& j, GeneratorParams p) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("canvas_width", p.canvas_width);
  get("canvas_height", p.canvas_height);
  get("min_text_boxes", p.min_text_boxes);
  get("max_text_boxes", p.max_text_boxes);
  get("max_objects", p.max_objects);
  get("min_size", p.min_size);
  get("max_size", p.max_size);
  get("object_min_size", p.object_min_size);
  get("object_max_size", p.object_max_size);
  get("nest_probability", p.nest_probability);
  get("feature_dim", p.feature_dim);
  get("max_retries", p.max_retries);
  get("alphabet", p.alphabet);
  get("object_classes", p.object_classes);
  get("overlap_iou", p.classifier.overlap_iou);
  get("max_distance_fraction", p.classifier.max_distance_fraction);
  return p;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

std::vector<double> word_feature(const std::string& word, std::size_t dim) {
  std::mt19937_64 rng(fnv1a(word));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = u(rng);
  return v;
}

SyntheticScene generate_scene(const GeneratorParams& params, std::uint64_t seed,
                              std::size_t index) {
  std::mt19937_64 rng(derive_seed(seed, 0, index));
  const auto q = static_cast<QueryRelation>(
      std::uniform_int_distribution<std::size_t>(0, kNumQueryRelations - 1)(rng));
  for (std::size_t attempt = 0; attempt < params.max_retries; ++attempt) {
    if (auto s = try_scene(params, q, rng)) {
      s->scene.id = "scene-" + std::to_string(index);
      return std::move(*s);
    }
  }
  throw GenerationError("no valid '" + query_name(q) + "' scene after " +
                        std::to_string(params.max_retries) + " attempts (scene " +
                        std::to_string(index) + ")");
}

std::vector<SyntheticScene> generate_dataset(std::size_t n, const GeneratorParams& params,
                                             std::uint64_t seed, unsigned threads) {
  if (n == 0) throw GenerationError("dataset size must be at least 1");
  params.validate();
  std::vector<SyntheticScene> out(n);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = generate_scene(params, seed, i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) out[i] = generate_scene(params, seed, i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Vocabulary question_vocabulary(const GeneratorParams& params) {
  std::vector<std::string> words;
  for (const char* t : kTemplates) {
    std::istringstream in(t);
    for (std::string w; in >> w;) {
      if (w != "{}") words.push_back(w);
    }
  }
  words.insert(words.end(), params.alphabet.begin(), params.alphabet.end());
  words.insert(words.end(), params.object_classes.begin(), params.object_classes.end());
  return Vocabulary(std::move(words));
}

nlohmann::json dataset_to_json(const std::vector<SyntheticScene>& scenes,
                               const GeneratorParams& params, std::uint64_t seed) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : scenes) {
    auto j = scene_to_json(s.scene);
    j["relation"] = query_name(s.query);
    j["anchor"] = s.anchor;
    j["answer_index"] = s.answer;
    items.push_back(std::move(j));
  }
  return {{"format", "sat-synthetic"},
          {"version", 1},
          {"seed", seed},
          {"generator", generator_to_json(params)},
          {"scenes", std::move(items)}};
}

std::vector<SyntheticScene> dataset_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "sat-synthetic") {
    throw IngestError("not a synthetic dataset file");
  }
  std::vector<SyntheticScene> out;
  for (const auto& item : j.at("scenes")) {
    SyntheticScene s;
    s.scene = scene_from_json(item);
    try {
      s.query = parse_query(item.at("relation").get<std::string>());
      s.anchor = item.at("anchor").get<std::size_t>();
      s.answer = item.at("answer_index").get<std::size_t>();
    } catch (const std::exception& e) {
      throw IngestError(std::string("malformed synthetic scene: ") + e.what());
    }
    if (s.answer >= s.scene.ocr.size() ||
        s.anchor >= s.scene.objects.size() + s.scene.ocr.size()) {
      throw IngestError("synthetic scene index out of range in " + s.scene.id);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<SyntheticScene>& scenes,
                   const GeneratorParams& params, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << dataset_to_json(scenes, params, seed).dump() << '\n';
}

std::vector<SyntheticScene> read_dataset(const std::string& path, GeneratorParams* params) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(path + ": " + e.what());
  }
  if (params != nullptr) *params = generator_from_json(j.value("generator", nlohmann::json::object()));
  return dataset_from_json(j);
}

bool is_spatial_question(const std::string& question) {
  static const std::regex pattern(
      R"(\b(north|south|east|west|up|down|left|right|under|top|bottom|middle|center|above|below|beside|beneath)\b)",
      std::regex::icase | std::regex::ECMAScript);
  return std::regex_search(question, pattern);
}

std::vector<std::string> filter_spatial_questions(const std::vector<std::string>& questions) {
  std::vector<std::string> kept;
  std::copy_if(questions.begin(), questions.end(), std::back_inserter(kept),
               is_spatial_question);
  return kept;
}

}  // namespace sat
