#include <algorithm>
#include <cmath>

#include "vqag/data.hpp"
#include "vqag/head.hpp"

namespace vqag {

const char* to_string(QuestionType t) {
  switch (t) {
    case QuestionType::YesNo: return "yes/no";
    case QuestionType::Number: return "number";
    case QuestionType::Other: return "other";
  }
  return "other";
}

QuestionType question_type_from_string(const std::string& s) {
  if (s == "yes/no") return QuestionType::YesNo;
  if (s == "number") return QuestionType::Number;
  if (s == "other") return QuestionType::Other;
  throw ParseError("unknown question type '" + s + "'");
}

const char* to_string(QuestionTemplate t) {
  switch (t) {
    case QuestionTemplate::Unknown: return "unknown";
    case QuestionTemplate::Count: return "count";
    case QuestionTemplate::Exist: return "exist";
    case QuestionTemplate::Attribute: return "attribute";
    case QuestionTemplate::Relation: return "relation";
  }
  return "unknown";
}

QuestionTemplate question_template_from_string(const std::string& s) {
  if (s == "unknown") return QuestionTemplate::Unknown;
  if (s == "count") return QuestionTemplate::Count;
  if (s == "exist") return QuestionTemplate::Exist;
  if (s == "attribute") return QuestionTemplate::Attribute;
  if (s == "relation") return QuestionTemplate::Relation;
  throw ParseError("unknown question template '" + s + "'");
}

// --------------------------------------------------------------------------
// Dataset bookkeeping

void Dataset::set_answer_classes(std::vector<std::string> classes) {
  answer_classes = std::move(classes);
  class_index.clear();
  for (std::size_t i = 0; i < answer_classes.size(); ++i) class_index[answer_classes[i]] = static_cast<Index>(i);
}

void Dataset::index_scenes() {
  scene_pos_.clear();
  item_pos_.clear();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!scene_pos_.emplace(scenes[i].image_id, i).second) {
      throw ValidationError("duplicate image_id " + std::to_string(scenes[i].image_id));
    }
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!item_pos_.emplace(items[i].id, i).second) {
      throw ValidationError("duplicate question id " + std::to_string(items[i].id));
    }
  }
}

const Scene& Dataset::scene(std::int64_t image_id) const {
  auto it = scene_pos_.find(image_id);
  if (it == scene_pos_.end()) throw InputError("unknown image_id " + std::to_string(image_id));
  return scenes[it->second];
}

const QAItem& Dataset::item(std::int64_t id) const {
  auto it = item_pos_.find(id);
  if (it == item_pos_.end()) throw InputError("unknown question id " + std::to_string(id));
  return items[it->second];
}

bool Dataset::has_item(std::int64_t id) const { return item_pos_.count(id) > 0; }

VectorXd Dataset::targets(const QAItem& item) const {
  const Index n = std::max<Index>(1, static_cast<Index>(item.answers.size()));
  return make_soft_targets(item.answers, class_index, static_cast<Index>(answer_classes.size()), n);
}

Dataset filter_templates(const Dataset& d, const std::vector<QuestionTemplate>& keep) {
  Dataset out;
  out.scenes = d.scenes;
  out.words = d.words;
  out.annotators = d.annotators;
  out.set_answer_classes(d.answer_classes);
  for (const auto& it : d.items) {
    if (std::find(keep.begin(), keep.end(), it.templ) != keep.end()) out.items.push_back(it);
  }
  out.index_scenes();
  return out;
}

std::pair<Dataset, Dataset> split_by_scene(const Dataset& d, std::size_t period) {
  if (period < 2) throw ConfigError("split_by_scene: period must be >= 2");
  Dataset a, b;
  for (Dataset* x : {&a, &b}) {
    x->words = d.words;
    x->annotators = d.annotators;
    x->set_answer_classes(d.answer_classes);
  }
  std::map<std::int64_t, bool> held_out;
  for (std::size_t i = 0; i < d.scenes.size(); ++i) {
    const bool second = i % period == 0;
    held_out[d.scenes[i].image_id] = second;
    (second ? b : a).scenes.push_back(d.scenes[i]);
  }
  for (const auto& it : d.items) (held_out.at(it.scene_id) ? b : a).items.push_back(it);
  a.index_scenes();
  b.index_scenes();
  return {std::move(a), std::move(b)};
}

// --------------------------------------------------------------------------
// Relations

namespace {

// Signed offset of target from anchor along the relation direction, and the
// absolute offset across it.
std::pair<double, double> relation_axes(const Box& target, const Box& anchor, Relation rel) {
  const double dx = target.cx() - anchor.cx();
  const double dy = target.cy() - anchor.cy();  // image y grows downward
  switch (rel) {
    case Relation::LeftOf: return {-dx, std::abs(dy)};
    case Relation::RightOf: return {dx, std::abs(dy)};
    case Relation::Above: return {-dy, std::abs(dx)};
    case Relation::Below: return {dy, std::abs(dx)};
  }
  return {0, 0};
}

const std::vector<std::string>& relation_words(Relation r) {
  static const std::vector<std::string> left{"left", "of"}, right{"right", "of"}, above{"above"}, below{"below"};
  switch (r) {
    case Relation::LeftOf: return left;
    case Relation::RightOf: return right;
    case Relation::Above: return above;
    case Relation::Below: return below;
  }
  return left;
}

// Relations the generator asks about.
constexpr Relation kRelations[] = {Relation::LeftOf, Relation::Above};

}  // namespace

bool satisfies_relation(const Box& target, const Box& anchor, Relation rel, double margin, double band) {
  const auto [along, across] = relation_axes(target, anchor, rel);
  return along >= margin && across <= band;
}

bool relation_ambiguous(const Box& target, const Box& anchor, Relation rel, double margin, double band) {
  if (satisfies_relation(target, anchor, rel, margin, band)) return false;
  const auto [along, across] = relation_axes(target, anchor, rel);
  return along > 0.0 && across <= band + margin;
}

// --------------------------------------------------------------------------
// Generator

void SynthConfig::validate() const {
  if (n_scenes < 1) throw ConfigError("data.n_scenes must be >= 1");
  if (slots < 1) throw ConfigError("data.slots must be >= 1");
  if (objects_min < 1 || objects_min > objects_max || objects_max > slots) {
    throw ConfigError("data: need 1 <= objects_min <= objects_max <= slots");
  }
  if (objects_max > 9) throw ConfigError("data.objects_max must be <= 9 (single-digit count answers)");
  if (colors.empty() || shapes.empty() || sizes.empty()) throw ConfigError("data: attribute vocabularies must be non-empty");
  if (raw_width < static_cast<Index>(colors.size() + shapes.size() + sizes.size())) {
    throw ConfigError("data.raw_width must hold the colour, shape and size one-hot blocks");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
  if (questions_per_scene < 1) throw ConfigError("data.questions_per_scene must be >= 1");
  for (double w : {mix.count, mix.exist, mix.attribute, mix.relation}) {
    if (!(w >= 0.0)) throw ConfigError("data.mix weights must be >= 0");
  }
  if (mix.count + mix.exist + mix.attribute + mix.relation <= 0.0) {
    throw ConfigError("data.mix: at least one template must be enabled");
  }
  if (!(relation_margin >= 0.0) || !(relation_band > 0.0)) throw ConfigError("data: relation margin/band invalid");
}

namespace {

constexpr int kMaxTriesPerScene = 1000;
constexpr int kDraftsPerSlot = 25;
constexpr int kTriesPerPlan = 100;

std::vector<std::string> template_words() {
  return {"how", "many", "objects", "is", "there", "a", "what", "color", "the", "left", "of", "above"};
}

struct Layout {
  std::vector<Box> boxes;
  std::vector<ObjectAttributes> attrs;
};

Layout draw_layout(const SynthConfig& cfg, Rng& rng) {
  const Index span = cfg.objects_max - cfg.objects_min + 1;
  const Index n_obj = cfg.objects_min + static_cast<Index>(rng.index(static_cast<std::uint64_t>(span)));
  Layout l;
  for (Index i = 0; i < cfg.slots; ++i) {
    ObjectAttributes a;
    double side;
    if (i < n_obj) {
      a.color = static_cast<int>(rng.index(cfg.colors.size()));
      a.shape = static_cast<int>(rng.index(cfg.shapes.size()));
      a.size = static_cast<int>(rng.index(cfg.sizes.size()));
      // Sizes map to box sides from 0.08 (smallest) to 0.22 (largest).
      const double frac = cfg.sizes.size() > 1 ? double(a.size) / double(cfg.sizes.size() - 1) : 0.0;
      side = 0.08 + 0.10 * frac + rng.uniform(0.0, 0.04);
    } else {
      side = rng.uniform(0.03, 0.3);
    }
    const double w = side * rng.uniform(0.85, 1.15);
    const double h = side * rng.uniform(0.85, 1.15);
    const double x = rng.uniform(0.0, 1.0 - w);
    const double y = rng.uniform(0.0, 1.0 - h);
    l.boxes.push_back({x, y, x + w, y + h});
    l.attrs.push_back(a);
  }
  // Slot order carries no information.
  std::vector<std::size_t> perm(l.boxes.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  Layout shuffled;
  for (std::size_t i : perm) {
    shuffled.boxes.push_back(l.boxes[i]);
    shuffled.attrs.push_back(l.attrs[i]);
  }
  return shuffled;
}

MatrixXd encode_features(const SynthConfig& cfg, const Layout& l, Rng& rng) {
  MatrixXd f(static_cast<Index>(l.boxes.size()), cfg.raw_width);
  const Index shape_off = static_cast<Index>(cfg.colors.size());
  const Index size_off = shape_off + static_cast<Index>(cfg.shapes.size());
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index j = 0; j < f.cols(); ++j) f(i, j) = rng.normal(0.0, cfg.noise_sigma);
    const auto& a = l.attrs[static_cast<std::size_t>(i)];
    if (!a.is_object()) continue;
    f(i, a.color) += 1.0;
    f(i, shape_off + a.shape) += 1.0;
    f(i, size_off + a.size) += 1.0;
  }
  return f;
}

QuestionTemplate pick_template(const TemplateMix& mix, Rng& rng) {
  const double total = mix.count + mix.exist + mix.attribute + mix.relation;
  double u = rng.uniform() * total;
  if ((u -= mix.count) < 0.0) return QuestionTemplate::Count;
  if ((u -= mix.exist) < 0.0) return QuestionTemplate::Exist;
  if ((u -= mix.attribute) < 0.0) return QuestionTemplate::Attribute;
  if (mix.relation > 0.0) return QuestionTemplate::Relation;
  // Rounding fell off the end: take the last enabled template.
  if (mix.attribute > 0.0) return QuestionTemplate::Attribute;
  if (mix.exist > 0.0) return QuestionTemplate::Exist;
  return QuestionTemplate::Count;
}

struct Draft {
  std::vector<std::string> words;
  std::string answer;
};

std::optional<Draft> draft_count(const SynthConfig& cfg, const Layout& l, Rng& rng) {
  const std::size_t pool = cfg.colors.size() + cfg.shapes.size() + cfg.sizes.size();
  std::size_t pick = rng.index(pool);
  int n = 0;
  std::string word;
  for (const auto& a : l.attrs) {
    if (!a.is_object()) continue;
    if (pick < cfg.colors.size()) n += a.color == static_cast<int>(pick);
    else if (pick < cfg.colors.size() + cfg.shapes.size()) n += a.shape == static_cast<int>(pick - cfg.colors.size());
    else n += a.size == static_cast<int>(pick - cfg.colors.size() - cfg.shapes.size());
  }
  if (pick < cfg.colors.size()) word = cfg.colors[pick];
  else if (pick < cfg.colors.size() + cfg.shapes.size()) word = cfg.shapes[pick - cfg.colors.size()];
  else word = cfg.sizes[pick - cfg.colors.size() - cfg.shapes.size()];
  return Draft{{"how", "many", word, "objects"}, std::to_string(n)};
}

std::optional<Draft> draft_exist(const SynthConfig& cfg, const Layout& l, Rng& rng) {
  const bool want_yes = rng.bernoulli(0.5);
  std::vector<std::pair<int, int>> present, absent;
  for (int c = 0; c < static_cast<int>(cfg.colors.size()); ++c) {
    for (int s = 0; s < static_cast<int>(cfg.shapes.size()); ++s) {
      const bool found = std::any_of(l.attrs.begin(), l.attrs.end(),
                                     [&](const ObjectAttributes& a) { return a.color == c && a.shape == s; });
      (found ? present : absent).emplace_back(c, s);
    }
  }
  const auto& from = want_yes ? present : absent;
  if (from.empty()) return std::nullopt;
  const auto [c, s] = from[rng.index(from.size())];
  return Draft{{"is", "there", "a", cfg.colors[static_cast<std::size_t>(c)], cfg.shapes[static_cast<std::size_t>(s)]},
               want_yes ? "yes" : "no"};
}

std::optional<Draft> draft_attribute(const SynthConfig& cfg, const Layout& l, Rng& rng) {
  const std::size_t i = rng.index(l.attrs.size());
  const auto& a = l.attrs[i];
  if (!a.is_object()) return std::nullopt;
  const auto matches = std::count_if(l.attrs.begin(), l.attrs.end(), [&](const ObjectAttributes& b) {
    return b.shape == a.shape && b.size == a.size;
  });
  if (matches != 1) return std::nullopt;
  return Draft{{"what", "color", "is", "the", cfg.sizes[static_cast<std::size_t>(a.size)],
                cfg.shapes[static_cast<std::size_t>(a.shape)]},
               cfg.colors[static_cast<std::size_t>(a.color)]};
}

// Target of "<shape> <rel> the <anchor>": exactly one object of `shape` (other
// than the anchor) satisfies the relation and none sits near the boundary.
std::optional<std::size_t> relation_referent(const std::vector<Box>& boxes, const std::vector<ObjectAttributes>& attrs,
                                             std::size_t anchor, int shape, Relation rel, const SynthConfig& cfg,
                                             std::size_t* candidates = nullptr) {
  std::optional<std::size_t> hit;
  std::size_t n_candidates = 0;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (i == anchor || attrs[i].shape != shape) continue;
    ++n_candidates;
    if (relation_ambiguous(boxes[i], boxes[anchor], rel, cfg.relation_margin, cfg.relation_band)) return std::nullopt;
    if (satisfies_relation(boxes[i], boxes[anchor], rel, cfg.relation_margin, cfg.relation_band)) {
      if (hit) return std::nullopt;
      hit = i;
    }
  }
  if (candidates != nullptr) *candidates = n_candidates;
  return hit;
}

// The only object of the given shape, if exactly one exists.
std::optional<std::size_t> unique_shape(const std::vector<ObjectAttributes>& attrs, int shape) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (attrs[i].shape == shape) {
      if (found) return std::nullopt;
      found = i;
    }
  }
  return found;
}

std::optional<Draft> draft_relation(const SynthConfig& cfg, const Layout& l, Rng& rng) {
  struct Option {
    std::size_t anchor, target;
    int shape;
    Relation rel;
  };
  std::vector<Option> options;
  for (std::size_t anchor = 0; anchor < l.attrs.size(); ++anchor) {
    const auto& a = l.attrs[anchor];
    if (!a.is_object() || unique_shape(l.attrs, a.shape) != anchor) continue;
    for (int shape = 0; shape < static_cast<int>(cfg.shapes.size()); ++shape) {
      if (shape == a.shape) continue;
      for (Relation rel : kRelations) {
        std::size_t n_candidates = 0;
        const auto target = relation_referent(l.boxes, l.attrs, anchor, shape, rel, cfg, &n_candidates);
        // At least one same-shape distractor, so the relation (not the shape
        // alone) picks the referent.
        if (target && n_candidates >= 2) options.push_back({anchor, *target, shape, rel});
      }
    }
  }
  if (options.empty()) return std::nullopt;
  const Option& o = options[rng.index(options.size())];
  Draft d;
  d.words = {"what", "color", "is", "the", cfg.shapes[static_cast<std::size_t>(o.shape)]};
  for (const auto& w : relation_words(o.rel)) d.words.push_back(w);
  d.words.push_back("the");
  d.words.push_back(cfg.shapes[static_cast<std::size_t>(l.attrs[o.anchor].shape)]);
  d.answer = cfg.colors[static_cast<std::size_t>(l.attrs[o.target].color)];
  return d;
}

QuestionType type_of(QuestionTemplate t) {
  switch (t) {
    case QuestionTemplate::Count: return QuestionType::Number;
    case QuestionTemplate::Exist: return QuestionType::YesNo;
    default: return QuestionType::Other;
  }
}

std::optional<Draft> draft(QuestionTemplate t, const SynthConfig& cfg, const Layout& l, Rng& rng) {
  switch (t) {
    case QuestionTemplate::Count: return draft_count(cfg, l, rng);
    case QuestionTemplate::Exist: return draft_exist(cfg, l, rng);
    case QuestionTemplate::Attribute: return draft_attribute(cfg, l, rng);
    case QuestionTemplate::Relation: return draft_relation(cfg, l, rng);
    default: return std::nullopt;
  }
}

int index_of(const std::vector<std::string>& v, const std::string& w) {
  auto it = std::find(v.begin(), v.end(), w);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

}  // namespace

Dataset gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset d;
  for (const auto& w : template_words()) d.words.add(w);
  for (const auto* list : {&cfg.colors, &cfg.shapes, &cfg.sizes}) {
    for (const auto& w : *list) d.words.add(w);
  }
  std::vector<std::string> classes;
  for (const auto* list : {&cfg.colors, &cfg.shapes, &cfg.sizes}) classes.insert(classes.end(), list->begin(), list->end());
  for (int k = 0; k <= 9; ++k) classes.push_back(std::to_string(k));
  classes.push_back("yes");
  classes.push_back("no");
  d.set_answer_classes(classes);
  d.annotators = 1;

  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    Rng rng = Rng::derive(cfg.seed, s);
    // Templates are fixed per question slot before any rejection sampling so
    // hard templates are not crowded out by easy ones.
    std::vector<QuestionTemplate> plan;
    for (std::size_t q = 0; q < cfg.questions_per_scene; ++q) plan.push_back(pick_template(cfg.mix, rng));
    // Each try draws a fresh layout and attempts to fill every slot of the plan.
    std::vector<QAItem> items;
    Layout layout;
    for (int tries = 0; items.size() < plan.size(); ++tries) {
      if (tries >= kMaxTriesPerScene) {
        throw GenerationError("gen_synthetic: scene " + std::to_string(s) + " exceeded " +
                              std::to_string(kMaxTriesPerScene) + " rejection-sampling tries");
      }
      if (tries > 0 && tries % kTriesPerPlan == 0) {
        // A plan this stubborn (several relation slots) is redrawn rather than failed.
        for (auto& t : plan) t = pick_template(cfg.mix, rng);
      }
      layout = draw_layout(cfg, rng);
      items.clear();
      for (std::size_t slot = 0; slot < plan.size(); ++slot) {
        std::optional<Draft> dr;
        for (int attempt = 0; attempt < kDraftsPerSlot && !dr; ++attempt) {
          dr = draft(plan[slot], cfg, layout, rng);
          if (dr && std::any_of(items.begin(), items.end(), [&](const QAItem& q) { return q.question == dr->words; })) {
            dr.reset();
          }
        }
        if (!dr) break;
        QAItem it;
        it.id = static_cast<std::int64_t>(s * cfg.questions_per_scene + slot);
        it.scene_id = static_cast<std::int64_t>(s);
        it.question = std::move(dr->words);
        it.type = type_of(plan[slot]);
        it.templ = plan[slot];
        it.answers = {std::move(dr->answer)};
        items.push_back(std::move(it));
      }
    }
    Scene scene;
    scene.image_id = static_cast<std::int64_t>(s);
    scene.features = encode_features(cfg, layout, rng);
    scene.boxes = layout.boxes;
    scene.attributes = layout.attrs;
    d.scenes.push_back(std::move(scene));
    for (auto& it : items) d.items.push_back(std::move(it));
  }
  d.index_scenes();
  return d;
}

std::optional<std::string> recompute_answer(const QAItem& item, const Scene& scene, const SynthConfig& cfg) {
  const auto& q = item.question;
  const auto& attrs = scene.attributes;
  auto word = [&](std::size_t i) -> const std::string& {
    static const std::string empty;
    return i < q.size() ? q[i] : empty;
  };
  switch (item.templ) {
    case QuestionTemplate::Count: {
      const std::string& w = word(2);
      int n = 0;
      for (const auto& a : attrs) {
        if (!a.is_object()) continue;
        if (int c = index_of(cfg.colors, w); c >= 0) n += a.color == c;
        else if (int s = index_of(cfg.shapes, w); s >= 0) n += a.shape == s;
        else if (int z = index_of(cfg.sizes, w); z >= 0) n += a.size == z;
        else return std::nullopt;
      }
      return std::to_string(n);
    }
    case QuestionTemplate::Exist: {
      const int c = index_of(cfg.colors, word(3));
      const int s = index_of(cfg.shapes, word(4));
      if (c < 0 || s < 0) return std::nullopt;
      for (const auto& a : attrs) {
        if (a.color == c && a.shape == s) return std::string("yes");
      }
      return std::string("no");
    }
    case QuestionTemplate::Attribute: {
      const int z = index_of(cfg.sizes, word(4));
      const int s = index_of(cfg.shapes, word(5));
      std::optional<std::size_t> hit;
      for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (attrs[i].size == z && attrs[i].shape == s) {
          if (hit) return std::nullopt;
          hit = i;
        }
      }
      if (!hit) return std::nullopt;
      return cfg.colors[static_cast<std::size_t>(attrs[*hit].color)];
    }
    case QuestionTemplate::Relation: {
      const int shape = index_of(cfg.shapes, word(4));
      std::size_t pos = 5;
      Relation rel;
      if (word(5) == "left" && word(6) == "of") rel = Relation::LeftOf, pos = 7;
      else if (word(5) == "right" && word(6) == "of") rel = Relation::RightOf, pos = 7;
      else if (word(5) == "above") rel = Relation::Above, pos = 6;
      else if (word(5) == "below") rel = Relation::Below, pos = 6;
      else return std::nullopt;
      if (word(pos) != "the") return std::nullopt;
      const int as = index_of(cfg.shapes, word(pos + 1));
      if (shape < 0 || as < 0 || word(pos + 2) != "") return std::nullopt;
      const auto anchor = unique_shape(attrs, as);
      if (!anchor) return std::nullopt;
      const auto target = relation_referent(scene.boxes, attrs, *anchor, shape, rel, cfg);
      if (!target) return std::nullopt;
      return cfg.colors[static_cast<std::size_t>(attrs[*target].color)];
    }
    default: return std::nullopt;
  }
}

}  // namespace vqag
