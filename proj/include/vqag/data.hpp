#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqag/box.hpp"
#include "vqag/core.hpp"
#include "vqag/question_encoder.hpp"

namespace vqag {

enum class QuestionType { YesNo, Number, Other };

const char* to_string(QuestionType t);
QuestionType question_type_from_string(const std::string& s);

// Which generator template produced a synthetic question; Unknown for real data.
enum class QuestionTemplate { Unknown, Count, Exist, Attribute, Relation };

const char* to_string(QuestionTemplate t);
QuestionTemplate question_template_from_string(const std::string& s);

// Ground-truth attributes of a synthetic object. -1 marks a clutter slot
// (a detection with no object behind it).
struct ObjectAttributes {
  int color = -1;
  int shape = -1;
  int size = -1;
  bool is_object() const { return shape >= 0; }
  bool operator==(const ObjectAttributes&) const = default;
};

struct Scene {
  std::int64_t image_id = 0;
  std::vector<Box> boxes;
  MatrixXd features;                       // N x d_v_raw
  std::vector<ObjectAttributes> attributes;  // empty for real data

  Index objects() const { return static_cast<Index>(boxes.size()); }
  Index raw_width() const { return features.cols(); }
};

// Model input rows: [features || x1 y1 x2 y2].
template <typename Scalar>
Matrix<Scalar> node_features(const Scene& s) {
  Matrix<Scalar> V(s.objects(), s.raw_width() + 4);
  V.leftCols(s.raw_width()) = s.features.cast<Scalar>();
  for (Index i = 0; i < s.objects(); ++i) {
    const auto c = s.boxes[static_cast<std::size_t>(i)].corners();
    for (int d = 0; d < 4; ++d) V(i, s.raw_width() + d) = static_cast<Scalar>(c[static_cast<std::size_t>(d)]);
  }
  return V;
}

struct QAItem {
  std::int64_t id = 0;
  std::int64_t scene_id = 0;
  std::vector<std::string> question;
  QuestionType type = QuestionType::Other;
  QuestionTemplate templ = QuestionTemplate::Unknown;
  std::vector<std::string> answers;  // 1 ground truth (synthetic) or annotator answers (real)
};

struct Dataset {
  std::vector<Scene> scenes;
  std::vector<QAItem> items;
  Vocabulary words;
  std::vector<std::string> answer_classes;
  std::map<std::string, Index> class_index;
  Index annotators = 1;

  void set_answer_classes(std::vector<std::string> classes);
  void index_scenes();
  const Scene& scene(std::int64_t image_id) const;
  const QAItem& item(std::int64_t id) const;
  bool has_item(std::int64_t id) const;
  Index scene_slots() const { return scenes.empty() ? 0 : scenes.front().objects(); }
  Index raw_width() const { return scenes.empty() ? 0 : scenes.front().raw_width(); }

  // Soft targets for one item: votes / annotators.
  VectorXd targets(const QAItem& item) const;

 private:
  std::map<std::int64_t, std::size_t> scene_pos_;
  std::map<std::int64_t, std::size_t> item_pos_;
};

// Keep only the items whose template is in `keep`.
Dataset filter_templates(const Dataset& d, const std::vector<QuestionTemplate>& keep);

// Split by scene: scenes whose position modulo `period` is 0 go to the second
// dataset. Vocabularies are shared.
std::pair<Dataset, Dataset> split_by_scene(const Dataset& d, std::size_t period);

// ---------------------------------------------------------------------------
// Synthetic scene-QA generation.

struct TemplateMix {
  double count = 1.0;
  double exist = 1.0;
  double attribute = 1.0;
  double relation = 1.0;
};

struct SynthConfig {
  std::size_t n_scenes = 2000;
  Index slots = 8;               // fixed node count N per scene
  Index objects_min = 8;         // real objects per scene; remaining slots are clutter
  Index objects_max = 8;
  Index raw_width = 32;
  std::vector<std::string> colors = {"red", "green", "blue", "yellow", "purple", "gray"};
  std::vector<std::string> shapes = {"cube", "sphere", "cylinder"};
  std::vector<std::string> sizes = {"small", "large"};
  double noise_sigma = 0.1;
  std::size_t questions_per_scene = 4;
  TemplateMix mix;
  double relation_margin = 0.05;  // minimum centre separation along the relation axis
  double relation_band = 0.15;    // maximum offset across the relation axis
  std::uint64_t seed = 1;

  void validate() const;
};

Dataset gen_synthetic(const SynthConfig& cfg);

enum class Relation { LeftOf, RightOf, Above, Below };

// Relation between object `target` and `anchor` under the generator's rules:
// true when target lies at least `margin` beyond the anchor along the
// relation axis and within `band` across it.
bool satisfies_relation(const Box& target, const Box& anchor, Relation rel, double margin, double band);
// True when the pair is too close to the decision boundary to label.
bool relation_ambiguous(const Box& target, const Box& anchor, Relation rel, double margin, double band);

// Re-derives the answer of a synthetic item by brute force from the scene's
// raw boxes and attributes. Returns nullopt when the question is ill-posed
// (no unique referent).
std::optional<std::string> recompute_answer(const QAItem& item, const Scene& scene, const SynthConfig& cfg);

}  // namespace vqag
