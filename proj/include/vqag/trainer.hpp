#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqag/data.hpp"
#include "vqag/model.hpp"

namespace vqag {

struct TrainConfig {
  double lr = 2e-3;
  Index batch_size = 32;
  Index epochs = 20;
  Index lr_halve_epoch = 15;  // epochs after this one run at lr / 2
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;

  static TrainConfig full();
};

template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  std::int64_t step = 0;

  // Zero moments shaped like the given parameters.
  void init(const std::vector<Parameter<Scalar>*>& params);
};

// One bias-corrected Adam update over every trainable parameter. Throws
// TrainingError naming the first parameter whose gradient is not finite;
// nothing is modified in that case.
template <typename Scalar>
void adam_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state, double lr,
               const TrainConfig& cfg);

struct TypeAccuracy {
  double accuracy = 0;
  Index count = 0;
};

struct AccuracySummary {
  double overall = 0;
  Index count = 0;
  std::map<std::string, TypeAccuracy> by_type;      // yes/no, number, other
  std::map<std::string, TypeAccuracy> by_template;  // synthetic templates only

  double type_accuracy(const std::string& type) const;
  double template_accuracy(const std::string& templ) const;
};

// Index of the largest logit; the lowest index wins ties.
template <typename Scalar>
Index predict_class(const Vector<Scalar>& logits);

// Eval-mode accuracy. Single-answer items score exact match, annotator lists
// score min(votes / 3, 1).
template <typename Scalar>
AccuracySummary evaluate(const Model<Scalar>& model, const Dataset& data);

struct EpochRecord {
  Index epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  std::int64_t steps = 0;  // optimizer steps so far
  std::optional<AccuracySummary> eval;
};

std::string to_json_line(const EpochRecord& r);

// Mutable training progress; saved in checkpoints so a run can resume.
template <typename Scalar>
struct TrainState {
  AdamState<Scalar> adam;
  Index epoch = 0;  // completed epochs
  Rng::State rng{};
};

struct TrainOptions {
  const Dataset* eval = nullptr;
  std::string log_path;         // line-delimited JSON, appended per epoch
  std::string checkpoint_path;  // rewritten after every epoch
  std::function<void(const EpochRecord&)> on_epoch;
};

// Learning rate in effect for a 1-based epoch.
double epoch_lr(const TrainConfig& cfg, Index epoch);

// Number of optimizer steps in one epoch of n samples.
Index steps_per_epoch(Index n, Index batch_size);

// Runs epochs state.epoch + 1 .. cfg.epochs. A fresh state starts from epoch 1.
template <typename Scalar>
std::vector<EpochRecord> train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& opts, TrainState<Scalar>& state);

template <typename Scalar>
std::vector<EpochRecord> train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& opts = {});

// Token ids for a question under the dataset vocabulary.
std::vector<Index> question_tokens(const Dataset& data, const QAItem& item);

}  // namespace vqag
