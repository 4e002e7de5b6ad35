#include "vqag/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "vqag/checkpoint.hpp"

namespace vqag {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (lr_halve_epoch < 1 || lr_halve_epoch > epochs) {
    throw ConfigError("train.lr_halve_epoch must lie in [1, epochs], got " + std::to_string(lr_halve_epoch));
  }
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.lr = 1e-4;
  c.batch_size = 64;
  c.epochs = 35;
  c.lr_halve_epoch = 30;
  return c;
}

template <typename Scalar>
void AdamState<Scalar>::init(const std::vector<Parameter<Scalar>*>& params) {
  m.clear();
  v.clear();
  for (const auto* p : params) {
    m.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }
  step = 0;
}

template <typename Scalar>
void adam_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state, double lr,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw StateError("adam_step: optimizer state was initialised for a different parameter list");
  }
  for (const auto* p : params) {
    if (p->trainable && !p->grad.allFinite()) {
      throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const Scalar rate = static_cast<Scalar>(lr);
  const Scalar eps = static_cast<Scalar>(cfg.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * p->grad;
    v = b2 * v + (Scalar(1) - b2) * p->grad.cwiseAbs2();
    p->value.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

double AccuracySummary::type_accuracy(const std::string& type) const {
  auto it = by_type.find(type);
  return it == by_type.end() ? 0.0 : it->second.accuracy;
}

double AccuracySummary::template_accuracy(const std::string& templ) const {
  auto it = by_template.find(templ);
  return it == by_template.end() ? 0.0 : it->second.accuracy;
}

template <typename Scalar>
Index predict_class(const Vector<Scalar>& logits) {
  if (logits.size() == 0) throw InputError("predict_class: empty logits");
  Index best = 0;
  for (Index c = 1; c < logits.size(); ++c) {
    if (logits(c) > logits(best)) best = c;
  }
  return best;
}

std::vector<Index> question_tokens(const Dataset& data, const QAItem& item) { return data.words.encode(item.question); }

template <typename Scalar>
AccuracySummary evaluate(const Model<Scalar>& model, const Dataset& data) {
  AccuracySummary s;
  double total = 0;
  std::map<std::string, double> type_sum, templ_sum;
  for (const auto& item : data.items) {
    const auto tokens = question_tokens(data, item);
    const Vector<Scalar> logits = model.forward(data.scene(item.scene_id), tokens, Mode::Eval);
    const Index pred = predict_class(logits);
    const double acc = answer_accuracy(data.answer_classes.at(static_cast<std::size_t>(pred)), item.answers);
    total += acc;
    ++s.count;
    const std::string type = to_string(item.type);
    type_sum[type] += acc;
    ++s.by_type[type].count;
    if (item.templ != QuestionTemplate::Unknown) {
      const std::string templ = to_string(item.templ);
      templ_sum[templ] += acc;
      ++s.by_template[templ].count;
    }
  }
  if (s.count > 0) s.overall = total / static_cast<double>(s.count);
  for (auto& [k, v] : s.by_type) v.accuracy = type_sum[k] / static_cast<double>(v.count);
  for (auto& [k, v] : s.by_template) v.accuracy = templ_sum[k] / static_cast<double>(v.count);
  return s;
}

namespace {

nlohmann::ordered_json summary_json(const AccuracySummary& s) {
  nlohmann::ordered_json j;
  j["overall"] = s.overall;
  j["count"] = s.count;
  for (const auto& [k, v] : s.by_type) j["by_type"][k] = {{"accuracy", v.accuracy}, {"count", v.count}};
  for (const auto& [k, v] : s.by_template) j["by_template"][k] = {{"accuracy", v.accuracy}, {"count", v.count}};
  return j;
}

}  // namespace

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["steps"] = r.steps;
  if (r.eval) j["eval"] = summary_json(*r.eval);
  return j.dump();
}

double epoch_lr(const TrainConfig& cfg, Index epoch) { return epoch > cfg.lr_halve_epoch ? cfg.lr / 2.0 : cfg.lr; }

Index steps_per_epoch(Index n, Index batch_size) { return (n + batch_size - 1) / batch_size; }

template <typename Scalar>
std::vector<EpochRecord> train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& opts, TrainState<Scalar>& state) {
  cfg.validate();
  if (data.items.empty()) throw InputError("train: dataset has no questions");
  if (static_cast<Index>(data.answer_classes.size()) != model.config().classes) {
    throw ConfigError("train: model has " + std::to_string(model.config().classes) + " classes, dataset has " +
                      std::to_string(data.answer_classes.size()));
  }
  auto params = model.parameters();
  if (state.epoch == 0 && state.adam.step == 0) {
    state.adam.init(params);
    state.rng = Rng(cfg.seed).state();
  }

  // Inputs are fixed across epochs; encode them once.
  std::vector<std::vector<Index>> tokens;
  std::vector<Vector<Scalar>> targets;
  std::vector<const Scene*> scenes;
  for (const auto& item : data.items) {
    tokens.push_back(question_tokens(data, item));
    targets.push_back(data.targets(item).template cast<Scalar>());
    scenes.push_back(&data.scene(item.scene_id));
  }
  const std::size_t n = data.items.size();

  std::vector<EpochRecord> records;
  ForwardTrace<Scalar> trace;
  for (Index epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const Model<Scalar> good_model = model;
    const TrainState<Scalar> good_state = state;
    Rng rng;
    rng.set_state(state.rng);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    const double lr = epoch_lr(cfg, epoch);
    double loss_sum = 0;
    try {
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
        const Scalar scale = Scalar(1) / static_cast<Scalar>(end - start);
        model.zero_grad();
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          model.forward(*scenes[i], tokens[i], Mode::Train, &rng, &trace);
          const double loss = static_cast<double>(model.backward(trace, targets[i], scale));
          if (!std::isfinite(loss)) {
            throw TrainingError("non-finite loss on question " + std::to_string(data.items[i].id) + " in epoch " +
                                std::to_string(epoch));
          }
          loss_sum += loss;
        }
        adam_step(params, state.adam, lr, cfg);
      }
    } catch (const TrainingError& e) {
      model = good_model;
      state = good_state;
      std::string where = opts.checkpoint_path.empty() ? std::string("in memory")
                                                       : "at '" + opts.checkpoint_path + "'";
      throw TrainingError(std::string(e.what()) + "; parameters restored to the last good checkpoint (epoch " +
                          std::to_string(state.epoch) + ", " + where + ")");
    }

    state.epoch = epoch;
    state.rng = rng.state();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.steps = state.adam.step;
    if (opts.eval != nullptr) rec.eval = evaluate(model, *opts.eval);
    if (!opts.log_path.empty()) {
      std::ofstream log(opts.log_path, std::ios::app);
      if (!log) throw InputError("cannot append to training log '" + opts.log_path + "'");
      log << to_json_line(rec) << "\n";
    }
    if (!opts.checkpoint_path.empty()) {
      save_checkpoint(opts.checkpoint_path, model, cfg, state, data.words, data.answer_classes);
    }
    if (opts.on_epoch) opts.on_epoch(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

template <typename Scalar>
std::vector<EpochRecord> train(Model<Scalar>& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& opts) {
  TrainState<Scalar> state;
  return train(model, data, cfg, opts, state);
}

#define VQAG_INSTANTIATE(S)                                                                                    \
  template struct AdamState<S>;                                                                               \
  template void adam_step<S>(const std::vector<Parameter<S>*>&, AdamState<S>&, double, const TrainConfig&);   \
  template Index predict_class<S>(const Vector<S>&);                                                          \
  template AccuracySummary evaluate<S>(const Model<S>&, const Dataset&);                                      \
  template std::vector<EpochRecord> train<S>(Model<S>&, const Dataset&, const TrainConfig&, const TrainOptions&, \
                                             TrainState<S>&);                                                 \
  template std::vector<EpochRecord> train<S>(Model<S>&, const Dataset&, const TrainConfig&, const TrainOptions&);

VQAG_INSTANTIATE(double)
VQAG_INSTANTIATE(float)

#undef VQAG_INSTANTIATE

}  // namespace vqag
