#pragma once

#include <map>
#include <string>
#include <vector>

#include "vqag/core.hpp"

namespace vqag {

template <typename Scalar>
struct Mlp2 {
  Parameter<Scalar> W1, b1;  // hidden x d_q
  Parameter<Scalar> W2, b2;  // C x hidden

  Mlp2() = default;
  Mlp2(const std::string& prefix, Index d_in, Index hidden, Index classes)
      : W1(prefix + ".W1", hidden, d_in),
        b1(prefix + ".b1", hidden, 1),
        W2(prefix + ".W2", classes, hidden),
        b2(prefix + ".b2", classes, 1) {}

  Index input_width() const { return W1.value.cols(); }
  Index classes() const { return W2.value.rows(); }

  template <typename F>
  void for_each(F&& f) {
    for (auto* p : {&W1, &b1, &W2, &b2}) f(*p);
  }
};

template <typename Scalar>
struct PoolResult {
  Vector<Scalar> value;
  std::vector<Index> argmax;  // first row achieving the maximum, per column
};

template <typename Scalar>
PoolResult<Scalar> max_pool_nodes(const Matrix<Scalar>& H) {
  if (H.rows() < 1) throw InputError("max_pool_nodes: no nodes");
  PoolResult<Scalar> r{H.row(0).transpose(), std::vector<Index>(static_cast<std::size_t>(H.cols()), 0)};
  for (Index i = 1; i < H.rows(); ++i) {
    for (Index c = 0; c < H.cols(); ++c) {
      if (H(i, c) > r.value(c)) {
        r.value(c) = H(i, c);
        r.argmax[static_cast<std::size_t>(c)] = i;
      }
    }
  }
  return r;
}

template <typename Scalar>
Matrix<Scalar> max_pool_backward(const PoolResult<Scalar>& pool, const Vector<Scalar>& dpooled, Index rows) {
  Matrix<Scalar> dH = Matrix<Scalar>::Zero(rows, dpooled.size());
  for (Index c = 0; c < dpooled.size(); ++c) dH(pool.argmax[static_cast<std::size_t>(c)], c) = dpooled(c);
  return dH;
}

template <typename Scalar>
Vector<Scalar> fuse(const Vector<Scalar>& pooled, const Vector<Scalar>& q) {
  if (pooled.size() != q.size()) {
    throw ConfigError("fuse: image width " + std::to_string(pooled.size()) + " != question width " +
                      std::to_string(q.size()));
  }
  return pooled.cwiseProduct(q);
}

template <typename Scalar>
struct MlpTrace {
  Vector<Scalar> input, pre_hidden, hidden;
  bool empty() const { return input.size() == 0; }
};

// y = W2 ReLU(W1 x + b1) + b2; logits, no output activation.
template <typename Scalar>
Vector<Scalar> classify(const Vector<Scalar>& fused, const Mlp2<Scalar>& mlp, MlpTrace<Scalar>* trace = nullptr) {
  if (fused.size() != mlp.input_width()) {
    throw DimensionError("classify: input " + shape_str(fused) + " vs W1 " + shape_str(mlp.W1.value));
  }
  Vector<Scalar> pre = mlp.W1.value * fused + mlp.b1.vec();
  Vector<Scalar> hidden = relu(pre);
  Vector<Scalar> logits = mlp.W2.value * hidden + mlp.b2.vec();
  if (trace != nullptr) {
    trace->input = fused;
    trace->pre_hidden = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return logits;
}

// Accumulates MLP grads and returns dL/dfused.
template <typename Scalar>
Vector<Scalar> classify_backward(const MlpTrace<Scalar>& trace, const Vector<Scalar>& dlogits, Mlp2<Scalar>& mlp) {
  if (trace.empty()) throw StateError("classify_backward: no cached forward pass");
  mlp.W2.grad.noalias() += dlogits * trace.hidden.transpose();
  mlp.b2.grad_vec() += dlogits;
  const Vector<Scalar> dpre = (mlp.W2.value.transpose() * dlogits).cwiseProduct(Vector<Scalar>(relu_mask(trace.pre_hidden)));
  mlp.W1.grad.noalias() += dpre * trace.input.transpose();
  mlp.b1.grad_vec() += dpre;
  return mlp.W1.value.transpose() * dpre;
}

// Sum over classes of stable binary cross-entropy:
// max(y, 0) - y t + log(1 + exp(-|y|)).
template <typename Scalar>
Scalar soft_bce_loss(const Vector<Scalar>& targets, const Vector<Scalar>& logits) {
  if (targets.size() != logits.size()) {
    throw DimensionError("soft_bce_loss: targets " + shape_str(targets) + " vs logits " + shape_str(logits));
  }
  Scalar total = 0;
  for (Index c = 0; c < logits.size(); ++c) {
    const Scalar y = logits(c);
    total += std::max(y, Scalar(0)) - y * targets(c) + std::log1p(std::exp(-std::abs(y)));
  }
  return total;
}

template <typename Scalar>
Vector<Scalar> soft_bce_grad(const Vector<Scalar>& targets, const Vector<Scalar>& logits) {
  if (targets.size() != logits.size()) {
    throw DimensionError("soft_bce_grad: targets " + shape_str(targets) + " vs logits " + shape_str(logits));
  }
  return sigmoid(logits) - targets;
}

// t_c = votes_c / n over in-vocabulary answers; the rest are dropped.
inline VectorXd make_soft_targets(const std::vector<std::string>& answers,
                                  const std::map<std::string, Index>& class_index, Index classes, Index annotators) {
  if (annotators < 1) throw InputError("make_soft_targets: annotator count must be >= 1");
  VectorXd t = VectorXd::Zero(classes);
  for (const auto& a : answers) {
    auto it = class_index.find(a);
    if (it != class_index.end()) t(it->second) += 1.0;
  }
  return t / static_cast<double>(annotators);
}

// min(votes / 3, 1).
inline double vqa_accuracy(int votes) { return std::min(static_cast<double>(votes) / 3.0, 1.0); }

// Score of a predicted answer against its reference answers: exact match for a
// single ground truth, min(votes / 3, 1) for annotator lists.
inline double answer_accuracy(const std::string& predicted, const std::vector<std::string>& answers) {
  int votes = 0;
  for (const auto& a : answers) votes += (a == predicted) ? 1 : 0;
  if (answers.size() == 1) return static_cast<double>(votes);
  return vqa_accuracy(votes);
}

}  // namespace vqag
