#pragma once

#include "vqag/data.hpp"
#include "vqag/graph_learner.hpp"

namespace vqag {

// Fixed graph from box-centre distances: each node's m nearest centres (itself
// included at distance 0, ties to the lower index) with uniform alpha = 1/m.
// A holds negated squared centre distances so that larger means closer.
LearnedGraph<double> knn_graph(std::span<const Box> boxes, Index m);
inline LearnedGraph<double> knn_graph(const Scene& scene, Index m) { return knn_graph(scene.boxes, m); }

template <typename Scalar>
LearnedGraph<Scalar> cast_graph(const LearnedGraph<double>& g) {
  return {g.A.cast<Scalar>(), g.neighbors, g.alpha.cast<Scalar>()};
}

// Question-to-object soft attention:
//   s_n = w^T ReLU(W [v_n || q] + b),  a = softmax(s),  out = sum_n a_n W_v v_n.
template <typename Scalar>
struct AttentionParams {
  Parameter<Scalar> W, b;  // d_a x (d_v + d_q), d_a x 1
  Parameter<Scalar> w;     // d_a x 1
  Parameter<Scalar> Wv;    // d_out x d_v

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, Index d_v, Index d_q, Index d_a, Index d_out)
      : W(prefix + ".W", d_a, d_v + d_q), b(prefix + ".b", d_a, 1), w(prefix + ".w", d_a, 1), Wv(prefix + ".W_v", d_out, d_v) {}

  template <typename F>
  void for_each(F&& f) {
    for (auto* p : {&W, &b, &w, &Wv}) f(*p);
  }
};

template <typename Scalar>
struct AttentionTrace {
  Matrix<Scalar> V, X, Z, hidden, projected;
  Vector<Scalar> weights;
  bool empty() const { return weights.size() == 0; }
};

template <typename Scalar>
Vector<Scalar> attention_baseline(const Matrix<Scalar>& V, const Vector<Scalar>& q, const AttentionParams<Scalar>& p,
                                  AttentionTrace<Scalar>* trace = nullptr) {
  if (V.cols() + q.size() != p.W.value.cols() || V.cols() != p.Wv.value.cols()) {
    throw DimensionError("attention_baseline: [v || q] width " + std::to_string(V.cols() + q.size()) + " vs W " +
                         shape_str(p.W.value));
  }
  Matrix<Scalar> X = concat_question(V, q);
  Matrix<Scalar> Z = X * p.W.value.transpose();
  Z.rowwise() += p.b.vec().transpose();
  Matrix<Scalar> hidden = relu(Z);
  const Vector<Scalar> scores = hidden * p.w.vec();
  std::vector<Index> all(static_cast<std::size_t>(V.rows()));
  for (Index i = 0; i < V.rows(); ++i) all[static_cast<std::size_t>(i)] = i;
  Vector<Scalar> weights = softmax_masked(scores, all);
  Matrix<Scalar> projected = V * p.Wv.value.transpose();
  Vector<Scalar> out = projected.transpose() * weights;
  if (trace != nullptr) {
    trace->V = V;
    trace->X = std::move(X);
    trace->Z = std::move(Z);
    trace->hidden = std::move(hidden);
    trace->projected = std::move(projected);
    trace->weights = std::move(weights);
  }
  return out;
}

// Accumulates parameter grads, adds dL/dq into dq and returns dL/dV.
template <typename Scalar>
Matrix<Scalar> attention_backward(const AttentionTrace<Scalar>& t, const Vector<Scalar>& dout, AttentionParams<Scalar>& p,
                                  Vector<Scalar>& dq, bool flip_score_grad = false) {
  if (t.empty()) throw StateError("attention_backward: no cached forward pass");
  const Matrix<Scalar> dprojected = t.weights * dout.transpose();
  const Vector<Scalar> dweights = t.projected * dout;
  p.Wv.grad.noalias() += dprojected.transpose() * t.V;
  Matrix<Scalar> dV = dprojected * p.Wv.value;
  Vector<Scalar> dscores = t.weights.cwiseProduct(dweights - Vector<Scalar>::Constant(dweights.size(), t.weights.dot(dweights)));
  if (flip_score_grad) dscores = -dscores;
  p.w.grad_vec() += t.hidden.transpose() * dscores;
  const Matrix<Scalar> dZ = (dscores * p.w.vec().transpose()).cwiseProduct(Matrix<Scalar>(relu_mask(t.Z)));
  p.W.grad.noalias() += dZ.transpose() * t.X;
  p.b.grad_vec() += dZ.colwise().sum().transpose();
  const Matrix<Scalar> dX = dZ * p.W.value;
  const Index d_v = t.V.cols();
  if (dq.size() != dX.cols() - d_v) dq = Vector<Scalar>::Zero(dX.cols() - d_v);
  dq += dX.rightCols(dX.cols() - d_v).colwise().sum().transpose();
  dV += dX.leftCols(d_v);
  return dV;
}

}  // namespace vqag
