#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "vqag/core.hpp"

namespace vqag {

// Two dense ReLU layers mapping [v_n || q] to the joint embedding e_n.
template <typename Scalar>
struct JointEmbedF {
  Parameter<Scalar> W1, b1;  // d_g x (d_v + d_q), d_g x 1
  Parameter<Scalar> W2, b2;  // d_e x d_g, d_e x 1

  JointEmbedF() = default;
  JointEmbedF(const std::string& prefix, Index d_v, Index d_q, Index d_g, Index d_e)
      : W1(prefix + ".W1", d_g, d_v + d_q),
        b1(prefix + ".b1", d_g, 1),
        W2(prefix + ".W2", d_e, d_g),
        b2(prefix + ".b2", d_e, 1) {}

  Index input_width() const { return W1.value.cols(); }
  Index embed_width() const { return W2.value.rows(); }

  template <typename F>
  void for_each(F&& f) {
    for (auto* p : {&W1, &b1, &W2, &b2}) f(*p);
  }
};

// Dense adjacency plus the sparse top-m routing derived from it. Row i of
// `neighbors` lists N(i) in ascending index order; alpha(i, s) is the weight of
// neighbors(i, s).
template <typename Scalar>
struct LearnedGraph {
  Matrix<Scalar> A;
  IndexMatrix neighbors;  // N x m
  Matrix<Scalar> alpha;   // N x m
  Index nodes() const { return neighbors.rows(); }
  Index m() const { return neighbors.cols(); }
};

template <typename Scalar>
struct GraphLearnerTrace {
  Matrix<Scalar> X;       // N x (d_v + d_q) concatenated inputs
  Matrix<Scalar> Z1, Z2;  // pre-activations
  Matrix<Scalar> H1, E;   // post-activations
  Index d_v = 0;
  bool empty() const { return E.size() == 0; }
};

template <typename Scalar>
Matrix<Scalar> concat_question(const Matrix<Scalar>& V, const Vector<Scalar>& q) {
  Matrix<Scalar> X(V.rows(), V.cols() + q.size());
  X.leftCols(V.cols()) = V;
  X.rightCols(q.size()).rowwise() = q.transpose();
  return X;
}

// E = ReLU(ReLU(X W1^T + b1) W2^T + b2) over all nodes at once.
template <typename Scalar>
Matrix<Scalar> joint_embed_all(const Matrix<Scalar>& V, const Vector<Scalar>& q, const JointEmbedF<Scalar>& f,
                               GraphLearnerTrace<Scalar>* trace = nullptr) {
  if (V.cols() + q.size() != f.input_width()) {
    throw DimensionError("joint_embed: [v || q] width " + std::to_string(V.cols() + q.size()) + " vs F input " +
                         std::to_string(f.input_width()));
  }
  Matrix<Scalar> X = concat_question(V, q);
  Matrix<Scalar> Z1 = X * f.W1.value.transpose();
  Z1.rowwise() += f.b1.vec().transpose();
  Matrix<Scalar> H1 = relu(Z1);
  Matrix<Scalar> Z2 = H1 * f.W2.value.transpose();
  Z2.rowwise() += f.b2.vec().transpose();
  Matrix<Scalar> E = relu(Z2);
  if (trace != nullptr) {
    trace->X = std::move(X);
    trace->Z1 = std::move(Z1);
    trace->H1 = std::move(H1);
    trace->Z2 = std::move(Z2);
    trace->E = E;
    trace->d_v = V.cols();
  }
  return E;
}

template <typename Scalar>
Vector<Scalar> joint_embed(const Vector<Scalar>& v_n, const Vector<Scalar>& q, const JointEmbedF<Scalar>& f) {
  Matrix<Scalar> V = v_n.transpose();
  return joint_embed_all(V, q, f).row(0).transpose();
}

template <typename Scalar>
Matrix<Scalar> build_adjacency(const Matrix<Scalar>& E) {
  if (E.rows() < 1) throw InputError("build_adjacency: no nodes");
  Matrix<Scalar> A = E * E.transpose();
  // Blocked products may sum (i, j) and (j, i) in different orders; mirror so
  // the result is symmetric bit for bit.
  for (Index i = 0; i < A.rows(); ++i) {
    for (Index j = i + 1; j < A.cols(); ++j) A(i, j) = A(j, i);
  }
  return A;
}

// Indices of the m largest entries, ties to the lower index, sorted ascending.
template <typename Derived>
std::vector<Index> top_m(const Eigen::MatrixBase<Derived>& row, Index m) {
  const Index n = row.size();
  if (m < 1 || m > n) {
    throw ConfigError("top_m: m=" + std::to_string(m) + " must lie in [1, " + std::to_string(n) + "]");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return row(a) > row(b); });
  order.resize(static_cast<std::size_t>(m));
  std::sort(order.begin(), order.end());
  return order;
}

// Gap between the m-th and (m+1)-th largest values of a row; +inf when m = N.
template <typename Derived>
typename Derived::Scalar top_m_gap(const Eigen::MatrixBase<Derived>& row, Index m) {
  using Scalar = typename Derived::Scalar;
  if (m >= row.size()) return std::numeric_limits<Scalar>::infinity();
  std::vector<Scalar> v;
  for (Index i = 0; i < row.size(); ++i) v.push_back(row(i));
  std::sort(v.begin(), v.end(), std::greater<Scalar>());
  return v[static_cast<std::size_t>(m - 1)] - v[static_cast<std::size_t>(m)];
}

template <typename Derived>
Vector<typename Derived::Scalar> edge_weights(const Eigen::MatrixBase<Derived>& row,
                                              std::span<const Index> neighborhood) {
  return softmax_masked(row, neighborhood);
}

// Replace the lowest-ranked selection with i when i is missing, keeping m fixed.
template <typename Derived>
void inject_self_loop(const Eigen::MatrixBase<Derived>& row, Index i, std::vector<Index>& selected) {
  if (std::find(selected.begin(), selected.end(), i) != selected.end()) return;
  auto weakest = selected.begin();
  for (auto it = selected.begin(); it != selected.end(); ++it) {
    // Lowest value; among equal values the higher index ranked last.
    if (row(*it) < row(*weakest) || (row(*it) == row(*weakest) && *it > *weakest)) weakest = it;
  }
  *weakest = i;
  std::sort(selected.begin(), selected.end());
}

template <typename Scalar>
LearnedGraph<Scalar> graph_from_adjacency(Matrix<Scalar> A, Index m, bool force_self_loop) {
  const Index n = A.rows();
  if (m < 1 || m > n) throw ConfigError("learn_graph: m=" + std::to_string(m) + " exceeds N=" + std::to_string(n));
  LearnedGraph<Scalar> g;
  g.neighbors.resize(n, m);
  g.alpha.resize(n, m);
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> sel = top_m(A.row(i), m);
    if (force_self_loop) inject_self_loop(A.row(i), i, sel);
    const Vector<Scalar> a = edge_weights(A.row(i), sel);
    for (Index s = 0; s < m; ++s) {
      g.neighbors(i, s) = sel[static_cast<std::size_t>(s)];
      g.alpha(i, s) = a(s);
    }
  }
  g.A = std::move(A);
  return g;
}

template <typename Scalar>
LearnedGraph<Scalar> learn_graph(const Matrix<Scalar>& V, const Vector<Scalar>& q, const JointEmbedF<Scalar>& f,
                                 Index m, bool force_self_loop = false, GraphLearnerTrace<Scalar>* trace = nullptr) {
  if (m < 1 || m > V.rows()) {
    throw ConfigError("learn_graph: m=" + std::to_string(m) + " must lie in [1, N=" + std::to_string(V.rows()) + "]");
  }
  return graph_from_adjacency(build_adjacency(joint_embed_all(V, q, f, trace)), m, force_self_loop);
}

// Gradient of the loss w.r.t. the adjacency entries, given dL/dalpha. The
// top-m routing is a constant: only selected entries receive gradient.
template <typename Scalar>
Matrix<Scalar> adjacency_grad_from_alpha(const LearnedGraph<Scalar>& g, const Matrix<Scalar>& dalpha) {
  if (dalpha.rows() != g.alpha.rows() || dalpha.cols() != g.alpha.cols()) {
    throw DimensionError("adjacency_grad_from_alpha: dalpha " + shape_str(dalpha) + " vs alpha " + shape_str(g.alpha));
  }
  Matrix<Scalar> dA = Matrix<Scalar>::Zero(g.A.rows(), g.A.cols());
  for (Index i = 0; i < g.alpha.rows(); ++i) {
    const Scalar inner = g.alpha.row(i).dot(dalpha.row(i));
    for (Index s = 0; s < g.alpha.cols(); ++s) {
      dA(i, g.neighbors(i, s)) += g.alpha(i, s) * (dalpha(i, s) - inner);
    }
  }
  return dA;
}

// Backward through softmax, A = E E^T and F. Accumulates F's grads; returns dV
// (N x d_v) and adds the question gradient into dq.
template <typename Scalar>
Matrix<Scalar> graph_learner_backward(const GraphLearnerTrace<Scalar>& trace, const LearnedGraph<Scalar>& g,
                                      const Matrix<Scalar>& dalpha, JointEmbedF<Scalar>& f, Vector<Scalar>& dq) {
  if (trace.empty()) throw StateError("graph_learner_backward: no cached forward pass");
  const Matrix<Scalar> dA = adjacency_grad_from_alpha(g, dalpha);
  const Matrix<Scalar> dE = (dA + dA.transpose()) * trace.E;
  const Matrix<Scalar> dZ2 = dE.cwiseProduct(Matrix<Scalar>(relu_mask(trace.Z2)));
  f.W2.grad.noalias() += dZ2.transpose() * trace.H1;
  f.b2.grad_vec() += dZ2.colwise().sum().transpose();
  const Matrix<Scalar> dH1 = dZ2 * f.W2.value;
  const Matrix<Scalar> dZ1 = dH1.cwiseProduct(Matrix<Scalar>(relu_mask(trace.Z1)));
  f.W1.grad.noalias() += dZ1.transpose() * trace.X;
  f.b1.grad_vec() += dZ1.colwise().sum().transpose();
  const Matrix<Scalar> dX = dZ1 * f.W1.value;
  if (dq.size() != dX.cols() - trace.d_v) dq = Vector<Scalar>::Zero(dX.cols() - trace.d_v);
  dq += dX.rightCols(dX.cols() - trace.d_v).colwise().sum().transpose();
  return dX.leftCols(trace.d_v);
}

}  // namespace vqag
