#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vqag/errors.hpp"
#include "vqag/rng.hpp"

namespace vqag {

using Index = Eigen::Index;

// Row-major dense storage throughout; Tensor2 in the model's vocabulary.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using MatrixXf = Matrix<float>;
using VectorXf = Vector<float>;

using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(Index rows, Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

template <typename Derived>
std::string shape_str(const Eigen::EigenBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

// A learnable tensor with its gradient accumulator. Vectors are stored as n x 1.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols, bool train = true)
      : name(std::move(n)),
        value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)),
        trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }

  // Column-vector view for bias parameters.
  auto vec() const { return Eigen::Map<const Vector<Scalar>>(value.data(), value.size()); }
  auto grad_vec() { return Eigen::Map<Vector<Scalar>>(grad.data(), grad.size()); }
};

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a) + " x " + shape_str(b));
  }
  return a * b;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

// 1 where x > 0, else 0. ReLU derivative with the kink assigned to 0.
template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (x.array() > Scalar(0)).template cast<Scalar>();
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

// Softmax over values[selected[0..n)], returned in the order of `selected`.
template <typename Scalar>
Vector<Scalar> softmax_masked(std::span<const Scalar> values, std::span<const Index> selected) {
  if (selected.empty()) throw InputError("softmax_masked: empty selection");
  Scalar peak = values[static_cast<std::size_t>(selected[0])];
  for (Index j : selected) {
    if (j < 0 || static_cast<std::size_t>(j) >= values.size()) {
      throw InputError("softmax_masked: selected index " + std::to_string(j) + " out of range");
    }
    peak = std::max(peak, values[static_cast<std::size_t>(j)]);
  }
  Vector<Scalar> out(static_cast<Index>(selected.size()));
  Scalar total = 0;
  for (std::size_t s = 0; s < selected.size(); ++s) {
    out[static_cast<Index>(s)] = std::exp(values[static_cast<std::size_t>(selected[s])] - peak);
    total += out[static_cast<Index>(s)];
  }
  return out / total;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax_masked(const Eigen::MatrixBase<Derived>& values,
                                                std::span<const Index> selected) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> dense = values;
  return softmax_masked<Scalar>(std::span<const Scalar>(dense.data(), static_cast<std::size_t>(dense.size())),
                                selected);
}

// Inverted-dropout scale mask: each entry is 0 with probability p, else 1/(1-p).
// Draws are taken in row-major order.
template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  Matrix<Scalar> mask(rows, cols);
  const Scalar keep = Scalar(1.0 / (1.0 - p));
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? Scalar(0) : keep;
  }
  return mask;
}

template <typename Scalar>
Matrix<Scalar> dropout(const Matrix<Scalar>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  return x.cwiseProduct(dropout_mask<Scalar>(x.rows(), x.cols(), p, rng));
}

}  // namespace vqag
