#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "vqag/box.hpp"
#include "vqag/core.hpp"
#include "vqag/graph_learner.hpp"

namespace vqag {

// Position of box j's centre in a polar frame centred on box i. Image
// coordinates: y grows downward, theta measured from +x in (-pi, pi].
struct PseudoCoord {
  double rho = 0;
  double theta = 0;
};

inline constexpr double kCoincidentRho = 1e-9;
inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 10.0;

inline PseudoCoord pseudo_coords(const Box& from, const Box& to) {
  validate_box(from, "pseudo_coords");
  validate_box(to, "pseudo_coords");
  const double dx = to.cx() - from.cx();
  const double dy = to.cy() - from.cy();
  const double rho = std::hypot(dx, dy);
  if (rho < kCoincidentRho) return {rho, 0.0};
  double theta = std::atan2(dy, dx);
  if (theta <= -std::numbers::pi) theta = std::numbers::pi;
  return {rho, theta};
}

// All N x N pseudo-coordinates of a scene.
template <typename Scalar>
struct PairwiseCoords {
  Matrix<Scalar> rho, theta;
  Index nodes() const { return rho.rows(); }
};

template <typename Scalar>
PairwiseCoords<Scalar> pairwise_coords(std::span<const Box> boxes) {
  const Index n = static_cast<Index>(boxes.size());
  PairwiseCoords<Scalar> c{Matrix<Scalar>(n, n), Matrix<Scalar>(n, n)};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const PseudoCoord u = pseudo_coords(boxes[static_cast<std::size_t>(i)], boxes[static_cast<std::size_t>(j)]);
      c.rho(i, j) = static_cast<Scalar>(u.rho);
      c.theta(i, j) = static_cast<Scalar>(u.theta);
    }
  }
  return c;
}

// Diagonal Gaussian over (rho, theta), parameterized by log standard deviation.
template <typename Scalar>
struct GaussianKernel {
  Eigen::Matrix<Scalar, 2, 1> mu = Eigen::Matrix<Scalar, 2, 1>::Zero();
  Eigen::Matrix<Scalar, 2, 1> log_sigma = Eigen::Matrix<Scalar, 2, 1>::Zero();

  Scalar sigma(int d) const {
    return std::clamp(std::exp(log_sigma(d)), Scalar(kSigmaMin), Scalar(kSigmaMax));
  }
  // d sigma / d log_sigma is sigma inside the clamp range and 0 outside.
  bool sigma_clamped(int d) const {
    const Scalar s = std::exp(log_sigma(d));
    return s < Scalar(kSigmaMin) || s > Scalar(kSigmaMax);
  }
};

// Unnormalized: exp(-0.5 * sum_d ((u_d - mu_d) / sigma_d)^2), peak value 1.
template <typename Scalar>
Scalar kernel_weight(Scalar rho, Scalar theta, const GaussianKernel<Scalar>& k) {
  const Scalar a = (rho - k.mu(0)) / k.sigma(0);
  const Scalar b = (theta - k.mu(1)) / k.sigma(1);
  return std::exp(Scalar(-0.5) * (a * a + b * b));
}

template <typename Scalar>
Scalar kernel_weight(const PseudoCoord& u, const GaussianKernel<Scalar>& k) {
  return kernel_weight(static_cast<Scalar>(u.rho), static_cast<Scalar>(u.theta), k);
}

template <typename Scalar>
struct KernelWeightGrad {
  Eigen::Matrix<Scalar, 2, 1> d_mu;
  Eigen::Matrix<Scalar, 2, 1> d_log_sigma;
};

template <typename Scalar>
KernelWeightGrad<Scalar> kernel_weight_grad(Scalar rho, Scalar theta, const GaussianKernel<Scalar>& k) {
  const Scalar w = kernel_weight(rho, theta, k);
  const Scalar u[2] = {rho, theta};
  KernelWeightGrad<Scalar> g;
  for (int d = 0; d < 2; ++d) {
    const Scalar s = k.sigma(d);
    const Scalar delta = u[d] - k.mu(d);
    g.d_mu(d) = w * delta / (s * s);
    g.d_log_sigma(d) = k.sigma_clamped(d) ? Scalar(0) : w * delta * delta / (s * s);
  }
  return g;
}

// K Gaussian kernels and their filters G_k (d_h/K x d_in); output is the
// ReLU of the kernel-wise concatenation.
template <typename Scalar>
struct ConvLayer {
  Parameter<Scalar> mu;         // K x 2, columns (rho, theta)
  Parameter<Scalar> log_sigma;  // K x 2
  std::vector<Parameter<Scalar>> G;

  ConvLayer() = default;
  ConvLayer(const std::string& prefix, Index K, Index d_in, Index d_h)
      : mu(prefix + ".mu", K, 2), log_sigma(prefix + ".log_sigma", K, 2) {
    if (K < 1 || d_h % K != 0) {
      throw ConfigError(prefix + ": d_h=" + std::to_string(d_h) + " not divisible by K=" + std::to_string(K));
    }
    for (Index k = 0; k < K; ++k) G.emplace_back(prefix + ".G" + std::to_string(k), d_h / K, d_in);
  }

  Index kernels() const { return static_cast<Index>(G.size()); }
  Index input_width() const { return G.empty() ? 0 : G.front().value.cols(); }
  Index slice_width() const { return G.empty() ? 0 : G.front().value.rows(); }
  Index output_width() const { return slice_width() * kernels(); }

  GaussianKernel<Scalar> kernel(Index k) const {
    GaussianKernel<Scalar> g;
    g.mu = mu.value.row(k).transpose();
    g.log_sigma = log_sigma.value.row(k).transpose();
    return g;
  }

  template <typename F>
  void for_each(F&& f) {
    f(mu);
    f(log_sigma);
    for (auto& g : G) f(g);
  }
};

template <typename Scalar>
struct ConvTrace {
  Matrix<Scalar> input;
  std::vector<Matrix<Scalar>> weights;     // per kernel, N x m kernel weights w_k(u(i, j))
  std::vector<Matrix<Scalar>> aggregated;  // per kernel, N x d_in patch outputs f_k
  Matrix<Scalar> pre;                      // N x d_h before ReLU
  bool empty() const { return pre.size() == 0; }
};

// f_k(i) = sum_{j in N(i)} w_k(u(i,j)) alpha_ij v_j for every k; returns K x d_in.
template <typename Scalar>
Matrix<Scalar> patch_operator(Index i, const Matrix<Scalar>& V, const LearnedGraph<Scalar>& g,
                              const PairwiseCoords<Scalar>& coords, const ConvLayer<Scalar>& layer) {
  Matrix<Scalar> f = Matrix<Scalar>::Zero(layer.kernels(), V.cols());
  for (Index k = 0; k < layer.kernels(); ++k) {
    const GaussianKernel<Scalar> kern = layer.kernel(k);
    for (Index s = 0; s < g.m(); ++s) {
      const Index j = g.neighbors(i, s);
      const Scalar w = kernel_weight(coords.rho(i, j), coords.theta(i, j), kern);
      f.row(k) += (w * g.alpha(i, s)) * V.row(j);
    }
  }
  return f;
}

template <typename Scalar>
Matrix<Scalar> conv_forward(const Matrix<Scalar>& V, const LearnedGraph<Scalar>& g,
                            const PairwiseCoords<Scalar>& coords, const ConvLayer<Scalar>& layer,
                            ConvTrace<Scalar>* trace = nullptr) {
  const Index n = V.rows();
  const Index K = layer.kernels();
  const Index slice = layer.slice_width();
  if (V.cols() != layer.input_width()) {
    throw DimensionError("conv_forward: input " + shape_str(V) + " vs filter width " +
                         std::to_string(layer.input_width()));
  }
  if (g.nodes() != n || coords.nodes() != n) {
    throw DimensionError("conv_forward: graph/coords node count mismatch with N=" + std::to_string(n));
  }
  Matrix<Scalar> pre(n, slice * K);
  if (trace != nullptr) {
    trace->input = V;
    trace->weights.assign(static_cast<std::size_t>(K), {});
    trace->aggregated.assign(static_cast<std::size_t>(K), {});
  }
  Matrix<Scalar> routing(n, n);
  Matrix<Scalar> w(n, g.m());
  for (Index k = 0; k < K; ++k) {
    const GaussianKernel<Scalar> kern = layer.kernel(k);
    routing.setZero();
    for (Index i = 0; i < n; ++i) {
      for (Index s = 0; s < g.m(); ++s) {
        const Index j = g.neighbors(i, s);
        w(i, s) = kernel_weight(coords.rho(i, j), coords.theta(i, j), kern);
        routing(i, j) = w(i, s) * g.alpha(i, s);
      }
    }
    Matrix<Scalar> f = routing * V;
    pre.middleCols(k * slice, slice).noalias() = f * layer.G[static_cast<std::size_t>(k)].value.transpose();
    if (trace != nullptr) {
      trace->weights[static_cast<std::size_t>(k)] = w;
      trace->aggregated[static_cast<std::size_t>(k)] = std::move(f);
    }
  }
  Matrix<Scalar> out = relu(pre);
  if (trace != nullptr) trace->pre = std::move(pre);
  return out;
}

// Accumulates grads of G_k, mu_k, log_sigma_k into `layer`, adds dL/dalpha
// into `dalpha` (N x m) and returns dL/dV.
template <typename Scalar>
Matrix<Scalar> conv_backward(const ConvTrace<Scalar>& trace, const Matrix<Scalar>& dH, const LearnedGraph<Scalar>& g,
                             const PairwiseCoords<Scalar>& coords, ConvLayer<Scalar>& layer, Matrix<Scalar>& dalpha) {
  if (trace.empty()) throw StateError("conv_backward: no cached forward pass");
  if (dH.rows() != trace.pre.rows() || dH.cols() != trace.pre.cols()) {
    throw DimensionError("conv_backward: upstream " + shape_str(dH) + " vs output " + shape_str(trace.pre));
  }
  const Index n = trace.input.rows();
  const Index slice = layer.slice_width();
  if (dalpha.rows() != n || dalpha.cols() != g.m()) dalpha = Matrix<Scalar>::Zero(n, g.m());
  const Matrix<Scalar> dpre = dH.cwiseProduct(Matrix<Scalar>(relu_mask(trace.pre)));
  Matrix<Scalar> dV = Matrix<Scalar>::Zero(n, trace.input.cols());
  Matrix<Scalar> routing(n, n);
  for (Index k = 0; k < layer.kernels(); ++k) {
    auto& G = layer.G[static_cast<std::size_t>(k)];
    const auto& f = trace.aggregated[static_cast<std::size_t>(k)];
    const auto& w = trace.weights[static_cast<std::size_t>(k)];
    const auto dslice = dpre.middleCols(k * slice, slice);
    G.grad.noalias() += dslice.transpose() * f;
    const Matrix<Scalar> df = dslice * G.value;
    routing.setZero();
    for (Index i = 0; i < n; ++i) {
      for (Index s = 0; s < g.m(); ++s) routing(i, g.neighbors(i, s)) = w(i, s) * g.alpha(i, s);
    }
    dV.noalias() += routing.transpose() * df;
    const Matrix<Scalar> droute = df * trace.input.transpose();
    const GaussianKernel<Scalar> kern = layer.kernel(k);
    for (Index i = 0; i < n; ++i) {
      for (Index s = 0; s < g.m(); ++s) {
        const Index j = g.neighbors(i, s);
        const Scalar dm = droute(i, j);
        dalpha(i, s) += dm * w(i, s);
        const auto kg = kernel_weight_grad(coords.rho(i, j), coords.theta(i, j), kern);
        const Scalar dw = dm * g.alpha(i, s);
        layer.mu.grad.row(k) += dw * kg.d_mu.transpose();
        layer.log_sigma.grad.row(k) += dw * kg.d_log_sigma.transpose();
      }
    }
  }
  return dV;
}

// Default initialization of kernel means/spreads: rho means uniform in
// [0, 0.5], theta means evenly spaced in (-pi, pi].
template <typename Scalar>
void init_kernels(ConvLayer<Scalar>& layer, Rng& rng) {
  const Index K = layer.kernels();
  for (Index k = 0; k < K; ++k) {
    layer.mu.value(k, 0) = static_cast<Scalar>(rng.uniform(0.0, 0.5));
    layer.mu.value(k, 1) = static_cast<Scalar>(-std::numbers::pi + 2.0 * std::numbers::pi * double(k + 1) / double(K));
    layer.log_sigma.value(k, 0) = static_cast<Scalar>(std::log(0.25));
    layer.log_sigma.value(k, 1) = static_cast<Scalar>(std::log(std::numbers::pi / double(K)));
  }
}

}  // namespace vqag
