#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "vqag/gradcheck.hpp"
#include "vqag/graph_conv.hpp"

using namespace vqag;

namespace {

Box centred(double cx, double cy, double half = 0.05) { return {cx - half, cy - half, cx + half, cy + half}; }

}  // namespace

TEST_CASE("pseudo_coords cases") {
  const Box b = centred(0.5, 0.5);
  const PseudoCoord same = pseudo_coords(b, b);
  CHECK(same.rho == 0.0);
  CHECK(same.theta == 0.0);

  const PseudoCoord right = pseudo_coords(centred(0.5, 0.5), centred(0.75, 0.5));
  CHECK(right.rho == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(right.theta == 0.0);

  const PseudoCoord tri = pseudo_coords(Box{0, 0, 0, 0}, Box{0.3, 0.4, 0.3, 0.4});
  CHECK(tri.rho == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tri.theta == doctest::Approx(std::atan2(0.4, 0.3)).epsilon(1e-12));
  CHECK(tri.theta == doctest::Approx(0.9273).epsilon(1e-4));

  // Straight left is +pi, never -pi; down the image is +pi/2.
  CHECK(pseudo_coords(centred(0.5, 0.5), centred(0.2, 0.5)).theta == std::numbers::pi);
  CHECK(pseudo_coords(centred(0.5, 0.2), centred(0.5, 0.6)).theta == doctest::Approx(std::numbers::pi / 2));

  CHECK_THROWS_AS(pseudo_coords(Box{0, 0, 1.5, 1}, b), ValidationError);
}

TEST_CASE("pseudo_coords ranges and translation invariance") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto boxes = fixture::random_boxes(rng, 2);
    const PseudoCoord u = pseudo_coords(boxes[0], boxes[1]);
    CHECK(u.rho >= 0);
    CHECK(u.theta > -std::numbers::pi);
    CHECK(u.theta <= std::numbers::pi);

    const double tx = rng.uniform(-0.04, 0.04), ty = rng.uniform(-0.04, 0.04);
    auto shift = [&](Box b) {
      b.x1 = std::clamp(b.x1 + tx, 0.0, 1.0);
      b.x2 = std::clamp(b.x2 + tx, 0.0, 1.0);
      b.y1 = std::clamp(b.y1 + ty, 0.0, 1.0);
      b.y2 = std::clamp(b.y2 + ty, 0.0, 1.0);
      return b;
    };
    const Box a2 = shift(boxes[0]), b2 = shift(boxes[1]);
    // Only boxes that stay inside the image are a pure translation.
    if (a2.x2 - a2.x1 != boxes[0].x2 - boxes[0].x1 || b2.x2 - b2.x1 != boxes[1].x2 - boxes[1].x1 ||
        a2.y2 - a2.y1 != boxes[0].y2 - boxes[0].y1 || b2.y2 - b2.y1 != boxes[1].y2 - boxes[1].y1) {
      continue;
    }
    const PseudoCoord v = pseudo_coords(a2, b2);
    CHECK(std::abs(u.rho - v.rho) < 1e-12);
    CHECK(std::abs(u.theta - v.theta) < 1e-9);
  }
}

TEST_CASE("kernel_weight cases") {
  GaussianKernel<double> k;
  k.mu << 0.3, 1.0;
  k.log_sigma << std::log(0.2), std::log(0.5);
  CHECK(kernel_weight(0.3, 1.0, k) == 1.0);
  CHECK(kernel_weight(0.5, 1.0, k) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(kernel_weight(0.3, 0.5, k) == doctest::Approx(0.6065).epsilon(1e-4));

  double prev = 1.0;
  for (double d = 0.05; d < 2.0; d += 0.05) {
    const double w = kernel_weight(0.3 + d, 1.0, k);
    CHECK(w < prev);
    CHECK(w > 0.0);
    prev = w;
  }

  const auto g = kernel_weight_grad(0.3, 1.0, k);
  CHECK(g.d_mu.isZero(0.0));
  CHECK(g.d_log_sigma.isZero(0.0));
}

TEST_CASE("sigma is clamped and clamped sides get no gradient") {
  GaussianKernel<double> k;
  k.log_sigma << -20.0, 5.0;
  CHECK(k.sigma(0) == kSigmaMin);
  CHECK(k.sigma(1) == kSigmaMax);
  const auto g = kernel_weight_grad(0.001, 2.0, k);
  CHECK(g.d_log_sigma.isZero(0.0));
}

TEST_CASE("kernel_weight_grad matches finite differences") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    GaussianKernel<double> k;
    k.mu << rng.uniform(0, 0.5), rng.uniform(-3, 3);
    k.log_sigma << std::log(rng.uniform(0.2, 0.6)), std::log(rng.uniform(0.8, 2.0));
    const double rho = rng.uniform(0, 1), theta = rng.uniform(-3, 3);
    const auto g = kernel_weight_grad(rho, theta, k);
    const double eps = 1e-6;
    for (int d = 0; d < 2; ++d) {
      auto up = k, down = k;
      up.mu(d) += eps;
      down.mu(d) -= eps;
      const double fd_mu = (kernel_weight(rho, theta, up) - kernel_weight(rho, theta, down)) / (2 * eps);
      CHECK(std::abs(g.d_mu(d) - fd_mu) < 1e-8);
      up = k;
      down = k;
      up.log_sigma(d) += eps;
      down.log_sigma(d) -= eps;
      const double fd_ls = (kernel_weight(rho, theta, up) - kernel_weight(rho, theta, down)) / (2 * eps);
      CHECK(std::abs(g.d_log_sigma(d) - fd_ls) < 1e-8);
    }
  }
}

TEST_CASE("patch_operator hand cases") {
  // All centres coincide, so u = (0, 0) = mu and every kernel weight is 1.
  std::vector<Box> boxes{centred(0.5, 0.5), centred(0.5, 0.5), centred(0.5, 0.5)};
  const auto coords = pairwise_coords<double>(boxes);
  ConvLayer<double> layer("conv0", 1, 2, 1);
  LearnedGraph<double> g;
  g.neighbors.resize(3, 2);
  g.alpha.resize(3, 2);
  for (Index i = 0; i < 3; ++i) {
    g.neighbors(i, 0) = 1;
    g.neighbors(i, 1) = 2;
    g.alpha(i, 0) = g.alpha(i, 1) = 0.5;
  }
  MatrixXd V(3, 2);
  V << 9, 9, 1, 0, 0, 1;
  const MatrixXd f = patch_operator(0, V, g, coords, layer);
  CHECK(f(0, 0) == 0.5);
  CHECK(f(0, 1) == 0.5);

  LearnedGraph<double> self;
  self.neighbors = IndexMatrix::Zero(3, 1);
  self.alpha = MatrixXd::Ones(3, 1);
  for (Index i = 0; i < 3; ++i) self.neighbors(i, 0) = i;
  CHECK(MatrixXd(patch_operator(2, V, self, coords, layer)) == MatrixXd(V.row(2)));
}

TEST_CASE("patch_operator and conv_forward match loop oracles") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 6, K = 3, m = 3;
    const auto boxes = fixture::random_boxes(rng, n);
    const auto coords = pairwise_coords<double>(boxes);
    const auto layer = fixture::random_layer(rng, K, 4, 6);
    const auto g = fixture::random_graph(rng, n, m);
    const MatrixXd V = fixture::random_matrix(rng, n, 4);
    const auto og = oracle::graph_of(g);
    for (Index i = 0; i < n; ++i) {
      const MatrixXd want = oracle::patch(i, V, og, boxes, layer);
      CHECK((patch_operator(i, V, g, coords, layer) - want).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK((conv_forward(V, g, coords, layer) - oracle::conv(V, og, boxes, layer)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv_forward trivial cases and errors") {
  Rng rng(4);
  const auto boxes = fixture::random_boxes(rng, 4);
  const auto coords = pairwise_coords<double>(boxes);
  const auto g = fixture::random_graph(rng, 4, 2);
  const MatrixXd V = fixture::random_matrix(rng, 4, 3);

  ConvLayer<double> zero("conv0", 3, 3, 6);
  CHECK(conv_forward(V, g, coords, zero).isZero(0.0));

  // K=1, G = I, self-loop only, kernel centred on the self coordinate.
  ConvLayer<double> id("conv0", 1, 3, 3);
  id.G[0].value = MatrixXd::Identity(3, 3);
  LearnedGraph<double> self;
  self.neighbors.resize(4, 1);
  self.alpha = MatrixXd::Ones(4, 1);
  for (Index i = 0; i < 4; ++i) self.neighbors(i, 0) = i;
  CHECK(conv_forward(V, self, coords, id) == MatrixXd(relu(V)));

  CHECK_THROWS_AS(ConvLayer<double>("conv0", 4, 3, 6), ConfigError);
  CHECK_THROWS_AS(conv_forward(MatrixXd(4, 5), g, coords, id), DimensionError);
  CHECK_THROWS_AS(conv_forward(MatrixXd(3, 3), g, coords, id), DimensionError);
}

TEST_CASE("conv_forward is permutation equivariant") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 7, m = 3;
    const auto boxes = fixture::random_boxes(rng, n);
    const auto layer = fixture::random_layer(rng, 2, 4, 6);
    const auto g = fixture::random_graph(rng, n, m);
    const MatrixXd V = fixture::random_matrix(rng, n, 4);
    const MatrixXd H = conv_forward(V, g, pairwise_coords<double>(boxes), layer);

    const auto perm = fixture::random_permutation(rng, n);
    std::vector<Index> inverse(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    std::vector<Box> pboxes;
    MatrixXd PV(n, 4);
    LearnedGraph<double> pg;
    pg.neighbors.resize(n, m);
    pg.alpha.resize(n, m);
    for (Index i = 0; i < n; ++i) {
      const Index src = perm[static_cast<std::size_t>(i)];
      pboxes.push_back(boxes[static_cast<std::size_t>(src)]);
      PV.row(i) = V.row(src);
      std::vector<std::pair<Index, double>> row;
      for (Index s = 0; s < m; ++s) row.emplace_back(inverse[static_cast<std::size_t>(g.neighbors(src, s))], g.alpha(src, s));
      std::sort(row.begin(), row.end());
      for (Index s = 0; s < m; ++s) {
        pg.neighbors(i, s) = row[static_cast<std::size_t>(s)].first;
        pg.alpha(i, s) = row[static_cast<std::size_t>(s)].second;
      }
    }
    const MatrixXd PH = conv_forward(PV, pg, pairwise_coords<double>(pboxes), layer);
    for (Index i = 0; i < n; ++i) CHECK((PH.row(i) - H.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv_backward needs a trace and is zero for zero upstream") {
  Rng rng(6);
  const auto boxes = fixture::random_boxes(rng, 5);
  const auto coords = pairwise_coords<double>(boxes);
  auto layer = fixture::random_layer(rng, 3, 4, 6);
  const auto g = fixture::random_graph(rng, 5, 3);
  MatrixXd dalpha;
  ConvTrace<double> empty;
  CHECK_THROWS_AS(conv_backward(empty, MatrixXd(MatrixXd::Zero(5, 6)), g, coords, layer, dalpha), StateError);

  ConvTrace<double> trace;
  conv_forward(fixture::random_matrix(rng, 5, 4), g, coords, layer, &trace);
  CHECK_THROWS_AS(conv_backward(trace, MatrixXd(MatrixXd::Zero(5, 5)), g, coords, layer, dalpha), DimensionError);
  const MatrixXd dV = conv_backward(trace, MatrixXd(MatrixXd::Zero(5, 6)), g, coords, layer, dalpha);
  CHECK(dV.isZero(0.0));
  CHECK(dalpha.isZero(0.0));
  layer.for_each([](Parameter<double>& p) { CHECK(p.grad.isZero(0.0)); });
}

TEST_CASE("conv_backward matches finite differences") {
  // N=5, d_in=4, d_h=6, K=3, m=3.
  Rng rng(7);
  const auto boxes = fixture::random_boxes(rng, 5);
  const auto coords = pairwise_coords<double>(boxes);
  auto layer = fixture::random_layer(rng, 3, 4, 6);
  auto g = fixture::random_graph(rng, 5, 3);
  Parameter<double> V("V", 5, 4), alpha("alpha", 5, 3);
  V.value = fixture::random_matrix(rng, 5, 4);
  alpha.value = g.alpha;
  const MatrixXd c = fixture::random_matrix(rng, 5, 6);

  ConvTrace<double> trace;
  conv_forward(V.value, g, coords, layer, &trace);
  MatrixXd dalpha;
  V.grad = conv_backward(trace, c, g, coords, layer, dalpha);
  alpha.grad = dalpha;

  auto loss = [&] {
    g.alpha = alpha.value;
    return (conv_forward(V.value, g, coords, layer).array() * c.array()).sum();
  };
  double worst = 0;
  auto check = [&](Parameter<double>& p) {
    const MatrixXd fd = fd_gradient(loss, p, 1e-6);
    for (Index i = 0; i < fd.size(); ++i) worst = std::max(worst, relative_error(p.grad.data()[i], fd.data()[i]));
  };
  layer.for_each(check);
  check(V);
  check(alpha);
  CHECK(worst < 1e-5);
}

TEST_CASE("mu gradient vanishes when every offset sits on the mean") {
  // All boxes coincide, so every u(i, j) = (0, 0) = mu.
  std::vector<Box> boxes(4, centred(0.4, 0.6));
  const auto coords = pairwise_coords<double>(boxes);
  Rng rng(8);
  auto layer = fixture::random_layer(rng, 2, 3, 4);
  layer.mu.value.setZero();
  const auto g = fixture::random_graph(rng, 4, 2);
  ConvTrace<double> trace;
  conv_forward(fixture::random_matrix(rng, 4, 3), g, coords, layer, &trace);
  MatrixXd dalpha;
  conv_backward(trace, fixture::random_matrix(rng, 4, 4), g, coords, layer, dalpha);
  CHECK(layer.mu.grad.isZero(0.0));
}

TEST_CASE("kernel weights lie in (0, 1]") {
  Rng rng(9);
  const auto layer = fixture::random_layer(rng, 8, 2, 8);
  const auto boxes = fixture::random_boxes(rng, 8);
  const auto coords = pairwise_coords<double>(boxes);
  for (Index k = 0; k < 8; ++k) {
    for (Index i = 0; i < 8; ++i) {
      for (Index j = 0; j < 8; ++j) {
        const double w = kernel_weight(coords.rho(i, j), coords.theta(i, j), layer.kernel(k));
        CHECK(w > 0.0);
        CHECK(w <= 1.0);
      }
    }
  }
}

TEST_CASE("default kernel initialization") {
  Rng rng(10);
  ConvLayer<double> layer("conv0", 4, 3, 8);
  init_kernels(layer, rng);
  for (Index k = 0; k < 4; ++k) {
    CHECK(layer.mu.value(k, 0) >= 0.0);
    CHECK(layer.mu.value(k, 0) <= 0.5);
    CHECK(layer.mu.value(k, 1) > -std::numbers::pi);
    CHECK(layer.mu.value(k, 1) <= std::numbers::pi + 1e-12);
    CHECK(layer.log_sigma.value(k, 0) == doctest::Approx(std::log(0.25)));
    CHECK(layer.log_sigma.value(k, 1) == doctest::Approx(std::log(std::numbers::pi / 4)));
  }
  CHECK(layer.mu.value(1, 1) - layer.mu.value(0, 1) == doctest::Approx(std::numbers::pi / 2));
}
