#include "vqag/baselines.hpp"

#include <algorithm>
#include <numeric>

namespace vqag {

LearnedGraph<double> knn_graph(std::span<const Box> boxes, Index m) {
  const Index n = static_cast<Index>(boxes.size());
  if (m < 1 || m > n) {
    throw ConfigError("knn_graph: m=" + std::to_string(m) + " must lie in [1, N=" + std::to_string(n) + "]");
  }
  LearnedGraph<double> g;
  g.A.resize(n, n);
  g.neighbors.resize(n, m);
  g.alpha = MatrixXd::Constant(n, m, 1.0 / static_cast<double>(m));
  for (Index i = 0; i < n; ++i) {
    const Box& bi = boxes[static_cast<std::size_t>(i)];
    for (Index j = 0; j < n; ++j) {
      const Box& bj = boxes[static_cast<std::size_t>(j)];
      const double dx = bj.cx() - bi.cx();
      const double dy = bj.cy() - bi.cy();
      g.A(i, j) = -(dx * dx + dy * dy);
    }
    const std::vector<Index> sel = top_m(g.A.row(i), m);
    for (Index s = 0; s < m; ++s) g.neighbors(i, s) = sel[static_cast<std::size_t>(s)];
  }
  return g;
}

}  // namespace vqag
