#pragma once

// Seeded fixtures shared by the test programs.

#include <filesystem>
#include <string>
#include <vector>

#include "vqag/data.hpp"
#include "vqag/graph_conv.hpp"
#include "vqag/model.hpp"
#include "vqag/run_config.hpp"

namespace fixture {

using namespace vqag;

inline MatrixXd random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

inline VectorXd random_vector(Rng& rng, Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal(0.0, scale);
  return v;
}

inline std::vector<Box> random_boxes(Rng& rng, Index n) {
  std::vector<Box> boxes;
  for (Index i = 0; i < n; ++i) {
    const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
    const double x = rng.uniform(0.0, 1.0 - w), y = rng.uniform(0.0, 1.0 - h);
    boxes.push_back({x, y, x + w, y + h});
  }
  return boxes;
}

inline Scene random_scene(Rng& rng, Index n, Index raw_width, std::int64_t id = 0) {
  Scene s;
  s.image_id = id;
  s.boxes = random_boxes(rng, n);
  s.features = random_matrix(rng, n, raw_width);
  return s;
}

inline std::vector<Index> random_tokens(Rng& rng, Index vocab, Index length) {
  std::vector<Index> t;
  for (Index i = 0; i < length; ++i) t.push_back(1 + static_cast<Index>(rng.index(static_cast<std::uint64_t>(vocab - 1))));
  return t;
}

// Every parameter redrawn at unit-ish scale and the kernels spread out, so no
// path is dead and no kernel weight underflows.
inline void randomize(Model<double>& model, Rng& rng, double scale = 0.5) {
  for (auto* p : model.parameters()) {
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.normal(0.0, scale);
  }
  for (auto& layer : model.convs) {
    for (Index k = 0; k < layer.kernels(); ++k) {
      layer.mu.value(k, 0) = rng.uniform(0.0, 0.5);
      layer.mu.value(k, 1) = rng.uniform(-3.0, 3.0);
      layer.log_sigma.value(k, 0) = std::log(rng.uniform(0.2, 0.6));
      layer.log_sigma.value(k, 1) = std::log(rng.uniform(0.8, 2.0));
    }
  }
}

// A small config with room for up to 8 nodes.
inline ModelConfig small_config(Pathway pathway = Pathway::Graph) {
  ModelConfig c = ModelConfig::tiny();
  c.vocab_size = 12;
  c.d_h = {6, 6};
  c.pathway = pathway;
  return c;
}

inline Scene permuted(const Scene& s, const std::vector<Index>& perm) {
  Scene out = s;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.boxes[i] = s.boxes[static_cast<std::size_t>(perm[i])];
    out.features.row(static_cast<Index>(i)) = s.features.row(perm[i]);
  }
  return out;
}

inline std::vector<Index> random_permutation(Rng& rng, Index n) {
  std::vector<Index> p;
  for (Index i = 0; i < n; ++i) p.push_back(i);
  rng.shuffle(p);
  return p;
}

// Scratch directory under the system temp dir, emptied on creation.
inline ConvLayer<double> random_layer(Rng& rng, Index K, Index d_in, Index d_h) {
  ConvLayer<double> layer("conv0", K, d_in, d_h);
  for (Index k = 0; k < K; ++k) {
    layer.mu.value(k, 0) = rng.uniform(0.0, 0.5);
    layer.mu.value(k, 1) = rng.uniform(-3.0, 3.0);
    layer.log_sigma.value(k, 0) = std::log(rng.uniform(0.2, 0.6));
    layer.log_sigma.value(k, 1) = std::log(rng.uniform(0.8, 2.0));
  }
  for (auto& G : layer.G) G.value = fixture::random_matrix(rng, G.value.rows(), G.value.cols());
  return layer;
}

// Random neighbourhoods of size m with positive weights summing to one.
inline LearnedGraph<double> random_graph(Rng& rng, Index n, Index m) {
  LearnedGraph<double> g;
  g.A = MatrixXd::Zero(n, n);
  g.neighbors.resize(n, m);
  g.alpha.resize(n, m);
  for (Index i = 0; i < n; ++i) {
    auto perm = fixture::random_permutation(rng, n);
    perm.resize(static_cast<std::size_t>(m));
    std::sort(perm.begin(), perm.end());
    double total = 0;
    for (Index s = 0; s < m; ++s) {
      g.neighbors(i, s) = perm[static_cast<std::size_t>(s)];
      g.alpha(i, s) = rng.uniform(0.1, 1.0);
      total += g.alpha(i, s);
    }
    g.alpha.row(i) /= total;
  }
  return g;
}

// A few hundred questions over 5-slot scenes; generates in milliseconds.
inline SynthConfig small_synth(std::size_t scenes, std::uint64_t seed = 1) {
  SynthConfig c;
  c.n_scenes = scenes;
  c.slots = 5;
  c.objects_min = 3;
  c.objects_max = 5;
  c.raw_width = 11;
  c.questions_per_scene = 2;
  c.seed = seed;
  return c;
}

inline ModelConfig model_for(const Dataset& d, Pathway pathway = Pathway::Graph) {
  ModelConfig c = ModelConfig::tiny();
  c.d_v_raw = d.raw_width();
  c.d_w = 8;
  c.d_q = 12;
  c.d_g = 12;
  c.d_e = 8;
  c.d_h = {12};
  c.pathway = pathway;
  bind_to_dataset(c, d);
  return c;
}

inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vqag_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace fixture
