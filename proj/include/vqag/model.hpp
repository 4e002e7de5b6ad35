#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqag/baselines.hpp"
#include "vqag/core.hpp"
#include "vqag/data.hpp"
#include "vqag/graph_conv.hpp"
#include "vqag/graph_learner.hpp"
#include "vqag/head.hpp"
#include "vqag/question_encoder.hpp"

namespace vqag {

// Image-representation stage feeding the shared head.
enum class Pathway { Graph, Knn, Attention };

const char* to_string(Pathway p);
Pathway pathway_from_string(const std::string& s);

enum class Mode { Train, Eval };

// Deliberate backward corruption, used to show the gradient check has teeth.
enum class Mutation { None, SignFlip };

struct ModelConfig {
  Index vocab_size = 1;
  Index d_w = 32;
  Index d_q = 64;
  Index d_v_raw = 32;
  Index d_g = 64;  // hidden width of F
  Index d_e = 64;  // joint embedding width
  Index K = 8;
  Index m = 4;
  std::vector<Index> d_h = {128, 64};
  Index mlp_hidden = 0;  // 0 means d_q
  Index classes = 2;
  double dropout_p = 0.0;
  bool force_self_loop = false;
  bool embeddings_trainable = true;
  Pathway pathway = Pathway::Graph;

  Index d_v() const { return d_v_raw + 4; }
  Index layers() const { return static_cast<Index>(d_h.size()); }
  Index hidden() const { return mlp_hidden > 0 ? mlp_hidden : d_q; }

  // Throws ConfigError on any violated shape constraint.
  void validate() const;

  static ModelConfig desk();
  static ModelConfig full();
  static ModelConfig tiny();
};

template <typename Scalar>
struct ForwardTrace {
  bool valid = false;
  Matrix<Scalar> input;  // V after dropout
  GruTrace<Scalar> gru;
  Vector<Scalar> q;
  GraphLearnerTrace<Scalar> learner;
  LearnedGraph<Scalar> graph;
  PairwiseCoords<Scalar> coords;
  std::vector<ConvTrace<Scalar>> convs;
  std::vector<Matrix<Scalar>> layer_outputs;
  PoolResult<Scalar> pool;
  AttentionTrace<Scalar> attention;
  Vector<Scalar> pooled, fused;
  MlpTrace<Scalar> mlp;
  Vector<Scalar> logits;
};

template <typename Scalar = double>
class Model {
 public:
  Model() = default;
  // Validates the config and draws the initial parameters from `seed`.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Logits for one (scene, question). Training mode needs `rng` for dropout.
  Vector<Scalar> forward(const Scene& scene, std::span<const Index> tokens, Mode mode = Mode::Eval,
                         Rng* rng = nullptr, ForwardTrace<Scalar>* trace = nullptr) const;

  // Loss for the traced sample; accumulates scale * dLoss/dtheta into grads.
  Scalar backward(const ForwardTrace<Scalar>& trace, const Vector<Scalar>& targets, Scalar scale = Scalar(1));

  // Every parameter in a fixed order (the checkpoint and optimizer order).
  std::vector<Parameter<Scalar>*> parameters();
  std::vector<const Parameter<Scalar>*> parameters() const;
  Parameter<Scalar>* find(const std::string& name);
  void zero_grad();
  Index parameter_count() const;

  void set_mutation(Mutation m) { mutation_ = m; }

  Parameter<Scalar> embeddings;
  GruParams<Scalar> gru;
  JointEmbedF<Scalar> learner;  // present for Graph; frozen placeholder for Knn
  std::vector<ConvLayer<Scalar>> convs;
  AttentionParams<Scalar> attention;
  Mlp2<Scalar> mlp;

 private:
  ModelConfig cfg_;
  Mutation mutation_ = Mutation::None;
};

extern template class Model<double>;
extern template class Model<float>;

// Copies parameter values between precisions (names and shapes must agree).
template <typename To, typename From>
void copy_parameters(const Model<From>& from, Model<To>& to);

}  // namespace vqag
