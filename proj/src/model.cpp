#include "vqag/model.hpp"

#include <cmath>

namespace vqag {

const char* to_string(Pathway p) {
  switch (p) {
    case Pathway::Graph: return "graph";
    case Pathway::Knn: return "knn";
    case Pathway::Attention: return "attention";
  }
  return "graph";
}

Pathway pathway_from_string(const std::string& s) {
  if (s == "graph") return Pathway::Graph;
  if (s == "knn") return Pathway::Knn;
  if (s == "attention") return Pathway::Attention;
  throw ConfigError("unknown pathway '" + s + "' (expected graph, knn or attention)");
}

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(vocab_size, "vocab_size");
  positive(d_w, "d_w");
  positive(d_q, "d_q");
  positive(d_v_raw, "d_v_raw");
  positive(d_g, "d_g");
  positive(d_e, "d_e");
  positive(K, "K");
  positive(m, "m");
  positive(classes, "classes");
  if (mlp_hidden < 0) throw ConfigError("model.mlp_hidden must be >= 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model.dropout_p must lie in [0, 1)");
  if (pathway != Pathway::Attention) {
    if (d_h.empty()) throw ConfigError("model.d_h must list at least one conv layer");
    for (std::size_t l = 0; l < d_h.size(); ++l) {
      if (d_h[l] < 1 || d_h[l] % K != 0) {
        throw ConfigError("model.d_h[" + std::to_string(l) + "]=" + std::to_string(d_h[l]) +
                          " must be a positive multiple of K=" + std::to_string(K));
      }
    }
    if (d_h.back() != d_q) {
      throw ConfigError("model.d_h[L-1]=" + std::to_string(d_h.back()) + " must equal d_q=" + std::to_string(d_q) +
                        " for the element-wise fusion");
    }
  }
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.d_w = 300;
  c.d_q = 1024;
  c.d_v_raw = 2048;
  c.d_g = 512;
  c.d_e = 512;
  c.K = 8;
  c.m = 16;
  c.d_h = {2048, 1024};
  c.classes = 3000;
  c.dropout_p = 0.5;
  c.embeddings_trainable = false;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_w = 5;
  c.d_q = 6;
  c.d_v_raw = 3;
  c.d_g = 6;
  c.d_e = 4;
  c.K = 3;
  c.m = 3;
  c.d_h = {6};
  c.classes = 4;
  return c;
}

namespace {

template <typename Scalar>
void glorot(Parameter<Scalar>& p, Rng& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

template <typename Scalar>
void normal_init(Parameter<Scalar>& p, Rng& rng, double stddev) {
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
}

// Re-throws a library error with the pipeline stage prefixed, keeping its type.
template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  auto wrap = [stage](const std::exception& e) { return std::string(stage) + ": " + e.what(); };
  try {
    return f();
  } catch (const DimensionError& e) {
    throw DimensionError(wrap(e));
  } catch (const ConfigError& e) {
    throw ConfigError(wrap(e));
  } catch (const InputError& e) {
    throw InputError(wrap(e));
  } catch (const ValidationError& e) {
    throw ValidationError(wrap(e));
  } catch (const StateError& e) {
    throw StateError(wrap(e));
  }
}

}  // namespace

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  embeddings = Parameter<Scalar>("embeddings", cfg_.vocab_size, cfg_.d_w, cfg_.embeddings_trainable);
  normal_init(embeddings, rng, 0.3);
  embeddings.value.row(Vocabulary::oov_index()).setZero();

  gru = GruParams<Scalar>("gru", cfg_.d_w, cfg_.d_q);
  for (auto* p : {&gru.Wz, &gru.Wr, &gru.Wh, &gru.Uz, &gru.Ur, &gru.Uh}) glorot(*p, rng);

  if (cfg_.pathway != Pathway::Attention) {
    learner = JointEmbedF<Scalar>("graph", cfg_.d_v(), cfg_.d_q, cfg_.d_g, cfg_.d_e);
    glorot(learner.W1, rng);
    glorot(learner.W2, rng);
    if (cfg_.pathway == Pathway::Knn) learner.for_each([](Parameter<Scalar>& p) { p.trainable = false; });
    Index d_in = cfg_.d_v();
    for (Index l = 0; l < cfg_.layers(); ++l) {
      ConvLayer<Scalar> layer("conv" + std::to_string(l), cfg_.K, d_in, cfg_.d_h[static_cast<std::size_t>(l)]);
      init_kernels(layer, rng);
      // Each output slice sees a single kernel, which carries roughly 1/K of the
      // neighbourhood mass at init; without the K gain activations shrink ~K-fold per layer.
      for (auto& G : layer.G) glorot(G, rng, static_cast<double>(cfg_.K));
      convs.push_back(std::move(layer));
      d_in = cfg_.d_h[static_cast<std::size_t>(l)];
    }
  } else {
    attention = AttentionParams<Scalar>("attention", cfg_.d_v(), cfg_.d_q, cfg_.d_g, cfg_.d_q);
    glorot(attention.W, rng);
    glorot(attention.w, rng);
    glorot(attention.Wv, rng);
  }

  mlp = Mlp2<Scalar>("mlp", cfg_.d_q, cfg_.hidden(), cfg_.classes);
  glorot(mlp.W1, rng);
  glorot(mlp.W2, rng);
}

template <typename Scalar>
Vector<Scalar> Model<Scalar>::forward(const Scene& scene, std::span<const Index> tokens, Mode mode, Rng* rng,
                                      ForwardTrace<Scalar>* trace) const {
  if (scene.raw_width() != cfg_.d_v_raw) {
    throw DimensionError("input: scene feature width " + std::to_string(scene.raw_width()) + " != d_v_raw " +
                         std::to_string(cfg_.d_v_raw));
  }
  if (cfg_.pathway != Pathway::Attention && cfg_.m > scene.objects()) {
    throw ConfigError("input: m=" + std::to_string(cfg_.m) + " exceeds object count " + std::to_string(scene.objects()));
  }
  ForwardTrace<Scalar> local;
  ForwardTrace<Scalar>& t = trace != nullptr ? *trace : local;
  t = ForwardTrace<Scalar>{};

  t.input = node_features<Scalar>(scene);
  if (mode == Mode::Train && cfg_.dropout_p > 0.0) {
    if (rng == nullptr) throw StateError("input: training-mode forward needs an Rng for dropout");
    t.input.leftCols(cfg_.d_v_raw) =
        t.input.leftCols(cfg_.d_v_raw).cwiseProduct(dropout_mask<Scalar>(scene.objects(), cfg_.d_v_raw, cfg_.dropout_p, *rng));
  }

  GruTrace<Scalar>* gru_trace = trace != nullptr ? &t.gru : nullptr;
  t.q = in_stage("question_encoder", [&] { return encode_question(tokens, embeddings.value, gru, gru_trace); });

  if (cfg_.pathway == Pathway::Attention) {
    t.pooled = in_stage("attention", [&] {
      return attention_baseline(t.input, t.q, attention, trace != nullptr ? &t.attention : nullptr);
    });
  } else {
    in_stage("graph_learner", [&] {
      if (cfg_.pathway == Pathway::Graph) {
        t.graph = learn_graph(t.input, t.q, learner, cfg_.m, cfg_.force_self_loop,
                              trace != nullptr ? &t.learner : nullptr);
      } else {
        t.graph = cast_graph<Scalar>(knn_graph(scene, cfg_.m));
      }
      t.coords = pairwise_coords<Scalar>(scene.boxes);
      return 0;
    });
    in_stage("graph_conv", [&] {
      Matrix<Scalar> H = t.input;
      if (trace != nullptr) t.convs.resize(convs.size());
      for (std::size_t l = 0; l < convs.size(); ++l) {
        H = conv_forward(H, t.graph, t.coords, convs[l], trace != nullptr ? &t.convs[l] : nullptr);
        if (trace != nullptr) t.layer_outputs.push_back(H);
      }
      t.pool = max_pool_nodes(H);
      t.pooled = t.pool.value;
      return 0;
    });
  }

  t.logits = in_stage("head", [&] {
    t.fused = fuse(t.pooled, t.q);
    return classify(t.fused, mlp, trace != nullptr ? &t.mlp : nullptr);
  });
  t.valid = trace != nullptr;
  return t.logits;
}

template <typename Scalar>
Scalar Model<Scalar>::backward(const ForwardTrace<Scalar>& t, const Vector<Scalar>& targets, Scalar scale) {
  if (!t.valid) throw StateError("backward: forward ran without a trace");
  const Scalar loss = soft_bce_loss(targets, t.logits);
  const Vector<Scalar> dlogits = scale * soft_bce_grad(targets, t.logits);
  const Vector<Scalar> dfused = classify_backward(t.mlp, dlogits, mlp);
  const Vector<Scalar> dpooled = dfused.cwiseProduct(t.q);
  Vector<Scalar> dq = dfused.cwiseProduct(t.pooled);

  if (cfg_.pathway == Pathway::Attention) {
    attention_backward(t.attention, dpooled, attention, dq, mutation_ == Mutation::SignFlip);
  } else {
    Matrix<Scalar> dH = max_pool_backward(t.pool, dpooled, t.input.rows());
    if (cfg_.pathway == Pathway::Knn && mutation_ == Mutation::SignFlip) dH = -dH;
    Matrix<Scalar> dalpha = Matrix<Scalar>::Zero(t.graph.nodes(), t.graph.m());
    for (std::size_t l = convs.size(); l-- > 0;) {
      dH = conv_backward(t.convs[l], dH, t.graph, t.coords, convs[l], dalpha);
    }
    if (cfg_.pathway == Pathway::Graph) {
      if (mutation_ == Mutation::SignFlip) dalpha = -dalpha;
      graph_learner_backward(t.learner, t.graph, dalpha, learner, dq);
    }
  }
  gru_backward(t.gru, dq, gru, embeddings.trainable ? &embeddings.grad : nullptr);
  return loss;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Model<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  auto add = [&out](Parameter<Scalar>& p) { out.push_back(&p); };
  add(embeddings);
  gru.for_each(add);
  if (cfg_.pathway == Pathway::Attention) {
    attention.for_each(add);
  } else {
    learner.for_each(add);
    for (auto& c : convs) c.for_each(add);
  }
  mlp.for_each(add);
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> Model<Scalar>::parameters() const {
  auto mut = const_cast<Model<Scalar>*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename Scalar>
Parameter<Scalar>* Model<Scalar>::find(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template class Model<double>;
template class Model<float>;

template <typename To, typename From>
void copy_parameters(const Model<From>& from, Model<To>& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw DimensionError("copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || src[i]->value.rows() != dst[i]->value.rows() ||
        src[i]->value.cols() != dst[i]->value.cols()) {
      throw DimensionError("copy_parameters: mismatch at " + src[i]->name);
    }
    dst[i]->value = src[i]->value.template cast<To>();
  }
}

template void copy_parameters<float, double>(const Model<double>&, Model<float>&);
template void copy_parameters<double, float>(const Model<float>&, Model<double>&);
template void copy_parameters<double, double>(const Model<double>&, Model<double>&);

}  // namespace vqag
