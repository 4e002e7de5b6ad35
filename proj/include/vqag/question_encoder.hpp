#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vqag/core.hpp"

namespace vqag {

// Token <-> row index map. Row 0 is always the out-of-vocabulary token.
class Vocabulary {
 public:
  static constexpr const char* kOov = "<unk>";

  Vocabulary() { add(kOov); }
  explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
    for (const auto& t : tokens) add(t);
  }

  Index add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const Index id = static_cast<Index>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  Index lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? oov_index() : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  static constexpr Index oov_index() { return 0; }
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::string& token(Index i) const { return tokens_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<Index> encode(const std::vector<std::string>& words) const {
    std::vector<Index> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(lookup(w));
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, Index> index_;
};

// Lowercase, drop punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Pretrained word vectors as loaded from disk (always double on disk and here).
struct EmbeddingTable {
  Vocabulary vocab;
  MatrixXd vectors;  // vocab.size() x d_w, row 0 = OOV
  Index width() const { return vectors.cols(); }
};

// Text format: one line per token, "token v1 ... v_dw". The OOV row is zero
// unless the file itself defines "<unk>".
EmbeddingTable load_embeddings_text(const std::string& path);
void save_embeddings_text(const EmbeddingTable& table, const std::string& path);
// Binary cache: see README for the layout.
EmbeddingTable load_embeddings_binary(const std::string& path);
void save_embeddings_binary(const EmbeddingTable& table, const std::string& path);
// Binary when the file starts with the cache magic, text otherwise.
EmbeddingTable load_embeddings(const std::string& path);

// Copies the pretrained vector of every token in `words` that the table knows
// into the matching row of `target` (vocab x d_w). Other rows are untouched.
// Returns the number of rows copied.
Index copy_pretrained_rows(const EmbeddingTable& table, const Vocabulary& words, MatrixXd& target);

template <typename Scalar>
struct GruParams {
  Parameter<Scalar> Wz, Wr, Wh;  // d_q x d_w
  Parameter<Scalar> Uz, Ur, Uh;  // d_q x d_q
  Parameter<Scalar> bz, br, bh;  // d_q x 1

  GruParams() = default;
  GruParams(const std::string& prefix, Index d_w, Index d_q)
      : Wz(prefix + ".W_z", d_q, d_w),
        Wr(prefix + ".W_r", d_q, d_w),
        Wh(prefix + ".W_h", d_q, d_w),
        Uz(prefix + ".U_z", d_q, d_q),
        Ur(prefix + ".U_r", d_q, d_q),
        Uh(prefix + ".U_h", d_q, d_q),
        bz(prefix + ".b_z", d_q, 1),
        br(prefix + ".b_r", d_q, 1),
        bh(prefix + ".b_h", d_q, 1) {}

  Index input_width() const { return Wz.value.cols(); }
  Index hidden_width() const { return Wz.value.rows(); }

  template <typename F>
  void for_each(F&& f) {
    for (auto* p : {&Wz, &Wr, &Wh, &Uz, &Ur, &Uh, &bz, &br, &bh}) f(*p);
  }
};

// Intermediates of one GRU step, kept for backward.
template <typename Scalar>
struct GruStepCache {
  Vector<Scalar> x, h_prev, z, r, candidate, h;
};

template <typename Scalar>
struct GruTrace {
  std::vector<Index> tokens;
  std::vector<GruStepCache<Scalar>> steps;
  bool empty() const { return steps.empty(); }
};

template <typename Scalar>
Vector<Scalar> gru_step(const Vector<Scalar>& x, const Vector<Scalar>& h_prev, const GruParams<Scalar>& p,
                        GruStepCache<Scalar>* cache = nullptr) {
  if (x.size() != p.input_width() || h_prev.size() != p.hidden_width()) {
    throw DimensionError("gru_step: x " + shape_str(x) + ", h " + shape_str(h_prev) + " vs W " +
                         shape_str(p.Wz.value));
  }
  const Vector<Scalar> z = sigmoid(Vector<Scalar>(p.Wz.value * x + p.Uz.value * h_prev + p.bz.vec()));
  const Vector<Scalar> r = sigmoid(Vector<Scalar>(p.Wr.value * x + p.Ur.value * h_prev + p.br.vec()));
  const Vector<Scalar> gated = r.cwiseProduct(h_prev);
  const Vector<Scalar> candidate = (p.Wh.value * x + p.Uh.value * gated + p.bh.vec()).array().tanh().matrix();
  Vector<Scalar> h = (Vector<Scalar>::Ones(z.size()) - z).cwiseProduct(h_prev) + z.cwiseProduct(candidate);
  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->z = z;
    cache->r = r;
    cache->candidate = candidate;
    cache->h = h;
  }
  return h;
}

// Folds gru_step over the first `length` tokens from a zero state. Tokens past
// `length` (batch padding) never touch the state.
template <typename Scalar>
Vector<Scalar> encode_question(std::span<const Index> tokens, std::size_t length, const Matrix<Scalar>& embeddings,
                               const GruParams<Scalar>& p, GruTrace<Scalar>* trace = nullptr) {
  if (length == 0) throw InputError("encode_question: empty token sequence");
  if (length > tokens.size()) throw InputError("encode_question: length exceeds token count");
  if (embeddings.cols() != p.input_width()) {
    throw DimensionError("encode_question: embedding width " + std::to_string(embeddings.cols()) +
                         " vs GRU input width " + std::to_string(p.input_width()));
  }
  if (trace != nullptr) {
    trace->tokens.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(length));
    trace->steps.assign(length, {});
  }
  Vector<Scalar> h = Vector<Scalar>::Zero(p.hidden_width());
  for (std::size_t t = 0; t < length; ++t) {
    Index row = tokens[t];
    if (row < 0 || row >= embeddings.rows()) row = Vocabulary::oov_index();
    if (trace != nullptr) trace->tokens[t] = row;
    const Vector<Scalar> x = embeddings.row(row).transpose();
    h = gru_step(x, h, p, trace != nullptr ? &trace->steps[t] : nullptr);
  }
  return h;
}

template <typename Scalar>
Vector<Scalar> encode_question(std::span<const Index> tokens, const Matrix<Scalar>& embeddings,
                               const GruParams<Scalar>& p, GruTrace<Scalar>* trace = nullptr) {
  return encode_question(tokens, tokens.size(), embeddings, p, trace);
}

// Backpropagates dq (gradient w.r.t. the final hidden state) through the
// cached sequence, accumulating into p's grads and, when non-null, the rows of
// embedding_grad that were looked up.
template <typename Scalar>
void gru_backward(const GruTrace<Scalar>& trace, const Vector<Scalar>& dq, GruParams<Scalar>& p,
                  Matrix<Scalar>* embedding_grad) {
  if (trace.empty()) throw StateError("gru_backward: no cached forward pass");
  if (dq.size() != p.hidden_width()) throw DimensionError("gru_backward: upstream gradient " + shape_str(dq));
  Vector<Scalar> dh = dq;
  for (std::size_t t = trace.steps.size(); t-- > 0;) {
    const auto& c = trace.steps[t];
    const Vector<Scalar> dz = dh.cwiseProduct(c.candidate - c.h_prev);
    const Vector<Scalar> da_h =
        dh.cwiseProduct(c.z).cwiseProduct((Vector<Scalar>::Ones(c.h.size()) - c.candidate.cwiseAbs2()));
    Vector<Scalar> dh_prev = dh - dh.cwiseProduct(c.z);

    const Vector<Scalar> gated = c.r.cwiseProduct(c.h_prev);
    p.Wh.grad.noalias() += da_h * c.x.transpose();
    p.Uh.grad.noalias() += da_h * gated.transpose();
    p.bh.grad_vec() += da_h;

    const Vector<Scalar> dgated = p.Uh.value.transpose() * da_h;
    const Vector<Scalar> dr = dgated.cwiseProduct(c.h_prev);
    dh_prev += dgated.cwiseProduct(c.r);

    const Vector<Scalar> da_z = dz.array() * c.z.array() * (Scalar(1) - c.z.array());
    const Vector<Scalar> da_r = dr.array() * c.r.array() * (Scalar(1) - c.r.array());
    p.Wz.grad.noalias() += da_z * c.x.transpose();
    p.Uz.grad.noalias() += da_z * c.h_prev.transpose();
    p.bz.grad_vec() += da_z;
    p.Wr.grad.noalias() += da_r * c.x.transpose();
    p.Ur.grad.noalias() += da_r * c.h_prev.transpose();
    p.br.grad_vec() += da_r;

    dh_prev.noalias() += p.Uz.value.transpose() * da_z;
    dh_prev.noalias() += p.Ur.value.transpose() * da_r;

    if (embedding_grad != nullptr) {
      Vector<Scalar> dx = p.Wz.value.transpose() * da_z;
      dx.noalias() += p.Wr.value.transpose() * da_r;
      dx.noalias() += p.Wh.value.transpose() * da_h;
      embedding_grad->row(trace.tokens[t]) += dx.transpose();
    }
    dh = std::move(dh_prev);
  }
}

}  // namespace vqag
