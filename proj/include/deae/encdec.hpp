#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deae/corpus_io.hpp"
#include "deae/rng.hpp"
#include "deae/tensor.hpp"
#include "deae/types.hpp"

namespace deae {

// Plug-in boundary for the sequence backbone. Any implementation that honors
// this contract (deterministic given its own parameters, fixed dimension) can
// drive the extraction pipeline; the bundled toy model below is the reference
// used for tests and desk-scale runs.
class EncoderDecoder {
 public:
  virtual ~EncoderDecoder() = default;
  virtual int dim() const = 0;
  virtual HiddenStates encode(const std::vector<std::string>& tokens) const = 0;
  virtual HiddenStates decode(const std::vector<std::string>& target,
                              const HiddenStates& memory) const = 0;
};

struct Vocab {
  std::vector<std::string> tokens;  // index 0 is <unk>
  std::map<std::string, int> index;

  int id(const std::string& t) const {
    auto it = index.find(t);
    return it == index.end() ? 0 : it->second;
  }

  int size() const { return static_cast<int>(tokens.size()); }

  static Vocab from_tokens(std::vector<std::string> all) {
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    Vocab v;
    v.tokens.push_back("<unk>");
    for (auto& t : all)
      if (t != "<unk>") v.tokens.push_back(std::move(t));
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
      v.index[v.tokens[i]] = static_cast<int>(i);
    return v;
  }

  // Vocabulary over the corpus documents plus all ontology templates and
  // role names. Sorted, so independent of input order.
  static Vocab build(const Corpus& corpus) {
    std::vector<std::string> all;
    for (const auto& doc : corpus.documents)
      all.insert(all.end(), doc.tokens.begin(), doc.tokens.end());
    for (const auto& [type, ont] : corpus.ontologies) {
      all.insert(all.end(), ont.template_tokens.begin(), ont.template_tokens.end());
      for (const auto& role : ont.roles) {
        auto rt = whitespace_tokenize(role);
        all.insert(all.end(), rt.begin(), rt.end());
      }
    }
    return from_tokens(std::move(all));
  }
};

// Single-head attention block: cross-attention onto the memory, a residual,
// and a tanh feed-forward with a second residual.
struct AttentionParams {
  Matrix wq, wk, wv;   // h x h
  Matrix ff1, fb1;     // h x f, 1 x f
  Matrix ff2, fb2;     // f x h, 1 x h

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "ff1", ff1);
    f(prefix + "fb1", fb1);
    f(prefix + "ff2", ff2);
    f(prefix + "fb2", fb2);
  }
};

struct BlockCache {
  Matrix T, M;  // inputs
  Matrix Q, K, V, A, R, F;
};

// O = R + tanh(R ff1 + fb1) ff2 + fb2 where R = T + softmax(T wq (M wk)^T / sqrt(h)) M wv
inline Matrix attention_block_forward(const AttentionParams& p, const Matrix& T,
                                      const Matrix& M, BlockCache* cache = nullptr) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(T.cols));
  Matrix Q = matmul(T, p.wq);
  Matrix K = matmul(M, p.wk);
  Matrix V = matmul(M, p.wv);
  Matrix A = matmul_nt(Q, K);
  for (double& v : A.a) v *= scale;
  softmax_rows_inplace(A);
  Matrix R = add(T, matmul(A, V));
  Matrix Z = matmul(R, p.ff1);
  add_row_bias(Z, p.fb1);
  tanh_inplace(Z);  // Z is now F
  Matrix O = add(R, matmul(Z, p.ff2));
  add_row_bias(O, p.fb2);
  if (cache) {
    cache->T = T;
    cache->M = M;
    cache->Q = std::move(Q);
    cache->K = std::move(K);
    cache->V = std::move(V);
    cache->A = std::move(A);
    cache->R = std::move(R);
    cache->F = std::move(Z);
  }
  return O;
}

// Accumulates parameter gradients into `g` and input gradients into dT / dM
// (both must be zero-initialized to the input shapes or already hold partial
// sums from other consumers).
inline void attention_block_backward(const AttentionParams& p, const BlockCache& c,
                                     const Matrix& dO, AttentionParams& g, Matrix& dT,
                                     Matrix& dM) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.T.cols));
  // O = R + F ff2 + fb2
  Matrix dR = dO;
  Matrix dF = matmul_nt(dO, p.ff2);
  add_inplace(g.ff2, matmul_tn(c.F, dO));
  for (int j = 0; j < dO.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < dO.rows; ++i) s += dO.at(i, j);
    g.fb2.a[static_cast<std::size_t>(j)] += s;
  }
  // F = tanh(Z), Z = R ff1 + fb1
  Matrix dZ = dF;
  for (std::size_t i = 0; i < dZ.a.size(); ++i) dZ.a[i] *= 1.0 - c.F.a[i] * c.F.a[i];
  add_inplace(dR, matmul_nt(dZ, p.ff1));
  add_inplace(g.ff1, matmul_tn(c.R, dZ));
  for (int j = 0; j < dZ.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < dZ.rows; ++i) s += dZ.at(i, j);
    g.fb1.a[static_cast<std::size_t>(j)] += s;
  }
  // R = T + A V
  add_inplace(dT, dR);
  Matrix dA = matmul_nt(dR, c.V);
  Matrix dV = matmul_tn(c.A, dR);
  // A = softmax(S), S = Q K^T * scale
  Matrix dS;
  softmax_rows_backward(c.A, dA, dS);
  for (double& v : dS.a) v *= scale;
  Matrix dQ = matmul(dS, c.K);
  Matrix dK = matmul_tn(dS, c.Q);
  // Q = T wq; K = M wk; V = M wv
  add_inplace(dT, matmul_nt(dQ, p.wq));
  add_inplace(g.wq, matmul_tn(c.T, dQ));
  add_inplace(dM, matmul_nt(dK, p.wk));
  add_inplace(g.wk, matmul_tn(c.M, dK));
  add_inplace(dM, matmul_nt(dV, p.wv));
  add_inplace(g.wv, matmul_tn(c.M, dV));
}

// Parameters of the toy backbone: learned token and position embeddings, one
// self-attention encoder block, one cross-attention decoder block.
struct EncDecParams {
  Matrix tok_embed;  // vocab x h
  Matrix pos_embed;  // max positions x h
  AttentionParams enc;
  AttentionParams dec;

  template <typename F>
  void for_each(F&& f) {
    f("tok_embed", tok_embed);
    f("pos_embed", pos_embed);
    enc.for_each("enc.", f);
    dec.for_each("dec.", f);
  }
};

struct PassCache {
  std::vector<int> ids;
  BlockCache block;
};

class ToyEncoderDecoder : public EncoderDecoder {
 public:
  ToyEncoderDecoder() = default;

  ToyEncoderDecoder(Vocab vocab, int h, int max_positions, std::uint64_t seed)
      : vocab_(std::move(vocab)), h_(h), ff_(2 * h), max_positions_(max_positions) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));
    auto init = [&](const std::string& name, int r, int c, bool zero = false) {
      if (zero) return Matrix(r, c);
      SplitMix64 rng = stream_rng(seed, "init/" + name);
      return random_uniform(r, c, scale, rng);
    };
    params_.tok_embed = init("tok_embed", vocab_.size(), h);
    params_.pos_embed = init("pos_embed", max_positions, h);
    for (auto* blk : {&params_.enc, &params_.dec}) {
      const std::string pre = blk == &params_.enc ? "enc." : "dec.";
      blk->wq = init(pre + "wq", h, h);
      blk->wk = init(pre + "wk", h, h);
      blk->wv = init(pre + "wv", h, h);
      blk->ff1 = init(pre + "ff1", h, ff_);
      blk->fb1 = init(pre + "fb1", 1, ff_, /*zero=*/true);
      blk->ff2 = init(pre + "ff2", ff_, h);
      blk->fb2 = init(pre + "fb2", 1, h, /*zero=*/true);
    }
  }

  int dim() const override { return h_; }
  int max_positions() const { return max_positions_; }
  const Vocab& vocab() const { return vocab_; }
  EncDecParams& params() { return params_; }
  const EncDecParams& params() const { return params_; }

  std::vector<int> token_ids(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab_.id(t));
    return ids;
  }

  Matrix embed(const std::vector<int>& ids) const {
    if (ids.empty()) throw ValidationError("cannot encode an empty token sequence");
    if (static_cast<int>(ids.size()) > max_positions_)
      throw ValidationError("sequence of " + std::to_string(ids.size()) +
                            " tokens exceeds the position table (" +
                            std::to_string(max_positions_) + ")");
    Matrix X(static_cast<int>(ids.size()), h_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* tok = params_.tok_embed.row(ids[i]);
      const double* pos = params_.pos_embed.row(static_cast<int>(i));
      double* x = X.row(static_cast<int>(i));
      for (int j = 0; j < h_; ++j) x[j] = tok[j] + pos[j];
    }
    return X;
  }

  HiddenStates encode(const std::vector<std::string>& tokens) const override {
    return encode_cached(token_ids(tokens), nullptr);
  }

  HiddenStates decode(const std::vector<std::string>& target,
                      const HiddenStates& memory) const override {
    return decode_cached(token_ids(target), memory, nullptr);
  }

  Matrix encode_cached(const std::vector<int>& ids, PassCache* cache) const {
    Matrix X = embed(ids);
    if (cache) cache->ids = ids;
    return attention_block_forward(params_.enc, X, X, cache ? &cache->block : nullptr);
  }

  Matrix decode_cached(const std::vector<int>& ids, const Matrix& memory,
                       PassCache* cache) const {
    Matrix T = embed(ids);
    if (cache) cache->ids = ids;
    return attention_block_forward(params_.dec, T, memory, cache ? &cache->block : nullptr);
  }

  // Backward through one decoder pass; accumulates parameter grads and the
  // gradient w.r.t. the encoder memory.
  void decode_backward(const PassCache& cache, const Matrix& dOut, EncDecParams& grads,
                       Matrix& dMemory) const {
    Matrix dT(cache.block.T.rows, cache.block.T.cols);
    attention_block_backward(params_.dec, cache.block, dOut, grads.dec, dT, dMemory);
    embed_backward(cache.ids, dT, grads);
  }

  // Backward through the encoder pass (self-attention: T and M are the same
  // embedding matrix, so both input gradients fold together).
  void encode_backward(const PassCache& cache, const Matrix& dOut, EncDecParams& grads) const {
    Matrix dX(cache.block.T.rows, cache.block.T.cols);
    attention_block_backward(params_.enc, cache.block, dOut, grads.enc, dX, dX);
    embed_backward(cache.ids, dX, grads);
  }

  void embed_backward(const std::vector<int>& ids, const Matrix& dX,
                      EncDecParams& grads) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* dx = dX.row(static_cast<int>(i));
      double* dtok = grads.tok_embed.row(ids[i]);
      double* dpos = grads.pos_embed.row(static_cast<int>(i));
      for (int j = 0; j < h_; ++j) {
        dtok[j] += dx[j];
        dpos[j] += dx[j];
      }
    }
  }

  EncDecParams zero_grads() const {
    EncDecParams g;
    g.tok_embed = Matrix(params_.tok_embed.rows, params_.tok_embed.cols);
    g.pos_embed = Matrix(params_.pos_embed.rows, params_.pos_embed.cols);
    for (auto [gp, pp] : {std::pair{&g.enc, &params_.enc}, std::pair{&g.dec, &params_.dec}}) {
      gp->wq = Matrix(pp->wq.rows, pp->wq.cols);
      gp->wk = Matrix(pp->wk.rows, pp->wk.cols);
      gp->wv = Matrix(pp->wv.rows, pp->wv.cols);
      gp->ff1 = Matrix(pp->ff1.rows, pp->ff1.cols);
      gp->fb1 = Matrix(pp->fb1.rows, pp->fb1.cols);
      gp->ff2 = Matrix(pp->ff2.rows, pp->ff2.cols);
      gp->fb2 = Matrix(pp->fb2.rows, pp->fb2.cols);
    }
    return g;
  }

  void set_vocab(Vocab v) { vocab_ = std::move(v); }
  void set_dims(int h, int ff, int max_positions) {
    h_ = h;
    ff_ = ff;
    max_positions_ = max_positions;
  }

 private:
  Vocab vocab_;
  int h_ = 0;
  int ff_ = 0;
  int max_positions_ = 0;
  EncDecParams params_;
};

}  // namespace deae
