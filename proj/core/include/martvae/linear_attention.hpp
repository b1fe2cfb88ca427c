#pragma once

#include "martvae/autograd.hpp"
#include "martvae/motion.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace martvae {

struct AttentionConfig {
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  double epsilon = 1e-6;

  int head_dim() const { return model_dim / heads; }
  void validate() const;
};

/// Elementwise elu(x) + 1. Strictly positive.
Matrix feature_map(const Matrix& x);
Vector feature_map(const Vector& x);

/// Causal linear attention, parallel form:
///   out_t = sum_{j<=t} (phi(q_t).phi(k_j)) v_j / (sum_{j<=t} phi(q_t).phi(k_j) + eps)
/// Q, K, V are T x d_h. Evaluated as the masked T x T weight matrix.
Matrix attention_parallel(const Matrix& q, const Matrix& k, const Matrix& v, double eps = 1e-6);

/// Running accumulators of one attention head: S = sum phi(k) v^T, n = sum phi(k).
struct HeadState {
  Matrix s;
  Vector n;

  static HeadState zeros(int head_dim);
};

/// S += phi(k) v^T; n += phi(k); returns (phi(q)^T S) / (phi(q)^T n + eps).
Vector attention_recurrent_step(HeadState& state, const Vector& q, const Vector& k, const Vector& v,
                                double eps = 1e-6);

using ParamVisitor = std::function<void(const std::string& name, Matrix& value)>;

/// Row-vector affine map: y = x W + b, W is in x out, b is 1 x out.
struct Linear {
  Matrix weight;
  Matrix bias;

  static Linear init(int in, int out, std::mt19937_64& rng, bool with_bias = true);
  Matrix apply(const Matrix& x) const;
  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

struct LayerNormParams {
  Matrix gain;
  Matrix bias;

  static LayerNormParams init(int dim);
  Matrix apply(const Matrix& x) const;
  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Pre-norm block: h = x + Attn(LN1 x) Wo; y = h + FFN(LN2 h).
struct BlockParams {
  LayerNormParams norm1;
  Matrix wq, wk, wv;
  Linear out;
  LayerNormParams norm2;
  Linear ffn1, ffn2;

  static BlockParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  void visit(const ParamVisitor& f, const std::string& prefix);
};

Matrix feed_forward(const Linear& ffn1, const Linear& ffn2, const Matrix& x);
ad::Var feed_forward(ad::Tape& tape, const Linear& ffn1, const Linear& ffn2, ad::Var x);
Matrix gelu(const Matrix& x);

/// Per-layer, per-head recurrent state. Size is independent of the number of steps.
struct RecurrentState {
  std::vector<std::vector<HeadState>> layers;

  static RecurrentState zeros(int num_layers, const AttentionConfig& cfg);
  std::size_t byte_size() const;
};

/// Multi-head recurrent attention step over one token (rows of q, k, v are 1 x d_m).
RowVector multihead_recurrent_step(std::vector<HeadState>& heads, const RowVector& q, const RowVector& k,
                                   const RowVector& v, double eps);

/// One token through one block, advancing that block's head states.
RowVector block_step(std::vector<HeadState>& state, const RowVector& x, const BlockParams& params,
                     const AttentionConfig& cfg);

/// Whole sequence through one block using the parallel attention form (no autodiff).
Matrix block_parallel(const Matrix& x, const BlockParams& params, const AttentionConfig& cfg);

/// Differentiable parallel block used for training.
ad::Var block_forward(ad::Tape& tape, ad::Var x, const BlockParams& params, const AttentionConfig& cfg);

}  // namespace martvae
