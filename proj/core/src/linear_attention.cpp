#include "martvae/linear_attention.hpp"

#include "martvae/errors.hpp"

#include <cmath>

namespace martvae {

void AttentionConfig::validate() const {
  if (model_dim < 1 || heads < 1) throw ConfigError("attention: model_dim and heads must be >= 1");
  if (model_dim % heads != 0) throw ConfigError("attention: model_dim must be divisible by heads");
  if (ffn_dim < 1) throw ConfigError("attention: ffn_dim must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("attention: epsilon must be > 0");
}

Matrix feature_map(const Matrix& x) {
  return x.unaryExpr([](double a) { return a > 0.0 ? a + 1.0 : std::exp(a); });
}

Vector feature_map(const Vector& x) {
  return x.unaryExpr([](double a) { return a > 0.0 ? a + 1.0 : std::exp(a); });
}

Matrix attention_parallel(const Matrix& q, const Matrix& k, const Matrix& v, double eps) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols())
    throw InputError("attention_parallel: inconsistent shapes");
  Matrix a = feature_map(q) * feature_map(k).transpose();
  a.triangularView<Eigen::StrictlyUpper>().setZero();
  const Vector den = a.rowwise().sum().array() + eps;
  return (a * v).array().colwise() / den.array();
}

HeadState HeadState::zeros(int head_dim) { return {Matrix::Zero(head_dim, head_dim), Vector::Zero(head_dim)}; }

Vector attention_recurrent_step(HeadState& state, const Vector& q, const Vector& k, const Vector& v, double eps) {
  const Vector kf = feature_map(k);
  const Vector qf = feature_map(q);
  state.s.noalias() += kf * v.transpose();
  state.n += kf;
  return (state.s.transpose() * qf) / (qf.dot(state.n) + eps);
}

Linear Linear::init(int in, int out, std::mt19937_64& rng, bool with_bias) {
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Linear l;
  l.weight = Matrix::NullaryExpr(in, out, [&] { return nd(rng); });
  l.bias = with_bias ? Matrix::Zero(1, out) : Matrix();
  return l;
}

Matrix Linear::apply(const Matrix& x) const {
  Matrix y = x * weight;
  if (bias.size() != 0) y.rowwise() += bias.row(0);
  return y;
}

ad::Var Linear::forward(ad::Tape& tape, ad::Var x) const {
  ad::Var y = ad::matmul(x, tape.parameter(weight));
  if (bias.size() != 0) y = ad::add_row(y, tape.parameter(bias));
  return y;
}

void Linear::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".weight", weight);
  if (bias.size() != 0) f(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(int dim) { return {Matrix::Ones(1, dim), Matrix::Zero(1, dim)}; }

Matrix LayerNormParams::apply(const Matrix& x) const {
  constexpr double kEps = 1e-5;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + kEps)) * gain.row(0).array() + bias.row(0).array();
  }
  return out;
}

ad::Var LayerNormParams::forward(ad::Tape& tape, ad::Var x) const {
  return ad::layer_norm(x, tape.parameter(gain), tape.parameter(bias));
}

void LayerNormParams::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".gain", gain);
  f(prefix + ".bias", bias);
}

BlockParams BlockParams::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.model_dim;
  BlockParams b;
  b.norm1 = LayerNormParams::init(d);
  b.wq = Linear::init(d, d, rng, false).weight;
  b.wk = Linear::init(d, d, rng, false).weight;
  b.wv = Linear::init(d, d, rng, false).weight;
  b.out = Linear::init(d, d, rng);
  b.norm2 = LayerNormParams::init(d);
  b.ffn1 = Linear::init(d, cfg.ffn_dim, rng);
  b.ffn2 = Linear::init(cfg.ffn_dim, d, rng);
  return b;
}

void BlockParams::visit(const ParamVisitor& f, const std::string& prefix) {
  norm1.visit(f, prefix + ".norm1");
  f(prefix + ".wq", wq);
  f(prefix + ".wk", wk);
  f(prefix + ".wv", wv);
  out.visit(f, prefix + ".out");
  norm2.visit(f, prefix + ".norm2");
  ffn1.visit(f, prefix + ".ffn1");
  ffn2.visit(f, prefix + ".ffn2");
}

Matrix gelu(const Matrix& x) {
  constexpr double c = 0.7978845608028654;
  return x.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::tanh(c * (a + 0.044715 * a * a * a))); });
}

Matrix feed_forward(const Linear& ffn1, const Linear& ffn2, const Matrix& x) {
  return ffn2.apply(gelu(ffn1.apply(x)));
}

ad::Var feed_forward(ad::Tape& tape, const Linear& ffn1, const Linear& ffn2, ad::Var x) {
  return ffn2.forward(tape, ad::gelu(ffn1.forward(tape, x)));
}

RecurrentState RecurrentState::zeros(int num_layers, const AttentionConfig& cfg) {
  RecurrentState s;
  s.layers.assign(static_cast<std::size_t>(num_layers),
                  std::vector<HeadState>(static_cast<std::size_t>(cfg.heads), HeadState::zeros(cfg.head_dim())));
  return s;
}

std::size_t RecurrentState::byte_size() const {
  std::size_t bytes = 0;
  for (const auto& layer : layers)
    for (const auto& h : layer)
      bytes += static_cast<std::size_t>(h.s.size() + h.n.size()) * sizeof(double);
  return bytes;
}

RowVector multihead_recurrent_step(std::vector<HeadState>& heads, const RowVector& q, const RowVector& k,
                                   const RowVector& v, double eps) {
  const auto h_count = static_cast<Eigen::Index>(heads.size());
  const Eigen::Index dh = q.size() / h_count;
  RowVector out(q.size());
  for (Eigen::Index h = 0; h < h_count; ++h) {
    out.segment(h * dh, dh) = attention_recurrent_step(heads[static_cast<std::size_t>(h)],
                                                       q.segment(h * dh, dh).transpose(),
                                                       k.segment(h * dh, dh).transpose(),
                                                       v.segment(h * dh, dh).transpose(), eps)
                                  .transpose();
  }
  return out;
}

RowVector block_step(std::vector<HeadState>& state, const RowVector& x, const BlockParams& p,
                     const AttentionConfig& cfg) {
  const Matrix n1 = p.norm1.apply(x);
  const RowVector attn = multihead_recurrent_step(state, n1 * p.wq, n1 * p.wk, n1 * p.wv, cfg.epsilon);
  const RowVector h = x + p.out.apply(attn);
  return h + feed_forward(p.ffn1, p.ffn2, p.norm2.apply(h));
}

Matrix block_parallel(const Matrix& x, const BlockParams& p, const AttentionConfig& cfg) {
  const Matrix n1 = p.norm1.apply(x);
  const Matrix q = n1 * p.wq, k = n1 * p.wk, v = n1 * p.wv;
  const int dh = cfg.head_dim();
  Matrix attn(x.rows(), cfg.model_dim);
  for (int h = 0; h < cfg.heads; ++h) {
    attn.middleCols(h * dh, dh) =
        attention_parallel(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh), v.middleCols(h * dh, dh), cfg.epsilon);
  }
  const Matrix h = x + p.out.apply(attn);
  return h + feed_forward(p.ffn1, p.ffn2, p.norm2.apply(h));
}

ad::Var block_forward(ad::Tape& tape, ad::Var x, const BlockParams& p, const AttentionConfig& cfg) {
  ad::Var n1 = p.norm1.forward(tape, x);
  ad::Var q = ad::matmul(n1, tape.parameter(p.wq));
  ad::Var k = ad::matmul(n1, tape.parameter(p.wk));
  ad::Var v = ad::matmul(n1, tape.parameter(p.wv));
  ad::Var attn = ad::causal_linear_attention(q, k, v, cfg.heads, cfg.epsilon);
  ad::Var h = ad::add(x, p.out.forward(tape, attn));
  return ad::add(h, feed_forward(tape, p.ffn1, p.ffn2, p.norm2.forward(tape, h)));
}

}  // namespace martvae
