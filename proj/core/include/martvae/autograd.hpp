#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
// A Tape records every operation of one forward pass; backward() walks it in
// reverse creation order. Vars are cheap handles (tape pointer + node index).

#include <Eigen/Core>

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace martvae::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1 x 1 node.
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Free leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf bound to external parameter storage. Binding the same storage twice returns
  /// the same Var, so shared parameters accumulate a single gradient.
  Var parameter(const Matrix& storage);

  /// Records an op node. `backward` is only invoked when some parent needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  /// Seeds d(out)/d(out) = 1 for a 1 x 1 node and propagates.
  void backward(Var out);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Adds `g` into the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  /// Gradient of a node after backward(); zeros when the node was never reached.
  Matrix grad(Var v) const;
  /// Gradient with respect to bound parameter storage; zeros if unbound or unreached.
  Matrix parameter_grad(const Matrix& storage) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, int> bound_;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var transpose(Var a);

// Nonlinearities.
Var elu_plus_one(Var a);
Var gelu(Var a);
Var exp(Var a);

/// Row-wise layer normalisation with 1 x n gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Shape ops.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::span<const int> rows);

// Reductions and losses (1 x 1 outputs).
Var sum(Var a);
Var mean(Var a);
/// Mean squared error against a constant target.
Var mse(Var pred, const Matrix& target);
/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar) over all entries.
Var kl_divergence(Var mu, Var logvar);
/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Causal multi-head linear attention with feature map elu(x)+1.
/// q, k, v are T x d_m; heads split d_m into equal column blocks.
Var causal_linear_attention(Var q, Var k, Var v, int heads, double eps);

/// Multi-head softmax attention of T queries over memory groups of `group_size` rows.
/// If `shared_memory`, every query attends to rows [0, group_size); otherwise query t
/// attends to rows [t*group_size, (t+1)*group_size). `allowed` (T x group_size, optional)
/// masks out memory slots; each query must keep at least one.
Var grouped_softmax_attention(Var q, Var k, Var v, int heads, int group_size, bool shared_memory,
                              const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>* allowed = nullptr);

}  // namespace martvae::ad
