#include "martvae/autograd.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace martvae::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), nullptr, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const Matrix& storage) {
  if (auto it = bound_.find(&storage); it != bound_.end()) return Var(this, it->second);
  Var v = variable(storage);
  bound_.emplace(&storage, v.id());
  return v;
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    assert(p.tape() == this);
    needs = needs || requires_grad(p.id());
  }
  nodes_.push_back({std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var out) {
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("backward: output must be 1 x 1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(out.id())) return;
  nodes_[static_cast<std::size_t>(out.id())].grad = Matrix::Ones(1, 1);
  for (int i = out.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy the closure handle: accumulate() may touch other nodes but never this one.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Matrix Tape::grad(Var v) const {
  const auto& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::parameter_grad(const Matrix& storage) const {
  auto it = bound_.find(&storage);
  if (it == bound_.end()) return Matrix::Zero(storage.rows(), storage.cols());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

namespace {

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

Tape& tape_of(Var a) { return *a.tape(); }

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate_expr(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a, b, "hadamard");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return tape_of(a).record(a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.accumulate_expr(ia, g * s); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: row shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return tape_of(a).record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return tape_of(a).record(a.value().transpose(), {a},
                           [ia](Tape& t, const Matrix& g) { t.accumulate_expr(ia, g.transpose()); });
}

Var elu_plus_one(Var a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); });
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate_expr(ia, g.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); })));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix d = t.value(ia).unaryExpr([](double x) {
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    });
    t.accumulate_expr(ia, g.cwiseProduct(d));
  });
}

Var exp(Var a) {
  const int ia = a.id();
  Matrix out = a.value().array().exp().matrix();
  const int io = static_cast<int>(tape_of(a).size());  // id the output node will receive
  return tape_of(a).record(std::move(out), {a}, [ia, io](Tape& t, const Matrix& g) {
    t.accumulate_expr(ia, g.cwiseProduct(t.value(io)));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape_of(x).record(std::move(out), {x, gain, bias},
                           [ix, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
                             const auto& gv = t.value(ig);
                             if (t.requires_grad(ig)) t.accumulate_expr(ig, g.cwiseProduct(xhat).colwise().sum());
                             if (t.requires_grad(ib)) t.accumulate_expr(ib, g.colwise().sum());
                             if (!t.requires_grad(ix)) return;
                             Matrix dxhat = g.array().rowwise() * gv.row(0).array();
                             Matrix dx(g.rows(), g.cols());
                             for (Eigen::Index r = 0; r < g.rows(); ++r) {
                               const double m1 = dxhat.row(r).mean();
                               const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                               dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                             }
                             t.accumulate(ix, dx);
                           });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Tape& tape = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), c);
    c += p.cols();
  }
  return tape.record(std::move(out), parts, [layout](Tape& t, const Matrix& g) {
    for (auto [id, off] : layout) {
      if (t.requires_grad(id)) t.accumulate_expr(id, g.middleCols(off, t.value(id).cols()));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Tape& tape = tape_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return tape.record(std::move(out), parts, [layout](Tape& t, const Matrix& g) {
    for (auto [id, off] : layout) {
      if (t.requires_grad(id)) t.accumulate_expr(id, g.middleRows(off, t.value(id).rows()));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const int ia = a.id();
  return tape_of(a).record(a.value().middleCols(start, count), {a}, [ia, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    full.middleCols(start, count) = g;
    t.accumulate(ia, full);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  const int ia = a.id();
  return tape_of(a).record(a.value().middleRows(start, count), {a}, [ia, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    full.middleRows(start, count) = g;
    t.accumulate(ia, full);
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return tape_of(a).record(std::move(out), {a}, [ia, idx](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, full);
  });
}

Var sum(Var a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.accumulate_expr(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g(0, 0)));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(Var pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse: shape mismatch");
  const int ip = pred.id();
  const double n = static_cast<double>(target.size());
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return tape_of(pred).record(std::move(out), {pred}, [ip, diff, n](Tape& t, const Matrix& g) {
    t.accumulate_expr(ip, diff * (2.0 * g(0, 0) / n));
  });
}

Var kl_divergence(Var mu, Var logvar) {
  check_same_shape(mu, logvar, "kl_divergence");
  const auto& m = mu.value().array();
  const auto& lv = logvar.value().array();
  Matrix out(1, 1);
  out(0, 0) = 0.5 * (m.square() + lv.exp() - 1.0 - lv).sum();
  const int im = mu.id(), il = logvar.id();
  return tape_of(mu).record(std::move(out), {mu, logvar}, [im, il](Tape& t, const Matrix& g) {
    const double s = g(0, 0);
    if (t.requires_grad(im)) t.accumulate_expr(im, t.value(im) * s);
    if (t.requires_grad(il)) t.accumulate_expr(il, ((t.value(il).array().exp() - 1.0) * (0.5 * s)).matrix());
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  const Matrix& z = logits.value();
  Matrix prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double m = z.row(r).maxCoeff();
    prob.row(r) = (z.row(r).array() - m).exp();
    const double s = prob.row(r).sum();
    prob.row(r) /= s;
    loss -= (z(r, y) - m) - std::log(s);
  }
  const double n = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  const int il = logits.id();
  std::vector<int> ys(labels.begin(), labels.end());
  return tape_of(logits).record(std::move(out), {logits}, [il, prob, ys, n](Tape& t, const Matrix& g) {
    Matrix d = prob;
    for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
    t.accumulate_expr(il, d * (g(0, 0) / n));
  });
}

Var causal_linear_attention(Var q, Var k, Var v, int heads, double eps) {
  check_same_shape(q, k, "causal_linear_attention");
  check_same_shape(q, v, "causal_linear_attention");
  const Eigen::Index T = q.rows();
  const Eigen::Index dm = q.cols();
  if (heads < 1 || dm % heads != 0) throw std::invalid_argument("causal_linear_attention: bad head count");
  const Eigen::Index dh = dm / heads;

  auto phi = [](const Matrix& x) {
    return Matrix(x.unaryExpr([](double a) { return a > 0.0 ? a + 1.0 : std::exp(a); }));
  };
  const Matrix qf = phi(q.value());
  const Matrix kf = phi(k.value());
  const Matrix& vv = v.value();

  Matrix out(T, dm);
  // Per head: A = tril(qf kf^T), out = (A v) / (A 1 + eps).
  std::vector<Matrix> weights(static_cast<std::size_t>(heads));
  std::vector<Eigen::VectorXd> denom(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Matrix a = qf.middleCols(h * dh, dh) * kf.middleCols(h * dh, dh).transpose();
    a.triangularView<Eigen::StrictlyUpper>().setZero();
    Eigen::VectorXd den = a.rowwise().sum().array() + eps;
    out.middleCols(h * dh, dh) = (a * vv.middleCols(h * dh, dh)).array().colwise() / den.array();
    weights[static_cast<std::size_t>(h)] = std::move(a);
    denom[static_cast<std::size_t>(h)] = std::move(den);
  }

  const int iq = q.id(), ik = k.id(), iv = v.id();
  Matrix out_copy = out;
  return tape_of(q).record(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, qf, kf, weights, denom, out_copy](Tape& t, const Matrix& g) {
        const Matrix& vv = t.value(iv);
        const Eigen::Index T = g.rows();
        Matrix dq = Matrix::Zero(T, g.cols()), dk = Matrix::Zero(T, g.cols()), dv = Matrix::Zero(T, g.cols());
        for (int h = 0; h < heads; ++h) {
          const auto hs = static_cast<std::size_t>(h);
          const Matrix& a = weights[hs];
          const Eigen::VectorXd& den = denom[hs];
          const auto gh = g.middleCols(h * dh, dh);
          const Matrix dnum = gh.array().colwise() / den.array();
          const Eigen::VectorXd dden =
              -(gh.cwiseProduct(out_copy.middleCols(h * dh, dh))).rowwise().sum().cwiseQuotient(den);
          Matrix da = dnum * vv.middleCols(h * dh, dh).transpose();
          da.colwise() += dden;
          da.triangularView<Eigen::StrictlyUpper>().setZero();
          dv.middleCols(h * dh, dh) = a.transpose() * dnum;
          dq.middleCols(h * dh, dh) = da * kf.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh) = da.transpose() * qf.middleCols(h * dh, dh);
        }
        auto dphi = [](const Matrix& x) {
          return Matrix(x.unaryExpr([](double a) { return a > 0.0 ? 1.0 : std::exp(a); }));
        };
        if (t.requires_grad(iq)) t.accumulate_expr(iq, dq.cwiseProduct(dphi(t.value(iq))));
        if (t.requires_grad(ik)) t.accumulate_expr(ik, dk.cwiseProduct(dphi(t.value(ik))));
        if (t.requires_grad(iv)) t.accumulate(iv, dv);
      });
}

Var grouped_softmax_attention(Var q, Var k, Var v, int heads, int group_size, bool shared_memory,
                              const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>* allowed) {
  check_same_shape(k, v, "grouped_softmax_attention");
  const Eigen::Index T = q.rows();
  const Eigen::Index dm = q.cols();
  if (k.cols() != dm) throw std::invalid_argument("grouped_softmax_attention: width mismatch");
  if (heads < 1 || dm % heads != 0) throw std::invalid_argument("grouped_softmax_attention: bad head count");
  if (group_size < 1) throw std::invalid_argument("grouped_softmax_attention: empty memory");
  const Eigen::Index groups = shared_memory ? 1 : T;
  if (k.rows() != groups * group_size)
    throw std::invalid_argument("grouped_softmax_attention: memory has " + std::to_string(k.rows()) +
                                " rows, expected " + std::to_string(groups * group_size));
  if (allowed && (allowed->rows() != T || allowed->cols() != group_size))
    throw std::invalid_argument("grouped_softmax_attention: mask shape mismatch");
  const Eigen::Index dh = dm / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  // probs[h] is T x group_size.
  std::vector<Matrix> probs(static_cast<std::size_t>(heads), Matrix(T, group_size));
  Matrix out = Matrix::Zero(T, dm);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index base = shared_memory ? 0 : t * group_size;
    for (int h = 0; h < heads; ++h) {
      auto p = probs[static_cast<std::size_t>(h)].row(t);
      double mx = -std::numeric_limits<double>::infinity();
      int visible = 0;
      for (int i = 0; i < group_size; ++i) {
        if (allowed && !(*allowed)(t, i)) continue;
        p[i] = sc * qv.row(t).segment(h * dh, dh).dot(kv.row(base + i).segment(h * dh, dh));
        mx = std::isnan(p[i]) ? p[i] : std::max(mx, p[i]);
        ++visible;
      }
      if (visible == 0) throw std::invalid_argument("grouped_softmax_attention: query with no memory");
      double s = 0.0;
      for (int i = 0; i < group_size; ++i) {
        p[i] = (allowed && !(*allowed)(t, i)) ? 0.0 : std::exp(p[i] - mx);
        s += p[i];
      }
      p /= s;
      for (int i = 0; i < group_size; ++i)
        out.row(t).segment(h * dh, dh) += p[i] * vv.row(base + i).segment(h * dh, dh);
    }
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return tape_of(q).record(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, sc, group_size, shared_memory, probs](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(iq);
        const Matrix& kv = t.value(ik);
        const Matrix& vv = t.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        Eigen::VectorXd dp(group_size);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const Eigen::Index base = shared_memory ? 0 : r * group_size;
          for (int h = 0; h < heads; ++h) {
            const auto p = probs[static_cast<std::size_t>(h)].row(r);
            const auto gr = g.row(r).segment(h * dh, dh);
            for (int i = 0; i < group_size; ++i) dp[i] = gr.dot(vv.row(base + i).segment(h * dh, dh));
            const double pdp = p.dot(dp.transpose());
            for (int i = 0; i < group_size; ++i) {
              const double ds = p[i] * (dp[i] - pdp) * sc;
              dq.row(r).segment(h * dh, dh) += ds * kv.row(base + i).segment(h * dh, dh);
              dk.row(base + i).segment(h * dh, dh) += ds * qv.row(r).segment(h * dh, dh);
              dv.row(base + i).segment(h * dh, dh) += p[i] * gr;
            }
          }
        }
        if (t.requires_grad(iq)) t.accumulate(iq, dq);
        if (t.requires_grad(ik)) t.accumulate(ik, dk);
        if (t.requires_grad(iv)) t.accumulate(iv, dv);
      });
}

}  // namespace martvae::ad
