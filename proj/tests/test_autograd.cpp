#include "martvae/autograd.hpp"
#include "martvae/training.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <functional>

using namespace martvae;

namespace {

// Builds a scalar from the inputs on a fresh tape; checks gradients against central differences.
// Entries below 1e-2 are compared in absolute terms: at eps 1e-6 their differences are roundoff.
double check_op(std::vector<Matrix> inputs, const std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>& build) {
  auto run = [&](bool grad, std::vector<Matrix>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& m : inputs) vars.push_back(tape.parameter(m));
    ad::Var y = build(tape, vars);
    if (grad) {
      tape.backward(y);
      for (auto& m : inputs) grads->push_back(tape.parameter_grad(m));
    }
    return y.scalar();
  };
  std::vector<Matrix> analytic;
  run(true, &analytic);
  std::vector<Matrix*> ptrs;
  for (auto& m : inputs) ptrs.push_back(&m);
  return gradcheck_function(ptrs, analytic, [&] { return run(false, nullptr); }, 1e-6, 60, 1, 1e-2).max_relative_error;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
ad::Var probe(ad::Tape& tape, ad::Var y) {
  std::mt19937_64 rng(99);
  return ad::sum(ad::hadamard(y, tape.constant(oracle::random_matrix(static_cast<int>(y.rows()),
                                                                      static_cast<int>(y.cols()), rng))));
}

Matrix rnd(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_matrix(r, c, rng);
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("matmul, add, sub, hadamard, scale") {
  CHECK(check_op({rnd(3, 4, 1), rnd(4, 2, 2)}, [](auto& t, auto& v) { return probe(t, ad::matmul(v[0], v[1])); }) < kTol);
  CHECK(check_op({rnd(3, 4, 1), rnd(3, 4, 2)}, [](auto& t, auto& v) {
          return probe(t, ad::sub(ad::add(v[0], v[1]), ad::hadamard(v[0], v[1])));
        }) < kTol);
  CHECK(check_op({rnd(2, 2, 3)}, [](auto& t, auto& v) { return probe(t, ad::scale(v[0], -2.5)); }) < kTol);
}

TEST_CASE("row broadcast and transpose") {
  CHECK(check_op({rnd(5, 3, 1), rnd(1, 3, 2)}, [](auto& t, auto& v) {
          return probe(t, ad::transpose(ad::add_row(v[0], v[1])));
        }) < kTol);
}

TEST_CASE("pointwise nonlinearities") {
  CHECK(check_op({rnd(4, 4, 5)}, [](auto& t, auto& v) { return probe(t, ad::elu_plus_one(v[0])); }) < kTol);
  CHECK(check_op({rnd(4, 4, 6)}, [](auto& t, auto& v) { return probe(t, ad::gelu(v[0])); }) < kTol);
  CHECK(check_op({rnd(4, 4, 7)}, [](auto& t, auto& v) { return probe(t, ad::exp(v[0])); }) < kTol);
}

TEST_CASE("layer norm") {
  CHECK(check_op({rnd(6, 5, 1), rnd(1, 5, 2), rnd(1, 5, 3)}, [](auto& t, auto& v) {
          return probe(t, ad::layer_norm(v[0], v[1], v[2]));
        }) < kTol);
}

TEST_CASE("concatenation, slicing and gathering") {
  CHECK(check_op({rnd(3, 2, 1), rnd(3, 4, 2)}, [](auto& t, auto& v) {
          const std::array<ad::Var, 2> parts{v[0], v[1]};
          return probe(t, ad::slice_cols(ad::concat_cols(parts), 1, 4));
        }) < kTol);
  CHECK(check_op({rnd(2, 3, 1), rnd(4, 3, 2)}, [](auto& t, auto& v) {
          const std::array<ad::Var, 2> parts{v[0], v[1]};
          const std::vector<int> rows{5, 0, 0, 3};
          return probe(t, ad::gather_rows(ad::slice_rows(ad::concat_rows(parts), 0, 6), rows));
        }) < kTol);
}

TEST_CASE("reductions and losses") {
  const Matrix target = rnd(4, 3, 9);
  CHECK(check_op({rnd(4, 3, 1)}, [&](auto&, auto& v) { return ad::mse(v[0], target); }) < kTol);
  CHECK(check_op({rnd(4, 3, 1)}, [](auto&, auto& v) { return ad::mean(v[0]); }) < kTol);
  CHECK(check_op({rnd(2, 5, 1), rnd(2, 5, 2)}, [](auto&, auto& v) { return ad::kl_divergence(v[0], v[1]); }) < kTol);
  const std::vector<int> labels{2, 0, 1};
  CHECK(check_op({rnd(3, 4, 3)}, [&](auto&, auto& v) { return ad::softmax_cross_entropy(v[0], labels); }) < kTol);
}

TEST_CASE("fused causal linear attention") {
  CHECK(check_op({rnd(7, 6, 1), rnd(7, 6, 2), rnd(7, 6, 3)}, [](auto& t, auto& v) {
          return probe(t, ad::causal_linear_attention(v[0], v[1], v[2], 2, 1e-6));
        }) < kTol);
}

TEST_CASE("fused causal linear attention matches the naive oracle") {
  const Matrix q = rnd(9, 4, 1), k = rnd(9, 4, 2), v = rnd(9, 4, 3);
  ad::Tape tape;
  const Matrix out = ad::causal_linear_attention(tape.constant(q), tape.constant(k), tape.constant(v), 1, 1e-6).value();
  CHECK((out - oracle::naive_attention(q, k, v, 1e-6)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("grouped softmax attention, shared and per-row memory, masked") {
  CHECK(check_op({rnd(5, 4, 1), rnd(3, 4, 2), rnd(3, 4, 3)}, [](auto& t, auto& v) {
          return probe(t, ad::grouped_softmax_attention(v[0], v[1], v[2], 2, 3, true, nullptr));
        }) < kTol);
  CHECK(check_op({rnd(4, 4, 1), rnd(12, 4, 2), rnd(12, 4, 3)}, [](auto& t, auto& v) {
          return probe(t, ad::grouped_softmax_attention(v[0], v[1], v[2], 2, 3, false, nullptr));
        }) < kTol);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> allowed(5, 3);
  allowed.setConstant(false);
  for (int t = 0; t < 5; ++t) allowed(t, t % 3) = true;
  CHECK(check_op({rnd(5, 4, 1), rnd(3, 4, 2), rnd(3, 4, 3)}, [&](auto& t, auto& v) {
          return probe(t, ad::grouped_softmax_attention(v[0], v[1], v[2], 2, 3, true, &allowed));
        }) < kTol);
}

TEST_CASE("reused parameters accumulate gradient") {
  Matrix w = rnd(3, 3, 4);
  ad::Tape tape;
  ad::Var a = tape.parameter(w);
  ad::Var b = tape.parameter(w);
  CHECK(a.id() == b.id());
  tape.backward(ad::sum(ad::add(a, b)));
  CHECK(tape.parameter_grad(w).isApprox(Matrix::Constant(3, 3, 2.0)));
}

}  // TEST_SUITE
