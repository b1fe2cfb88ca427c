#pragma once

// Brute-force reference implementations used only by the tests.

#include "martvae/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using martvae::Matrix;

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

inline double phi(double x) { return x > 0 ? x + 1.0 : std::exp(x); }

/// O(T^2) causal linear attention written as two nested loops.
inline Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v, double eps) {
  const int T = static_cast<int>(q.rows()), d = static_cast<int>(q.cols()), dv = static_cast<int>(v.cols());
  Matrix out = Matrix::Zero(T, dv);
  for (int t = 0; t < T; ++t) {
    double denom = 0.0;
    for (int j = 0; j <= t; ++j) {
      double w = 0.0;
      for (int c = 0; c < d; ++c) w += phi(q(t, c)) * phi(k(j, c));
      denom += w;
      for (int c = 0; c < dv; ++c) out(t, c) += w * v(j, c);
    }
    for (int c = 0; c < dv; ++c) out(t, c) /= denom + eps;
  }
  return out;
}

/// Minimum cost over all injections of the smaller side into the larger one.
inline double brute_force_assignment(const Matrix& cost) {
  const bool flip = cost.rows() > cost.cols();
  const Matrix a = flip ? Matrix(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  std::vector<int> cols(static_cast<std::size_t>(m));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Every injection appears as the prefix of some permutation.
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += a(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

inline double euclid(const Matrix& a, int i, const Matrix& b, int j) {
  double s = 0.0;
  for (int c = 0; c < a.cols(); ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return std::sqrt(s);
}

}  // namespace oracle
