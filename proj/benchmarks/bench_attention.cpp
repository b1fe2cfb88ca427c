#include "martvae/linear_attention.hpp"
#include "martvae/metrics.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace martvae;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

void BM_RecurrentStep(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  auto head = HeadState::zeros(d);
  const Matrix x = random_matrix(3, d, 1);
  const Vector q = x.row(0).transpose(), k = x.row(1).transpose(), v = x.row(2).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(attention_recurrent_step(head, q, k, v));
}
BENCHMARK(BM_RecurrentStep)->Arg(8)->Arg(16)->Arg(64);

void BM_ParallelAttention(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  const Matrix q = random_matrix(T, 16, 2), k = random_matrix(T, 16, 3), v = random_matrix(T, 16, 4);
  for (auto _ : state) benchmark::DoNotOptimize(attention_parallel(q, k, v));
  state.SetComplexityN(T);
}
BENCHMARK(BM_ParallelAttention)->RangeMultiplier(2)->Range(32, 512)->Complexity();

void BM_RecurrentSequence(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  const Matrix q = random_matrix(T, 16, 2), k = random_matrix(T, 16, 3), v = random_matrix(T, 16, 4);
  for (auto _ : state) {
    auto head = HeadState::zeros(16);
    for (int t = 0; t < T; ++t)
      benchmark::DoNotOptimize(
          attention_recurrent_step(head, q.row(t).transpose(), k.row(t).transpose(), v.row(t).transpose()));
  }
  state.SetComplexityN(T);
}
BENCHMARK(BM_RecurrentSequence)->RangeMultiplier(2)->Range(32, 512)->Complexity();

void BM_Hungarian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix c = random_matrix(n, n, 5).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(c));
}
BENCHMARK(BM_Hungarian)->Arg(30)->Arg(60)->Arg(120);

}  // namespace
