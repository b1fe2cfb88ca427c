#include "martvae/model.hpp"

#include <benchmark/benchmark.h>

using namespace martvae;

namespace {

// Cost of one decoded frame after `range(0)` frames have already been produced.
void BM_FrameAfter(benchmark::State& state) {
  const ModelConfig cfg;
  const auto params = ModelParams::init(cfg, 1);
  std::mt19937_64 rng(2);
  DecoderStream stream(params, cfg, sample_prior_latents({0, 1, 2}, params, cfg, rng), std::nullopt);
  for (int t = 0; t < state.range(0); ++t) stream.next();
  for (auto _ : state) benchmark::DoNotOptimize(stream.next());
  state.counters["state_bytes"] = static_cast<double>(stream.state_bytes());
}
BENCHMARK(BM_FrameAfter)->Arg(10)->Arg(1000)->Arg(10000);

void BM_Generate(benchmark::State& state) {
  const ModelConfig cfg;
  const auto params = ModelParams::init(cfg, 1);
  std::mt19937_64 rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(generate(params, cfg, {0, 2}, static_cast<int>(state.range(0)), rng));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Generate)->RangeMultiplier(2)->Range(60, 960)->Complexity(benchmark::oN);

}  // namespace
BENCHMARK_MAIN();
