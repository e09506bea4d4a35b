#include <benchmark/benchmark.h>

#include "earcan/signal.hpp"
#include "earcan/features.hpp"

using namespace earcan;

static void BM_ConvolveClipWithIr(benchmark::State& state) {
  const Signal clip = white_noise(static_cast<std::size_t>(state.range(0)), 0.3, 1, 16000);
  const Signal ir = white_noise(512, 0.1, 2, 16000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(convolve(clip, ir));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ConvolveClipWithIr)->Arg(16000)->Arg(48000);

static void BM_RtfFeatures(benchmark::State& state) {
  const Signal clip = white_noise(static_cast<std::size_t>(state.range(0)), 0.3, 1, 16000);
  const Signal ir = white_noise(512, 0.1, 2, 16000);
  const Signal resp = convolve(clip, ir);
  const FeatureConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rtf_features(clip, resp, cfg));
  }
}
BENCHMARK(BM_RtfFeatures)->Arg(16000)->Arg(48000);
