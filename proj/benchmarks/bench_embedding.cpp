#include <benchmark/benchmark.h>

#include "earcan/embedding.hpp"
#include "earcan/rng.hpp"

using namespace earcan;

namespace {

FeatureMatrix random_feats(std::size_t frames, std::size_t bands, std::uint64_t seed) {
  FeatureMatrix fm;
  fm.n_frames = frames;
  fm.n_bands = bands;
  fm.values.resize(frames * bands);
  Rng rng(seed);
  for (auto& v : fm.values) v = rng.uniform(-60.0, 20.0);
  return fm;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const NetConfig cfg;
  const NetParams params = init_net(1, cfg, 20);
  const FeatureMatrix fm = random_feats(static_cast<std::size_t>(state.range(0)), cfg.in_bands, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(params, fm));
  }
}
BENCHMARK(BM_Forward)->Arg(100)->Arg(300);

static void BM_Backward(benchmark::State& state) {
  const NetConfig cfg;
  const NetParams params = init_net(1, cfg, 20);
  const FeatureMatrix fm = random_feats(static_cast<std::size_t>(state.range(0)), cfg.in_bands, 7);
  NetGrads grads;
  grads.resize_like(params);
  const AamHyper hyper;
  for (auto _ : state) {
    grads.zero();
    benchmark::DoNotOptimize(backward(params, fm, 3, hyper, grads, nullptr));
  }
}
BENCHMARK(BM_Backward)->Arg(100)->Arg(300);
