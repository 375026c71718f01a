#include <benchmark/benchmark.h>

#include "bipool/backbone.hpp"
#include "bipool/codebook.hpp"
#include "bipool/encoders.hpp"
#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

using namespace bipool;

static void BM_BilinearPool(benchmark::State& state) {
  const size_t l = static_cast<size_t>(state.range(0));
  Rng rng(7);
  LocationFeatures f{random_uniform(rng, {l, 64}, 0.0, 1.0)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(bilinear_pool(f, f));
  }
}
BENCHMARK(BM_BilinearPool)->Arg(64)->Arg(256)->Arg(1024);

static void BM_NetVladEncode(benchmark::State& state) {
  Rng rng(7);
  LocationFeatures f{random_uniform(rng, {256, 64}, 0.0, 1.0)};
  Codebook cb = kmeans_init(f.rows, static_cast<size_t>(state.range(0)), 1, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(netvlad_encode(f, cb));
  }
}
BENCHMARK(BM_NetVladEncode)->Arg(16)->Arg(64);

static void BM_BackboneForward(benchmark::State& state) {
  const size_t n = static_cast<size_t>(state.range(0));
  BackboneConfig cfg = BackboneConfig::desk_default();
  ParamMap params = backbone_init(cfg, 3);
  Rng rng(11);
  Tensor image = random_uniform(rng, {n, n, 3}, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(backbone_forward(cfg, params, image));
  }
}
BENCHMARK(BM_BackboneForward)->Arg(32)->Arg(64);

static void BM_SignedSqrtNormalize(benchmark::State& state) {
  Rng rng(13);
  Tensor v = random_uniform(rng, {4096}, -1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::l2_normalize(ops::signed_sqrt(v)));
  }
}
BENCHMARK(BM_SignedSqrtNormalize);

BENCHMARK_MAIN();
