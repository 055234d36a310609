#include <benchmark/benchmark.h>

#include <random>

#include "semtx/masks.hpp"
#include "semtx/model.hpp"
#include "semtx/semgraph.hpp"
#include "semtx/tensor.hpp"

using namespace semtx;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::from(rows, cols, std::move(v));
}

// Chain of overlapping three-token scenes over n tokens.
SceneCover chain_cover(int n) {
  std::vector<Scene> scenes;
  for (int start = 0; start + 2 < n; start += 2) {
    Scene s;
    s.tokens = {start, start + 1, start + 2};
    s.main_relation = {start + 1};
    scenes.push_back(s);
  }
  return make_cover(n, scenes);
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = random_tensor(rng, n, n), b = random_tensor(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_SceneDistance(benchmark::State& state) {
  const auto cover = chain_cover(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(scene_distance(cover));
}
BENCHMARK(BM_SceneDistance)->Arg(16)->Arg(64);

void BM_NormalSceneMask(benchmark::State& state) {
  const auto cover = chain_cover(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(normal_scene_mask(cover, 0.5));
}
BENCHMARK(BM_NormalSceneMask)->Arg(16)->Arg(64);

void BM_SasaAttention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  const auto q = random_tensor(rng, n, 32), k = random_tensor(rng, n, 32), v = random_tensor(rng, n, 32);
  const auto mask = binary_scene_mask(chain_cover(n));
  for (auto _ : state) benchmark::DoNotOptimize(sasa_attention(q, k, v, mask));
}
BENCHMARK(BM_SasaAttention)->Arg(16)->Arg(64);

void BM_Forward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.d_ff = 128;
  cfg.enc_layers = cfg.dec_layers = 2;
  cfg.src_vocab = cfg.trg_vocab = 100;
  cfg.max_len = 64;
  const int n = static_cast<int>(state.range(0));
  const std::vector<HeadSpec> specs{HeadSpec{Site::EncoderSelf, {2}, {1}, MaskSpec::binary()},
                                    HeadSpec{Site::Cross, {1}, {1}, MaskSpec::binary()}};
  Transformer model(cfg, specs, 3);
  const auto mask = binary_scene_mask(chain_cover(n));
  const std::vector<Mask> masks{mask, mask};
  std::vector<int> src(n), trg(n);
  for (int i = 0; i < n; ++i) src[i] = trg[i] = 4 + i % 90;
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(src, trg, masks));
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
