#include <cmath>
#include <vector>

#include <benchmark/benchmark.h>

#include "harlab/cca/cca.hpp"
#include "harlab/clustering/clustering.hpp"
#include "harlab/features/feature_builder.hpp"
#include "harlab/features/transforms.hpp"
#include "harlab/nn/layer_spec.hpp"
#include "harlab/nn/model.hpp"
#include "harlab/nn/network.hpp"
#include "harlab/rng.hpp"

using namespace harlab;

namespace {

nn::CnnModel whar_model() { return nn::CnnModel(nn::TensorShape::spatial(4, 30, 1), nn::canonical_architecture(8), 1); }

nn::Matrix gaussian(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix x(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) x(i, j) = rng.normal();
  }
  return x;
}

nn::Matrix onehot(Eigen::Index n, Eigen::Index classes) {
  nn::Matrix y = nn::Matrix::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, i % classes) = 1.0;
  return y;
}

void BM_Forward(benchmark::State& state) {
  const auto model = whar_model();
  const auto x = gaussian(state.range(0), 120, 1);
  nn::ForwardOptions opts;
  opts.keep_intermediates = false;
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(model, x, opts));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  const auto model = whar_model();
  const auto x = gaussian(state.range(0), 120, 2);
  const auto y = onehot(state.range(0), 8);
  for (auto _ : state) benchmark::DoNotOptimize(nn::loss_and_grad(model, x, y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_CcaGaussian(benchmark::State& state) {
  const auto m = state.range(1);
  const auto x = gaussian(state.range(0), m, 3);
  const auto y = gaussian(state.range(0), m, 4);
  for (auto _ : state) benchmark::DoNotOptimize(cca::cca_correlations(x, y));
}
BENCHMARK(BM_CcaGaussian)->Args({10000, 10})->Args({5000, 64})->Args({2000, 128})->Unit(benchmark::kMillisecond);

void BM_Whiten(benchmark::State& state) {
  const auto x = gaussian(state.range(0), state.range(1), 5);
  for (auto _ : state) benchmark::DoNotOptimize(cca::WhitenedActivations(x));
}
BENCHMARK(BM_Whiten)->Args({40000, 32})->Args({1000, 500})->Unit(benchmark::kMillisecond);

void BM_CaptureActivations(benchmark::State& state) {
  const auto model = whar_model();
  const auto probe = gaussian(state.range(0), 120, 6);
  const auto layers = cca::all_probe_layers();
  for (auto _ : state) benchmark::DoNotOptimize(cca::capture_activations(model, probe, layers));
}
BENCHMARK(BM_CaptureActivations)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> signal(n);
  for (std::size_t i = 0; i < n; ++i) signal[i] = std::sin(0.3 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(features::fft_magnitude(signal));
}
BENCHMARK(BM_Fft)->Arg(64)->Arg(1024);

void BM_HaarDwt(benchmark::State& state) {
  std::vector<double> signal(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < signal.size(); ++i) signal[i] = std::cos(0.1 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(features::haar_dwt(signal, 3));
}
BENCHMARK(BM_HaarDwt)->Arg(64)->Arg(1024);

void BM_BuildFeatures(benchmark::State& state) {
  features::ActivityWindow w;
  w.user_id = "u";
  w.window_id = "1";
  w.activity = "walk";
  w.duration = 1.4;
  Rng rng(7);
  for (int c = 0; c < 4; ++c) {
    w.channels.emplace_back(35);
    for (auto& v : w.channels.back()) v = rng.normal();
  }
  const auto cfg = features::whar_like_config();
  for (auto _ : state) benchmark::DoNotOptimize(features::build_features(w, cfg));
}
BENCHMARK(BM_BuildFeatures);

void BM_KMeans(benchmark::State& state) {
  Rng rng(8);
  std::vector<std::vector<double>> points(static_cast<std::size_t>(state.range(0)), std::vector<double>(8));
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (auto& v : points[i]) v = static_cast<double>(i % 4) + 0.3 * rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(clustering::kmeans(points, 4, 9));
}
BENCHMARK(BM_KMeans)->Arg(24)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
