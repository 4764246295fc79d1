#include <benchmark/benchmark.h>

#include "lgom/rng.hpp"
#include "lgom/splat.hpp"

namespace {

using namespace lgom;

std::vector<WorldGaussian> random_scene(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<WorldGaussian> gaussians(size_t(count));
  for (auto& g : gaussians) {
    g.mu = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                rng.uniform(2.0, 6.0));
    const Mat3 a = Mat3::NullaryExpr([&rng](Eigen::Index, Eigen::Index) {
      return rng.uniform(-0.02, 0.02);
    });
    g.sigma = a * a.transpose() + 1e-6 * Mat3::Identity();
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.opacity = rng.uniform(0.2, 0.95);
  }
  return gaussians;
}

CameraModel bench_camera(int res) {
  CameraModel cam;
  cam.width = res;
  cam.height = res;
  cam.K << res * 0.8, 0, (res - 1) * 0.5, 0, res * 0.8, (res - 1) * 0.5, 0, 0, 1;
  return cam;
}

void BM_RasterizeForward(benchmark::State& state) {
  const int count = int(state.range(0));
  const int res = int(state.range(1));
  const auto gaussians = random_scene(count, 7u);
  const CameraModel cam = bench_camera(res);
  for (auto _ : state) benchmark::DoNotOptimize(rasterize(gaussians, cam));
  state.counters["gaussians/s"] = benchmark::Counter(
      double(count) * double(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_RasterizeForward)
    ->Args({10000, 256})
    ->Args({50000, 512})
    ->Args({100000, 512})
    ->Unit(benchmark::kMillisecond);

void BM_RasterizeBackward(benchmark::State& state) {
  const int count = int(state.range(0));
  const int res = int(state.range(1));
  const auto gaussians = random_scene(count, 7u);
  const CameraModel cam = bench_camera(res);
  Image grad_image(res, res, 3);
  Image grad_alpha(res, res, 1);
  for (auto& v : grad_image.data) v = 1.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        rasterize_backward(gaussians, cam, grad_image, grad_alpha));
  state.SetLabel("full-image gradient");
}
BENCHMARK(BM_RasterizeBackward)->Args({10000, 256})->Unit(benchmark::kMillisecond);

void BM_ProjectGaussian(benchmark::State& state) {
  const auto gaussians = random_scene(1000, 11u);
  const CameraModel cam = bench_camera(512);
  for (auto _ : state)
    for (const auto& g : gaussians)
      benchmark::DoNotOptimize(project_gaussian(g, cam));
}
BENCHMARK(BM_ProjectGaussian);

}  // namespace

BENCHMARK_MAIN();
