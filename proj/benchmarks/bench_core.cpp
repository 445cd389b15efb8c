#include <benchmark/benchmark.h>

#include "hetorus/rng.hpp"
#include "hetorus/torus_geometry.hpp"

namespace {

using hetorus::Field;
using hetorus::TorusGeometry;

void bm_fourier_roundtrip_curve(benchmark::State& state) {
  const TorusGeometry geometry = hetorus::make_geometry(1, 64);
  hetorus::Rng rng(7);
  const Field f = hetorus::random_band_limited(geometry, 0, 1, 2, 3, rng);
  for (auto _ : state) {
    Field g = hetorus::fourier_roundtrip(f);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(bm_fourier_roundtrip_curve);

void bm_fourier_roundtrip_surface(benchmark::State& state) {
  const TorusGeometry geometry = hetorus::make_geometry(2, 16);
  hetorus::Rng rng(7);
  const Field f = hetorus::random_band_limited(geometry, 0, 1, 2, 3, rng);
  for (auto _ : state) {
    Field g = hetorus::fourier_roundtrip(f);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(bm_fourier_roundtrip_surface);

void bm_wedge_surface(benchmark::State& state) {
  const TorusGeometry geometry = hetorus::make_geometry(2, 16);
  hetorus::Rng rng(11);
  const Field f = hetorus::random_band_limited(geometry, 0, 1, 2, 3, rng);
  const Field g = hetorus::random_band_limited(geometry, 0, 1, 2, 3, rng);
  for (auto _ : state) {
    Field h = hetorus::wedge(f, g);
    benchmark::DoNotOptimize(h);
  }
}
BENCHMARK(bm_wedge_surface);

void bm_pointwise_exp_surface(benchmark::State& state) {
  const TorusGeometry geometry = hetorus::make_geometry(2, 16);
  hetorus::Rng rng(13);
  Field f = hetorus::random_band_limited(geometry, 0, 0, 2, 3, rng);
  f *= hetorus::Complex(0.1, 0.0);
  for (auto _ : state) {
    Field g = hetorus::pointwise_exp(f);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(bm_pointwise_exp_surface);

}  // namespace

BENCHMARK_MAIN();
