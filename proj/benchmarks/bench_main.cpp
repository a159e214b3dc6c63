#include "penning/electrodes.hpp"
#include "penning/noise.hpp"
#include "penning/sensing.hpp"
#include "penning/solid_angle.hpp"
#include "penning/surfacecharge.hpp"
#include "penning/synth.hpp"
#include "penning/transport.hpp"

#include <benchmark/benchmark.h>

using namespace penning;

namespace {

void BM_RectSolidAngle(benchmark::State& state) {
  const Rect r{-50e-6, 50e-6, -200e-6, 200e-6};
  Vec3 p(10e-6, 100e-6, 5e-6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rect_solid_angle(r, p));
    p.x() += 1e-12;
  }
}
BENCHMARK(BM_RectSolidAngle);

void BM_SolvePotential(benchmark::State& state) {
  const auto trap = default_trap_model();
  const auto target = cylindrical_target(trap.species(), Vec3(0, 152e-6, 0), constants::kTwoPi * 1e6);
  for (auto _ : state) benchmark::DoNotOptimize(solve_potential(trap, target));
}
BENCHMARK(BM_SolvePotential)->Unit(benchmark::kMillisecond);

void BM_Waveform100um(benchmark::State& state) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  req.path = {Vec3(0, 152e-6, 0), Vec3(0, 152e-6, 100e-6)};
  for (auto _ : state) benchmark::DoNotOptimize(make_waveform(trap, req));
}
BENCHMARK(BM_Waveform100um)->Unit(benchmark::kMillisecond);

void BM_InvertDipoles(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  ScenarioSpec s;
  auto g = DipoleGrid::zeros(Rect{-500e-6, 500e-6, -500e-6, 500e-6}, n, n);
  g.background = from_e_angstrom_per_um2(1.8e5);
  g.densities[g.size() / 2] = from_e_angstrom_per_um2(2e4);
  s.dipoles = g;
  const auto samples = field_samples(s, field_sample_layout({75e-6, 100e-6, 152e-6}, 10, 8, 500e-6), 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(invert_dipoles(samples, g));
}
BENCHMARK(BM_InvertDipoles)->Arg(10)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_Calibration(benchmark::State& state) {
  ScenarioSpec s;
  s.stray_gradient = Vec3(300.0, -250.0, 320.0);
  const CameraOracle oracle = [&s](const Vec3& e, double f) { return camera_oracle(s, e, f); };
  for (auto _ : state) benchmark::DoNotOptimize(iterate_calibration(oracle, s.camera.imaging));
}
BENCHMARK(BM_Calibration)->Unit(benchmark::kMicrosecond);

void BM_DistanceFitRadial(benchmark::State& state) {
  const auto trap = default_trap_model();
  ScenarioSpec s;
  s.noise_plus.amplitude = 1.0;
  s.noise_plus.beta = 3.5;
  s.noise_plus.sv_corr = 6e-18;
  const auto recs = heating_dataset(s, trap, Mode::Plus, {50e-6, 63e-6, 75e-6, 100e-6, 125e-6, 152e-6, 300e-6, 450e-6}, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(fit_distance_scaling(recs, NoiseModelKind::Radial, trap));
}
BENCHMARK(BM_DistanceFitRadial)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
