#include "penning/errors.hpp"
#include "penning/noise.hpp"
#include "penning/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace penning;
using constants::kTwoPi;

namespace {

constexpr double kMHz = kTwoPi * 1e6;
const std::vector<double> kDistances = {50e-6, 63e-6, 75e-6, 100e-6, 125e-6, 152e-6, 300e-6, 450e-6};

NoiseModelParams params(double a, double beta, double sv = 0.0, double emi = 0.0) {
  NoiseModelParams p;
  p.amplitude = a;
  p.beta = beta;
  p.sv_corr = sv;
  p.n_emi = emi;
  return p;
}

ScenarioSpec noise_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.seed = seed;
  s.noise_axial = params(2.0, 4.0, 0.0, 0.0273824);
  s.noise_plus = params(1.0, 3.5, 6e-18);
  s.noise_minus = params(5.0, 4.1, 2e-19);
  return s;
}

HeatingRecord record(double omega, double rate, double sigma) {
  HeatingRecord r;
  r.mode = Mode::Axial;
  r.position = Vec3(0, 100e-6, 0);
  r.distance = 100e-6;
  r.omega = omega;
  r.rate = rate;
  r.sigma_rate = sigma;
  return r;
}

}  // namespace

TEST(SpectrumForMode, PlacesModeAtOmega) {
  const auto trap = default_trap_model();
  const auto s = spectrum_for_mode(trap, Mode::Plus, 4.32 * kMHz);
  EXPECT_DOUBLE_EQ(s.omega_plus, 4.32 * kMHz);
  EXPECT_NEAR(s.omega_plus + s.omega_minus, s.omega_c, 1e-9 * s.omega_c);
  EXPECT_THROW(spectrum_for_mode(trap, Mode::Plus, 6.0 * kMHz), UnstableTrapError);
  EXPECT_THROW(spectrum_for_mode(trap, Mode::Axial, 4.0 * kMHz), UnstableTrapError);
}

TEST(NoiseModel, PureJohnsonWithoutSurfaceOrCorrelated) {
  const auto trap = default_trap_model();
  const Vec3 r0(0, 152e-6, 0);
  const auto b = model_radial_rate(params(0.0, 4.0), trap, Mode::Plus, 4.32 * kMHz, r0, 152e-6);
  EXPECT_EQ(b.surface, 0.0);
  EXPECT_EQ(b.correlated, 0.0);
  EXPECT_GT(b.johnson, 0.0);
  EXPECT_EQ(b.total(), b.johnson);
  const auto s = spectrum_for_mode(trap, Mode::Plus, 4.32 * kMHz);
  const Vec3 psd = johnson_field_psd(trap, r0, 4.32 * kMHz);
  EXPECT_NEAR(b.johnson, heating_rate_from_noise(mode_geometry(Mode::Plus, s, trap.species()), trap.species(), psd),
              1e-12 * b.johnson);
}

TEST(NoiseModel, CorrelatedVanishesAtItsNull) {
  const auto trap = default_trap_model();
  const double w = 4.32 * kMHz;
  // locate the out-of-plane null by bisection
  double lo = 152e-6;
  double hi = 250e-6;
  auto ey = [&](double y) { return correlated_field(trap, Vec3(0, y, 0), w).field_per_volt.y(); };
  ASSERT_LT(ey(lo) * ey(hi), 0.0);
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ey(lo) * ey(mid) <= 0.0 ? hi : lo) = mid;
  }
  const auto p = params(1.0, 3.5, 6e-18);
  const auto at = model_radial_rate(p, trap, Mode::Plus, w, Vec3(0, lo, 0), lo);
  const auto off = model_radial_rate(p, trap, Mode::Plus, w, Vec3(0, 75e-6, 0), 75e-6);
  EXPECT_LT(at.correlated, 1e-9 * off.correlated);
}

TEST(NoiseModel, LinearInAmplitudeAndDistanceScaling) {
  const auto trap = default_trap_model();
  const Vec3 r0(0, 100e-6, 0);
  const auto a = model_axial_rate(params(2.0, 4.0, 0.0, 0.03), trap, 2.6 * kMHz, r0, 100e-6);
  const auto b = model_axial_rate(params(4.0, 4.0, 0.0, 0.03), trap, 2.6 * kMHz, r0, 100e-6);
  EXPECT_DOUBLE_EQ(b.surface, 2.0 * a.surface);
  EXPECT_EQ(b.johnson, a.johnson);
  EXPECT_EQ(b.emi, a.emi);
  const auto half = model_axial_rate(params(2.0, 4.0), trap, 2.6 * kMHz, Vec3(0, 50e-6, 0), 50e-6);
  EXPECT_NEAR(half.surface / a.surface, 16.0, 1e-12);
  const auto far = model_axial_rate(params(2.0, 4.0, 0.0, 0.03), trap, 2.6 * kMHz, Vec3(0, 0.05, 0), 0.05);
  EXPECT_NEAR(far.surface / (2.0 * std::pow(0.05 / 100e-6, -4.0)), 1.0, 1e-12);  // pivot at 100 um
  EXPECT_LT(far.surface, 1e-8 * (far.johnson + far.emi));
}

TEST(NoiseModel, EmiConversion) {
  const auto trap = default_trap_model();
  const double n = emi_rate_from_psd(trap, 2.6 * kMHz, 1.1e-16);
  // 1 q/s <-> 4.017e-15 V^2 m^-2 Hz^-1 at 2.6 MHz
  EXPECT_NEAR(n, 1.1e-16 / 4.0172e-15, 1e-5);
  EXPECT_THROW(emi_rate_from_psd(trap, 2.6 * kMHz, -1.0), std::invalid_argument);
}

TEST(NoiseModel, BreakdownSumsExactly) {
  const auto trap = default_trap_model();
  const auto s = noise_scenario(3);
  for (Mode m : {Mode::Axial, Mode::Plus, Mode::Minus}) {
    for (const auto& r : heating_dataset(s, trap, m, kDistances, 1e-14)) {
      const auto b = model_rate(s.noise(m), trap, r);
      EXPECT_EQ(b.total(), b.johnson + b.surface + b.correlated + b.emi);
      EXPECT_NEAR(r.rate, b.total(), 1e-12 * b.total());
    }
  }
}

TEST(DistanceFit, ExactPowerLawWithoutJohnson) {
  const auto trap = default_trap_model();
  ScenarioSpec s;
  s.noise_axial = params(3.0, 3.7);
  auto recs = heating_dataset(s, trap, Mode::Axial, kDistances, 1e-12, /*detached=*/true);
  for (auto& r : recs) r.sigma_rate = 0.01 * r.rate;
  const auto fit = fit_distance_scaling(recs, NoiseModelKind::Axial, trap);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.params.beta, 3.7, 1e-6);
  EXPECT_NEAR(fit.params.amplitude / 3.0, 1.0, 1e-6);
}

TEST(DistanceFit, AxialRecoveryFromSyntheticData) {
  const auto trap = default_trap_model();
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = noise_scenario(seed);
    const auto recs = heating_dataset(s, trap, Mode::Axial, kDistances, 0.1);
    const auto fit = fit_distance_scaling(recs, NoiseModelKind::Axial, trap);
    ok += fit.converged && std::abs(fit.params.beta - 4.0) <= 0.2 ? 1 : 0;
  }
  EXPECT_GE(ok, 19);
}

TEST(DistanceFit, RadialRecoveryWithCorrelatedNoise) {
  const auto trap = default_trap_model();
  const auto s = noise_scenario(77);
  const auto recs = heating_dataset(s, trap, Mode::Plus, kDistances, 0.1);
  const auto fit = fit_distance_scaling(recs, NoiseModelKind::Radial, trap);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.params.beta, 3.5, 0.3);
  EXPECT_LT(std::abs(std::log(fit.params.sv_corr / 6e-18)), std::log(1.5));
  ASSERT_EQ(fit.breakdown.size(), recs.size());
  EXPECT_GT(fit.params.covariance(1, 1), 0.0);
}

TEST(DistanceFit, InputChecks) {
  const auto trap = default_trap_model();
  const auto s = noise_scenario(1);
  auto recs = heating_dataset(s, trap, Mode::Axial, {75e-6, 100e-6, 152e-6}, 0.1);
  EXPECT_THROW(fit_distance_scaling(recs, NoiseModelKind::Axial, trap), std::invalid_argument);
  recs = heating_dataset(s, trap, Mode::Axial, kDistances, 0.1);
  EXPECT_THROW(fit_distance_scaling(recs, NoiseModelKind::Radial, trap), std::invalid_argument);
  HeatingRecord bad = recs.front();
  bad.rate = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(FrequencyScaling, RecoversAlphaWithCalibratedUncertainty) {
  const auto trap = default_trap_model();
  std::vector<double> omegas;
  for (double f : {1.0, 1.3, 1.6, 1.9, 2.2, 2.6, 3.0, 3.4}) omegas.push_back(f * kMHz);
  const int trials = 400;
  int inside = 0;
  double mean = 0.0;
  double mean_sq = 0.0;
  double sigma = 0.0;
  for (int k = 1; k <= trials; ++k) {
    ScenarioSpec s;
    s.seed = static_cast<std::uint64_t>(k);
    const auto recs = frequency_dataset(s, trap, Vec3(0, 75e-6, 0), omegas, 1.3e-13, 1.7, kMHz, 0.1);
    const auto fit = fit_frequency_scaling(recs, trap, kMHz);
    inside += std::abs(fit.alpha - 1.7) <= 2.0 * fit.sigma_alpha ? 1 : 0;
    mean += fit.alpha / trials;
    mean_sq += fit.alpha * fit.alpha / trials;
    sigma += fit.sigma_alpha / trials;
  }
  const double spread = std::sqrt(mean_sq - mean * mean);
  EXPECT_NEAR(mean, 1.7, 3.0 * spread / std::sqrt(trials));  // unbiased
  EXPECT_NEAR(spread / sigma, 1.0, 0.15);                     // reported sigma matches the scatter
  EXPECT_GE(inside, static_cast<int>(0.92 * trials));         // ~95% expected within 2 sigma
  // denser grid: the uncertainty shrinks like 1/sqrt(N)
  std::vector<double> dense;
  for (int i = 0; i < 32; ++i) dense.push_back(kMHz * std::exp(std::log(3.4) * i / 31.0));
  const auto fit = fit_frequency_scaling(frequency_dataset(ScenarioSpec{}, trap, Vec3(0, 75e-6, 0), dense, 1.3e-13, 1.7, kMHz, 0.1), trap, kMHz);
  EXPECT_NEAR(fit.sigma_alpha / sigma, std::sqrt(8.0 / 32.0), 0.1);
}

TEST(FrequencyScaling, FlatSpectrumAndRejectedRecords) {
  const auto trap = default_trap_model();
  ScenarioSpec s;
  std::vector<double> omegas = {1.0 * kMHz, 1.5 * kMHz, 2.0 * kMHz, 2.5 * kMHz};
  auto recs = frequency_dataset(s, trap, Vec3(0, 100e-6, 0), omegas, 1e-14, 0.0, kMHz, 1e-12);
  for (auto& r : recs) r.sigma_rate = 0.05 * r.rate;
  recs.push_back(recs.back());
  recs.back().rate = 0.0;
  const auto fit = fit_frequency_scaling(recs, trap, kMHz);
  EXPECT_NEAR(fit.alpha, 0.0, 1e-9);
  EXPECT_NEAR(fit.amplitude / 1e-14, 1.0, 1e-9);
  ASSERT_EQ(fit.rejected.size(), 1u);
  EXPECT_EQ(fit.rejected[0], 4u);
}

TEST(Rescale, IdentitiesAndGroupAction) {
  EXPECT_EQ(rescale_noise(3e-14, kMHz, 1.7, kMHz), 3e-14);
  EXPECT_EQ(rescale_noise(3e-14, 2.6 * kMHz, 0.0, kMHz), 3e-14);
  EXPECT_NEAR(rescale_noise(1.0, 2.6 * kMHz, 1.7, kMHz), 5.0752, 1e-4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> f(0.3, 5.0);
  std::uniform_real_distribution<double> a(-1.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double w1 = f(rng) * kMHz;
    const double w2 = f(rng) * kMHz;
    const double w3 = f(rng) * kMHz;
    const double al = a(rng);
    const double s = 1e-14;
    const double composed = rescale_noise(rescale_noise(s, w1, al, w2), w2, al, w3);
    EXPECT_NEAR(composed / rescale_noise(s, w1, al, w3), 1.0, 1e-12);
    EXPECT_NEAR(rescale_noise(rescale_noise(s, w1, al, w2), w2, al, w1) / s, 1.0, 1e-12);
  }
}

TEST(Spikes, SingleOutlierFlagged) {
  std::vector<HeatingRecord> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(record((1.0 + 0.1 * i) * kMHz, 10.0, 1.0));
  grid[11].rate = 100.0;
  const auto s = flag_spikes(grid);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].index, 11u);
  EXPECT_NEAR(s[0].ratio, 10.0, 1e-12);
}

TEST(Spikes, SmoothSeriesNothingFlagged) {
  std::vector<HeatingRecord> grid;
  for (int i = 0; i < 30; ++i) {
    const double f = 1.0 + 0.1 * i;
    grid.push_back(record(f * kMHz, 100.0 * std::pow(f, -1.7), 0.1));
  }
  EXPECT_TRUE(flag_spikes(grid).empty());
  grid.resize(5);
  EXPECT_THROW(flag_spikes(grid), std::invalid_argument);
}

TEST(Spikes, CombOnPowerLawNoFalsePositives) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::vector<int> spike_at = {7, 18, 27};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<HeatingRecord> grid;
    for (int i = 0; i < 31; ++i) {
      const double f = 4.0 + 0.02 * i;
      double rate = 50.0 * std::pow(f / 4.0, -1.0);
      if (std::find(spike_at.begin(), spike_at.end(), i) != spike_at.end()) rate *= 8.0;
      const double sigma = 0.1 * rate;
      grid.push_back(record(f * kMHz, std::max(0.0, rate + sigma * n(rng)), sigma));
    }
    const auto s = flag_spikes(grid);
    ASSERT_EQ(s.size(), 3u) << "trial " << trial;
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s[k].index, static_cast<std::size_t>(spike_at[k]));
  }
}
