#include "penning/errors.hpp"
#include "penning/sensing.hpp"
#include "penning/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace penning;
using constants::kTwoPi;

namespace {

ScenarioSpec uniform_scenario(const Vec3& grad, std::uint64_t seed) {
  ScenarioSpec s;
  s.seed = seed;
  s.stray_gradient = grad;
  return s;
}

CameraOracle oracle_for(const ScenarioSpec& s) {
  return [s](const Vec3& e, double f) { return camera_oracle(s, e, f); };
}

RabiScan exact_frequency_scan(double w0, double rabi, double t, double span, int n) {
  RabiScan scan;
  scan.kind = RabiScanKind::Frequency;
  scan.fixed = t;
  for (int i = 0; i < n; ++i) {
    const double w = w0 - span / 2 + span * i / (n - 1);
    scan.abscissa.push_back(w);
    scan.p_up.push_back(rabi_lineshape(rabi, w - w0, t));
    scan.shots.push_back(1000000000);
  }
  return scan;
}

}  // namespace

TEST(StrayField, EqualFieldsMeanNoAppliedGradient) {
  const ImagingSetup setup;
  const Vec3 e(12.0, -40.0, 310.0);
  const auto r = extract_stray_field(1.6, e, 2.5, e, setup);
  EXPECT_LT(r.grad_phi_app.norm(), 1e-12);
  EXPECT_LT((r.grad_phi_stray - e).norm(), 1e-12 * e.norm());
}

TEST(StrayField, DirectSubstitution) {
  const ImagingSetup setup;
  const auto r = extract_stray_field(1.6, Vec3::Zero(), 2.5, Vec3(100, 0, 0), setup);
  EXPECT_NEAR(r.grad_phi_stray.x(), -1.6 * 1.6 * 100.0 / (2.5 * 2.5 - 1.6 * 1.6), 1e-12);
  EXPECT_NEAR(r.grad_phi_stray.x(), -69.4, 0.05);
  EXPECT_EQ(r.grad_phi_stray.y(), 0.0);
}

TEST(StrayField, AlgebraicIdentityRandom) {
  const ImagingSetup setup;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-500.0, 500.0);
  std::uniform_real_distribution<double> f(0.5, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 stray(u(rng), u(rng), u(rng));
    const Vec3 app(u(rng), u(rng), u(rng));
    const double f1 = f(rng);
    const double f2 = f1 + 0.1 + f(rng);
    const Vec3 e1 = stray + f1 * f1 * app;
    const Vec3 e2 = stray + f2 * f2 * app;
    const auto r = extract_stray_field(f1, e1, f2, e2, setup);
    EXPECT_LT((r.grad_phi_stray - stray).norm(), 1e-12 * 1e3);
    EXPECT_LT((r.grad_phi_app - app).norm(), 1e-12 * 1e3);
  }
  EXPECT_THROW(extract_stray_field(1.6, Vec3::Zero(), 1.6, Vec3::Zero(), setup), std::invalid_argument);
}

TEST(StrayField, SensitivityOfDefaultImaging) {
  const ImagingSetup setup;
  const Vec3 s = setup.sensitivity();
  const double kz = setup.species.mass * std::pow(kTwoPi * 1e6, 2) / setup.species.charge_coulomb();
  EXPECT_NEAR(s.z(), kz * 0.5 * 16e-6 / 25.0, 1e-9);
  EXPECT_NEAR(s.x(), 0.5 * s.z(), 1e-12);
  EXPECT_NEAR(s.y(), 0.5 * kz * 313e-9 / (0.55 * 0.55), 1e-9);
}

TEST(StrayField, ReadingPairsMustBeCoLocated) {
  const ImagingSetup setup;
  PositionReading a{1.6, Vec3::Zero(), 256, 256, 40, false};
  PositionReading b{2.5, Vec3(100, 0, 0), 256, 256, 40, false};
  EXPECT_NO_THROW(extract_stray_field(a, b, setup));
  b.px = 270;
  EXPECT_THROW(extract_stray_field(a, b, setup), std::invalid_argument);
  b.px = 256;
  b.lost = true;
  EXPECT_THROW(extract_stray_field(a, b, setup), std::invalid_argument);
}

TEST(Calibration, ZeroStrayConvergesImmediately) {
  const auto s = uniform_scenario(Vec3::Zero(), 1);
  const auto r = iterate_calibration(oracle_for(s), s.camera.imaging);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Calibration, FiveHundredVoltsPerMetre) {
  const auto s = uniform_scenario(Vec3(300.0, -250.0, 320.0), 42);
  const auto r = iterate_calibration(oracle_for(s), s.camera.imaging);
  ASSERT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 5);
  const Vec3 bound = s.camera.imaging.sensitivity();
  EXPECT_TRUE((r.result.grad_phi_app.cwiseAbs().array() <= bound.array()).all());
  for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(r.result.grad_phi_stray(a) - s.stray_gradient(a)), 3.0 * r.result.sigma_stray(a));
}

TEST(Calibration, ResultIsAFixedPoint) {
  const auto s = uniform_scenario(Vec3(-200.0, 150.0, 400.0), 8);
  const auto r = iterate_calibration(oracle_for(s), s.camera.imaging);
  ASSERT_TRUE(r.converged);
  CalibrationOptions again;
  again.start_field = r.trace.back().e1;
  again.initial_half_width = again.min_half_width;
  const auto r2 = iterate_calibration(oracle_for(s), s.camera.imaging, again);
  ASSERT_TRUE(r2.converged);
  EXPECT_EQ(r2.iterations, 1);
  const Vec3 change = (r2.result.grad_phi_stray - r.result.grad_phi_stray).cwiseAbs();
  const Vec3 bound = 2.5 * 2.5 * s.camera.imaging.sensitivity();
  EXPECT_TRUE((change.array() <= bound.array()).all()) << change.transpose();
}

TEST(Calibration, MonteCarloWithinPropagatedUncertainty) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-280.0, 280.0);
  int ok = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto s = uniform_scenario(Vec3(u(rng), u(rng), u(rng)), 1000 + t);
    const auto r = iterate_calibration(oracle_for(s), s.camera.imaging);
    bool within = r.converged;
    for (int a = 0; a < 3; ++a) {
      within = within && std::abs(r.result.grad_phi_stray(a) - s.stray_gradient(a)) <= 2.0 * r.result.sigma_stray(a);
    }
    ok += within ? 1 : 0;
  }
  EXPECT_GE(ok, static_cast<int>(0.95 * trials));
}

TEST(Calibration, RejectsBadOptions) {
  const auto s = uniform_scenario(Vec3::Zero(), 1);
  CalibrationOptions o;
  o.scan_points = 2;
  EXPECT_THROW(iterate_calibration(oracle_for(s), s.camera.imaging, o), std::invalid_argument);
  EXPECT_THROW(iterate_calibration(CameraOracle{}, s.camera.imaging), std::invalid_argument);
}

TEST(Rabi, LineshapeLimits) {
  const double w = kTwoPi * 5e3;
  EXPECT_NEAR(rabi_lineshape(w, 0.0, constants::kPi / w), 0.0, 1e-15);
  EXPECT_EQ(rabi_lineshape(0.0, 123.0, 1e-3), 1.0);
  EXPECT_EQ(rabi_lineshape(0.0, 0.0, 1e-3), 1.0);
  EXPECT_NEAR(rabi_lineshape(w, 0.0, 2.0 * constants::kPi / w), 1.0, 1e-15);
}

TEST(Rabi, NoiselessFrequencyScanRecovered) {
  const double w0 = kTwoPi * 83.2e9;
  const double rabi = kTwoPi * 5e3;
  const double t = constants::kPi / rabi;
  // slightly asymmetric window so the centre is not the midpoint
  auto scan = exact_frequency_scan(w0 + kTwoPi * 3e3, rabi, t, kTwoPi * 40e3, 81);
  for (std::size_t i = 0; i < scan.abscissa.size(); ++i) scan.p_up[i] = rabi_lineshape(rabi, scan.abscissa[i] - w0, t);
  const auto fit = fit_rabi(scan);
  EXPECT_NEAR(fit.omega0, w0, 1e-6 * rabi);
  EXPECT_NEAR(fit.omega_rabi / rabi, 1.0, 1e-6);
}

TEST(Rabi, SymmetricScanCentre) {
  const double w0 = kTwoPi * 1e6;
  const double rabi = kTwoPi * 4e3;
  const auto fit = fit_rabi(exact_frequency_scan(w0, rabi, 0.8 * constants::kPi / rabi, kTwoPi * 30e3, 61));
  EXPECT_NEAR(fit.omega0, w0, 1e-9 * w0);
}

TEST(Rabi, NoiselessDurationScanRecovered) {
  RabiScan scan;
  scan.kind = RabiScanKind::Duration;
  const double rabi = kTwoPi * 7e3;
  scan.fixed = kTwoPi * 1e3;
  for (int i = 0; i < 60; ++i) {
    const double t = 2e-6 * i;
    scan.abscissa.push_back(t);
    scan.p_up.push_back(rabi_lineshape(rabi, scan.fixed, t));
    scan.shots.push_back(1000000000);
  }
  const auto fit = fit_rabi(scan);
  EXPECT_NEAR(fit.omega_rabi / rabi, 1.0, 1e-6);
}

TEST(Rabi, FlatScanNotIdentifiable) {
  RabiScan scan;
  scan.fixed = 1e-4;
  for (int i = 0; i < 20; ++i) {
    scan.abscissa.push_back(1e6 + i);
    scan.p_up.push_back(1.0);
    scan.shots.push_back(100);
  }
  EXPECT_THROW(fit_rabi(scan), NotIdentifiableError);
  scan.p_up[3] = 1.5;
  EXPECT_THROW(fit_rabi(scan), std::invalid_argument);
}

TEST(Rabi, SampledScansWithinThreeSigma) {
  ScenarioSpec s;
  s.magnetic.omega0 = kTwoPi * 83.2e9;
  s.magnetic.rabi = kTwoPi * 5e3;
  const double t = constants::kPi / s.magnetic.rabi;
  std::vector<double> ab;
  for (int i = 0; i < 81; ++i) ab.push_back(s.magnetic.omega0 + kTwoPi * (-20e3 + 40e3 * i / 80.0));
  int inside = 0;
  const int trials = 100;
  for (int k = 0; k < trials; ++k) {
    s.seed = 500 + static_cast<std::uint64_t>(k);
    const auto fit = fit_rabi(rabi_oracle(s, s.target, RabiScanKind::Frequency, ab, t, 200));
    inside += std::abs(fit.omega0 - s.magnetic.omega0) <= 3.0 * fit.sigma_omega0 ? 1 : 0;
  }
  EXPECT_GE(inside, 97);
}

TEST(Gradient, PlaneSlopesRecovered) {
  const double nt_per_um = 1e-9 / 1e-6;
  const Vec3 slope(0.0, 5.87 * nt_per_um, -5.26 * nt_per_um);  // T/m
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  const double sigma = 20e-9;  // T
  std::vector<GradientPoint> pts;
  for (double z : {-100e-6, -50e-6, 0.0, 50e-6, 100e-6}) {
    for (double y : {75e-6, 100e-6, 125e-6, 152e-6}) {
      const Vec3 r(0, y, z);
      pts.push_back({r, 3.0 + slope.dot(r) + sigma * n(rng), sigma});
    }
  }
  const auto fit = fit_gradient(pts);
  EXPECT_FALSE(fit.fitted[0]);
  EXPECT_TRUE(fit.fitted[1]);
  EXPECT_TRUE(fit.fitted[2]);
  for (int a : {1, 2}) {
    EXPECT_GT(fit.sigma_slope(a), 0.0);
    EXPECT_LE(std::abs(fit.slope(a) - slope(a)), 2.0 * fit.sigma_slope(a)) << a;
  }
  EXPECT_EQ(fit.dof, 20 - 3);
}

TEST(Gradient, ConstantFieldZeroSlope) {
  std::vector<GradientPoint> pts;
  for (double z : {-1e-4, 0.0, 1e-4}) {
    for (double y : {1e-4, 2e-4}) pts.push_back({Vec3(0, y, z), 1.25, 1e-9});
  }
  const auto fit = fit_gradient(pts);
  EXPECT_NEAR(fit.slope.norm(), 0.0, 1e-12);
  EXPECT_NEAR(fit.offset, 1.25, 1e-12);
}

TEST(Gradient, CollinearDesignRejected) {
  std::vector<GradientPoint> pts = {{Vec3(0, 0, 0), 1.0, 1.0}, {Vec3(0, 0, 0), 2.0, 1.0}};
  EXPECT_THROW(fit_gradient(pts), NotIdentifiableError);
}

TEST(Gradient, SpinSensitivity) {
  EXPECT_NEAR(default_spin_sensitivity(), 2.0023 * 9.2740100783e-24 / 1.054571817e-34, 1e-3);
  EXPECT_NEAR(delta_b_from_delta_omega(default_spin_sensitivity() * 1e-9), 1e-9, 1e-21);
}
