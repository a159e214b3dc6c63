#include "penning/constants.hpp"
#include "penning/errors.hpp"
#include "penning/trap.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

using namespace penning;
using constants::kTwoPi;

namespace {

constexpr double kMHz = kTwoPi * 1e6;

// Independent mass: atomic mass minus one electron, straight from CODATA numbers.
double be_mass() { return 9.012183065 * 1.66053906660e-27 - 9.1093837015e-31; }

TrapSettings settings(double b, double fz_mhz) {
  TrapSettings s;
  s.magnetic_field = b;
  s.omega_z = fz_mhz * kMHz;
  return s;
}

}  // namespace

TEST(Species, BerylliumMassAndCharge) {
  const auto be = IonSpecies::beryllium9();
  EXPECT_DOUBLE_EQ(be.mass, be_mass());
  EXPECT_EQ(be.charge, 1);
  EXPECT_DOUBLE_EQ(be.charge_coulomb(), 1.602176634e-19);
}

TEST(Species, RejectsNonPhysical) {
  IonSpecies s = IonSpecies::beryllium9();
  s.charge = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = IonSpecies::beryllium9();
  s.mass = -1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(ModeFrequencies, CyclotronAt3Tesla) {
  const double wc = cyclotron_frequency(IonSpecies::beryllium9(), 3.0);
  // eB/m by hand
  EXPECT_NEAR(wc, 1.602176634e-19 * 3.0 / be_mass(), 1e-6);
  // quoted 5.118 MHz, within 0.2%
  EXPECT_LT(std::abs(wc / (5.118 * kMHz) - 1.0), 0.002);
}

TEST(ModeFrequencies, ClosedFormFromQuotedCyclotron) {
  // pick B so that wc is exactly 5.118 MHz
  const auto be = IonSpecies::beryllium9();
  const double b = 5.118 * kMHz * be.mass / be.charge_coulomb();
  const auto m = mode_frequencies(be, settings(b, 2.6));
  EXPECT_NEAR(m.omega_minus / kMHz, 0.779, 5e-4);
  EXPECT_NEAR(m.omega_plus / kMHz, 4.339, 5e-4);
  const double disc = std::sqrt(5.118 * 5.118 - 2.0 * 2.6 * 2.6);
  EXPECT_NEAR(m.omega_plus / kMHz, 0.5 * (5.118 + disc), 1e-9);
}

TEST(ModeFrequencies, FreeCyclotronLimit) {
  const auto m = mode_frequencies(IonSpecies::beryllium9(), settings(3.0, 1e-6));
  EXPECT_NEAR(m.omega_plus, m.omega_c, 1e-9 * m.omega_c);
  EXPECT_NEAR(m.omega_minus, 0.0, 1e-6);
}

TEST(ModeFrequencies, UnstableRejected) {
  EXPECT_THROW(mode_frequencies(IonSpecies::beryllium9(), settings(3.0, 4.0)), UnstableTrapError);
  EXPECT_THROW(mode_frequencies(IonSpecies::beryllium9(), settings(0.0, 1.0)), std::invalid_argument);
  EXPECT_THROW(mode_frequencies(IonSpecies::beryllium9(), settings(3.0, -1.0)), std::invalid_argument);
}

TEST(ModeFrequencies, PropertyInvariantsRandomStable) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> mass_u(1.0, 200.0);
  std::uniform_real_distribution<double> field(0.1, 10.0);
  std::uniform_real_distribution<double> frac(0.01, 0.99);
  std::uniform_int_distribution<int> charge(1, 3);
  for (int i = 0; i < 2000; ++i) {
    IonSpecies s;
    s.mass = mass_u(rng) * constants::kAtomicMassUnit;
    s.charge = charge(rng);
    const double b = field(rng);
    const double wc = cyclotron_frequency(s, b);
    TrapSettings t;
    t.magnetic_field = b;
    t.omega_z = frac(rng) * wc / std::sqrt(2.0);
    const auto m = mode_frequencies(s, t);
    EXPECT_NEAR((m.omega_plus + m.omega_minus) / m.omega_c, 1.0, 1e-12);
    EXPECT_NEAR(m.omega_plus * m.omega_minus / (0.5 * t.omega_z * t.omega_z), 1.0, 1e-12);
    const double q = m.omega_plus * m.omega_plus + m.omega_minus * m.omega_minus + m.omega_z * m.omega_z;
    EXPECT_NEAR(q / (m.omega_c * m.omega_c), 1.0, 1e-12);
    // ordering that holds for every stable trap (wz may exceed w+ near the stability edge)
    EXPECT_LT(m.omega_minus, m.omega_z);
    EXPECT_LT(m.omega_minus, 0.5 * m.omega_c);
    EXPECT_GT(m.omega_plus, 0.5 * m.omega_c);
    EXPECT_LT(m.omega_plus, m.omega_c);
  }
}

TEST(ModeFrequencies, ModeParsing) {
  EXPECT_EQ(parse_mode("axial"), Mode::Axial);
  EXPECT_EQ(parse_mode("z"), Mode::Axial);
  EXPECT_EQ(parse_mode("+"), Mode::Plus);
  EXPECT_EQ(parse_mode("cyclotron"), Mode::Plus);
  EXPECT_EQ(parse_mode("magnetron"), Mode::Minus);
  EXPECT_THROW(parse_mode("radial"), std::invalid_argument);
  EXPECT_EQ(parse_mode(to_string(Mode::Minus)), Mode::Minus);
}

TEST(SpectrumCheck, QuotedQuadrupleSumMismatch) {
  ModeSpectrum q{5.118 * kMHz, 4.32 * kMHz, 0.845 * kMHz, 2.6 * kMHz};
  const auto c = validate_spectrum(q);
  EXPECT_NEAR(c.sum_mismatch / kTwoPi, 47e3, 1.0);
  EXPECT_FALSE(c.consistent(1e-3));
}

TEST(SpectrumCheck, IdealSpectrumIsConsistent) {
  const auto m = mode_frequencies(IonSpecies::beryllium9(), settings(3.0, 2.6));
  EXPECT_TRUE(validate_spectrum(m).consistent(1e-12));
}

TEST(Quadrupole, NullAtCenterAndTraceless) {
  auto s = settings(3.0, 2.6);
  s.center = Vec3(1e-6, 150e-6, -3e-6);
  const auto be = IonSpecies::beryllium9();
  const auto p0 = quadrupole_potential(s, be, s.center);
  EXPECT_EQ(p0.value, 0.0);
  EXPECT_EQ(p0.gradient.norm(), 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50e-6, 50e-6);
  for (int i = 0; i < 100; ++i) {
    const Vec3 r = s.center + Vec3(u(rng), u(rng), u(rng));
    const auto p = quadrupole_potential(s, be, r);
    EXPECT_NEAR(p.hessian.trace(), 0.0, 1e-9 * p.hessian.norm());
  }
}

TEST(Quadrupole, AxialGradientOneMicron) {
  const auto s = settings(3.0, 2.6);
  const auto be = IonSpecies::beryllium9();
  const auto p = quadrupole_potential(s, be, Vec3(0, 0, 1e-6));
  const double w = 2.6 * kMHz;
  EXPECT_NEAR(p.gradient.z(), be_mass() * w * w * 1e-6 / 1.602176634e-19, 1e-9);
  const Vec3 k = quadrupole_curvature(s, be);
  EXPECT_NEAR(k.x() / k.z(), -0.5, 1e-15);
  EXPECT_NEAR(k.y() / k.z(), -0.5, 1e-15);
}

TEST(Quadrupole, GradientMatchesFiniteDifferences) {
  const auto s = settings(3.0, 1.3);
  const auto be = IonSpecies::beryllium9();
  const Vec3 r(12e-6, -7e-6, 21e-6);
  const auto p = quadrupole_potential(s, be, r);
  const double h = 1e-8;
  for (int a = 0; a < 3; ++a) {
    Vec3 d = Vec3::Zero();
    d(a) = h;
    const double fd = (quadrupole_potential(s, be, r + d).value - quadrupole_potential(s, be, r - d).value) / (2 * h);
    EXPECT_NEAR(fd, p.gradient(a), 1e-6 * std::abs(p.gradient(a)));
  }
}

TEST(Heating, AxialConversionConstant) {
  const auto be = IonSpecies::beryllium9();
  const auto m = mode_frequencies(be, settings(3.0, 2.6));
  const double s = noise_from_heating_rate(Mode::Axial, m, be, 1.0);
  const double w = 2.6 * kMHz;
  EXPECT_NEAR(s / (4.0 * constants::kHbar * be_mass() * w / std::pow(1.602176634e-19, 2)), 1.0, 1e-12);
  EXPECT_NEAR(s / 4.0e-15, 1.0, 0.01);
  EXPECT_EQ(noise_from_heating_rate(Mode::Axial, m, be, 0.0), 0.0);
}

TEST(Heating, ZeroNoiseZeroRateAndLinearity) {
  const auto be = IonSpecies::beryllium9();
  const auto m = mode_frequencies(be, settings(3.0, 2.6));
  for (Mode mode : {Mode::Axial, Mode::Plus, Mode::Minus}) {
    const auto g = mode_geometry(mode, m, be);
    EXPECT_NEAR(g.vector.squaredNorm(), 1.0, 1e-15);
    EXPECT_EQ(heating_rate_from_noise(g, be, Vec3::Zero()), 0.0);
    const Vec3 psd(1e-14, 3e-14, 2e-14);
    EXPECT_NEAR(heating_rate_from_noise(g, be, 2.0 * psd), 2.0 * heating_rate_from_noise(g, be, psd),
                1e-12 * heating_rate_from_noise(g, be, psd));
  }
}

TEST(Heating, RadialMatchesGeneralFormula) {
  const auto be = IonSpecies::beryllium9();
  const auto m = mode_frequencies(be, settings(3.0, 2.6));
  const double hbar = constants::kHbar;
  const double e = be.charge_coulomb();
  for (Mode mode : {Mode::Plus, Mode::Minus}) {
    const auto g = mode_geometry(mode, m, be);
    const double sign = mode == Mode::Plus ? -1.0 : 1.0;
    const std::complex<double> gamma[3] = {1.0 / std::sqrt(2.0), std::complex<double>(0, sign) / std::sqrt(2.0), 0.0};
    const double r0sq = hbar / (2.0 * be_mass() * (m.omega_plus - m.omega_minus));
    EXPECT_NEAR(g.zero_point_spread * g.zero_point_spread / r0sq, 1.0, 1e-12);
    const Vec3 psd(2e-14, 5e-14, 7e-14);
    double sum = 0.0;
    for (int a = 0; a < 3; ++a) sum += std::norm(gamma[a]) * psd(a);
    const double general = e * e * r0sq / (2.0 * hbar * hbar) * sum;
    EXPECT_NEAR(heating_rate_from_noise(g, be, psd) / general, 1.0, 1e-12);
    // isotropic radial special case
    const double iso = e * e * 3e-14 / (4.0 * hbar * be_mass() * (m.omega_plus - m.omega_minus));
    EXPECT_NEAR(heating_rate_from_noise(g, be, Vec3(3e-14, 3e-14, 0.0)) / iso, 1.0, 1e-12);
  }
}

TEST(Heating, RoundTripAllModes) {
  const auto be = IonSpecies::beryllium9();
  const auto m = mode_frequencies(be, settings(3.0, 2.6));
  for (Mode mode : {Mode::Axial, Mode::Plus, Mode::Minus}) {
    for (double rate : {1e-3, 1.0, 37.5, 1e4}) {
      const double s = noise_from_heating_rate(mode, m, be, rate);
      const auto g = mode_geometry(mode, m, be);
      const Vec3 psd = mode == Mode::Axial ? Vec3(0, 0, s) : Vec3(s, s, 0);
      EXPECT_NEAR(heating_rate_from_noise(g, be, psd) / rate, 1.0, 1e-12);
      EXPECT_NEAR(rate_per_psd(mode, m, be) * s / rate, 1.0, 1e-12);
    }
  }
}

TEST(Displacement, QuotedShiftsAt500VPerM) {
  const auto be = IonSpecies::beryllium9();
  const auto s = settings(3.0, 2.6);
  const Vec3 dz = displacement_from_field(s, be, Vec3(0, 0, 500));
  const Vec3 dx = displacement_from_field(s, be, Vec3(500, 0, 0));
  EXPECT_NEAR(dz.z() / 20e-6, 1.0, 0.01);
  EXPECT_NEAR(dx.x() / -40e-6, 1.0, 0.01);
  const double w = 2.6 * kMHz;
  EXPECT_NEAR(dz.z(), 500.0 * 1.602176634e-19 / (be_mass() * w * w), 1e-15);
  EXPECT_EQ(displacement_from_field(s, be, Vec3::Zero()).norm(), 0.0);
}

TEST(Displacement, LinearAndOdd) {
  const auto be = IonSpecies::beryllium9();
  const auto s = settings(3.0, 1.7);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 300.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 e1(n(rng), n(rng), n(rng));
    const Vec3 e2(n(rng), n(rng), n(rng));
    const Vec3 a = displacement_from_field(s, be, e1 + 2.5 * e2);
    const Vec3 b = displacement_from_field(s, be, e1) + 2.5 * displacement_from_field(s, be, e2);
    EXPECT_LT((a - b).norm(), 1e-12 * b.norm() + 1e-20);
    EXPECT_LT((displacement_from_field(s, be, -e1) + displacement_from_field(s, be, e1)).norm(), 1e-20);
  }
}

TEST(Sensitivity, DepthOfFieldAndShift) {
  EXPECT_NEAR(depth_of_field(313e-9, 0.55), 1.0347e-6, 1e-9);  // ~1 um
  const auto s = settings(3.0, 2.6);
  const auto be = IonSpecies::beryllium9();
  const auto lo = field_sensitivity(s, be, 16e-6, 35.0);
  const auto hi = field_sensitivity(s, be, 16e-6, 15.0);
  EXPECT_NEAR(lo.minimal_shift, 0.2286e-6, 1e-10);
  EXPECT_NEAR(hi.minimal_shift, 0.5333e-6, 1e-10);
  EXPECT_DOUBLE_EQ(lo.radial, 0.5 * lo.axial);
  const double w = 2.6 * kMHz;
  EXPECT_NEAR(lo.axial, be_mass() * 16e-6 * w * w / (2.0 * 1.602176634e-19 * 35.0), 1e-9);
  EXPECT_LT(field_sensitivity(s, be, 16e-6, 1e12).axial, 1e-8);
}
