#include "penning/errors.hpp"
#include "penning/transport.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace penning;
using constants::kTwoPi;

namespace {

const Vec3 kCenter(0, 152e-6, 0);

TrapSettings settings_at(double omega_z, const Vec3& c) {
  TrapSettings s;
  s.magnetic_field = 3.0;
  s.omega_z = omega_z;
  s.center = c;
  return s;
}

}  // namespace

TEST(SolvePotential, ZeroTargetZeroVoltages) {
  const auto trap = default_trap_model();
  PotentialTarget t;
  t.position = kCenter;
  const auto sol = solve_potential(trap, t);
  EXPECT_EQ(sol.voltages.size(), 25);
  EXPECT_LT(sol.voltages.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(sol.feasible);
}

TEST(SolvePotential, OneMegahertzTrapAtCenter) {
  const auto trap = default_trap_model();
  const auto target = cylindrical_target(trap.species(), kCenter, kTwoPi * 1e6);
  const auto sol = solve_potential(trap, target);
  ASSERT_TRUE(sol.feasible);
  EXPECT_LE(sol.voltages.cwiseAbs().maxCoeff(), target.max_voltage + 1e-12);
  const auto p = evaluate_voltages(trap, sol.voltages, kCenter);
  EXPECT_LT(p.gradient.norm(), 0.1);
  EXPECT_LT((p.hessian - target.hessian).norm(), 0.02 * target.hessian.norm());
  // cross-check against the ideal quadrupole
  const auto q = quadrupole_potential(settings_at(kTwoPi * 1e6, kCenter), trap.species(), kCenter);
  EXPECT_LT((q.hessian - target.hessian).norm(), 1e-9 * q.hessian.norm());
}

TEST(SolvePotential, BoundsAreRespected) {
  const auto trap = default_trap_model();
  auto target = cylindrical_target(trap.species(), kCenter, kTwoPi * 3e6);
  target.max_voltage = 1.0;
  const auto sol = solve_potential(trap, target);
  EXPECT_LE(sol.voltages.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  EXPECT_TRUE(sol.bounds_active);
  EXPECT_FALSE(sol.feasible);
}

TEST(SolvePotential, FieldTargetDisplacesIonAsPredicted) {
  const auto trap = default_trap_model();
  const double wz = kTwoPi * 1e6;
  const auto trap_sol = solve_potential(trap, cylindrical_target(trap.species(), kCenter, wz));
  const Vec3 e(1.5, -1.0, 2.0);  // V/m
  const auto field_sol = solve_potential(trap, field_target(kCenter, e));
  ASSERT_TRUE(field_sol.feasible);
  const Eigen::VectorXd v = trap_sol.voltages + field_sol.voltages;
  const Vec3 r = find_equilibrium(trap, v, kCenter);
  const Vec3 r_trap = find_equilibrium(trap, trap_sol.voltages, kCenter);
  const Vec3 predicted = displacement_from_field(settings_at(wz, kCenter), trap.species(), e);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(r(a) - r_trap(a), predicted(a), 0.03 * predicted.norm());
}

TEST(FindEquilibrium, ExtraFieldShiftsLikeApplied) {
  const auto trap = default_trap_model();
  const double wz = kTwoPi * 1e6;
  const auto sol = solve_potential(trap, cylindrical_target(trap.species(), kCenter, wz));
  const Vec3 e(0.0, 0.0, 3.0);
  const Vec3 r0 = find_equilibrium(trap, sol.voltages, kCenter);
  const Vec3 r1 = find_equilibrium(trap, sol.voltages, kCenter, e);
  const Vec3 pred = displacement_from_field(settings_at(wz, kCenter), trap.species(), e);
  EXPECT_NEAR(r1.z() - r0.z(), pred.z(), 0.03 * std::abs(pred.z()));
}

TEST(Waveform, HundredMicronTransportDuration) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  req.path = {kCenter, kCenter + Vec3(0, 0, 100e-6)};
  req.speed = 0.02;
  const auto wf = make_waveform(trap, req);
  EXPECT_NEAR(wf.duration, 5e-3, 1e-12);
  EXPECT_GE(wf.duration, 1e-3);
  EXPECT_LE(wf.duration, 8e-3);
  EXPECT_EQ(wf.size(), 101u);
  EXPECT_NEAR(path_length(req.path), 100e-6, 1e-18);
  for (std::size_t k = 0; k < wf.size(); k += 10) {
    const Vec3 r = find_equilibrium(trap, wf.voltages[k], wf.positions[k]);
    EXPECT_LT((r - wf.positions[k]).norm(), 0.1e-6) << "sample " << k;
  }
}

TEST(Waveform, SinglePointIsConstant) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  req.path = {kCenter};
  const auto wf = make_waveform(trap, req);
  EXPECT_EQ(wf.size(), 1u);
  EXPECT_EQ(wf.duration, 0.0);
  EXPECT_EQ((wf.voltages_at(1.0) - wf.voltages.front()).norm(), 0.0);
}

TEST(Waveform, LinearInterpolationAndClamping) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  req.path = {kCenter, kCenter + Vec3(0, 0, 2e-6)};
  const auto wf = make_waveform(trap, req);
  ASSERT_EQ(wf.size(), 3u);
  const double tm = 0.5 * (wf.times[0] + wf.times[1]);
  EXPECT_LT((wf.voltages_at(tm) - 0.5 * (wf.voltages[0] + wf.voltages[1])).norm(), 1e-12);
  EXPECT_EQ((wf.voltages_at(-1.0) - wf.voltages.front()).norm(), 0.0);
  EXPECT_EQ((wf.voltages_at(1.0) - wf.voltages.back()).norm(), 0.0);
}

TEST(Waveform, FilterBudgetViolationNamesElectrode) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  req.path = {kCenter, kCenter + Vec3(0, 0, 20e-6)};
  req.speed = 50.0;
  try {
    make_waveform(trap, req);
    FAIL() << "expected a filter budget error";
  } catch (const FilterBudgetError& e) {
    EXPECT_TRUE(trap.has_electrode(e.electrode()));
    EXPECT_GE(e.sample(), 1u);
  }
}

TEST(Waveform, RejectsBadRequests) {
  const auto trap = default_trap_model();
  WaveformRequest req;
  EXPECT_THROW(make_waveform(trap, req), std::invalid_argument);
  req.path = {kCenter};
  req.step = 2e-6;
  EXPECT_THROW(make_waveform(trap, req), std::invalid_argument);
  req.step = 1e-6;
  req.speed = 0.0;
  EXPECT_THROW(make_waveform(trap, req), std::invalid_argument);
}
