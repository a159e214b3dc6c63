#pragma once

// Electrode voltage solving and transport waveform generation.

#include "penning/constants.hpp"
#include "penning/electrodes.hpp"

#include <string>
#include <vector>

namespace penning {

/// Desired local potential around `position`. The solver matches gradient and Hessian
/// in least squares; Hessian residuals are multiplied by `hessian_length` so both
/// terms are in V/m.
struct PotentialTarget {
  Vec3 position = Vec3::Zero();
  Vec3 gradient = Vec3::Zero();  // V/m
  Mat3 hessian = Mat3::Zero();   // V/m^2
  double hessian_length = 100e-6;
  double regularization = 0.0;  // Tikhonov weight on sum V_i^2, (V/m)^2 per V^2
  double max_voltage = 10.0;    // V
  double gradient_tolerance = 0.1;   // V/m, for the feasibility verdict
  double hessian_tolerance = 0.02;   // relative, for the feasibility verdict
};

/// Trapping potential m wz^2/(2q) ((z-z0)^2 - ((x-x0)^2 + (y-y0)^2)/2) centred at r0.
PotentialTarget cylindrical_target(const IonSpecies& species, const Vec3& r0, double omega_z);

/// Pure uniform field E at r0: gradient = -E, no curvature.
PotentialTarget field_target(const Vec3& r0, const Vec3& field);

struct VoltageSolution {
  std::vector<std::string> electrode_ids;
  Eigen::VectorXd voltages;
  double residual = 0.0;  // rms potential mismatch over a +-5 um probe cube, V
  Vec3 gradient_error = Vec3::Zero();
  Mat3 hessian_error = Mat3::Zero();
  bool bounds_active = false;
  bool feasible = true;

  double voltage(const std::string& id) const;
};

/// Bounded (|V_i| <= V_max) least squares on the electrode basis, minimum-norm on the
/// free set. Never throws for infeasible targets: check `feasible`.
VoltageSolution solve_potential(const TrapModel& trap, const PotentialTarget& target);

/// Superposed potential of all electrodes at the given voltages.
PotentialSample evaluate_voltages(const TrapModel& trap, const Eigen::VectorXd& voltages, const Vec3& r);

/// Newton search for grad phi = 0 (the ion equilibrium, a saddle in a Penning trap)
/// starting from `guess`. `extra_field` is an additional uniform field acting on the ion.
Vec3 find_equilibrium(const TrapModel& trap, const Eigen::VectorXd& voltages, const Vec3& guess,
                      const Vec3& extra_field = Vec3::Zero());

struct FilterBudget {
  /// Largest allowed tracking lag tau_i |dV_i/dt| of a single-pole filter, V.
  double max_lag = 0.02;
};

struct WaveformRequest {
  std::vector<Vec3> path;  // waypoints, m
  double omega_z = constants::kTwoPi * 1e6;  // rad/s
  double step = 1e-6;       // m, <= 1 um
  double speed = 0.02;      // m/s
  double max_voltage = 10.0;
  double regularization = 0.0;
  FilterBudget budget;
};

struct Waveform {
  std::vector<std::string> electrode_ids;
  std::vector<double> times;             // s
  std::vector<Vec3> positions;           // commanded equilibria, m
  std::vector<Eigen::VectorXd> voltages;
  double duration = 0.0;                 // s

  std::size_t size() const { return times.size(); }
  /// Piecewise-linear interpolation between samples, clamped at both ends.
  Eigen::VectorXd voltages_at(double t) const;
};

/// Resamples the path into equal sub-steps no longer than `step`, solves a trapping
/// potential at each, and enforces the filter budget. Throws FilterBudgetError
/// naming the first violating electrode and sample.
Waveform make_waveform(const TrapModel& trap, const WaveformRequest& request);

double path_length(const std::vector<Vec3>& path);

}  // namespace penning
