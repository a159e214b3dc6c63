#pragma once

// Static stray-field extraction from curvature-scaled camera readouts, and magnetic
// field mapping from Rabi spectroscopy and planar gradient fits.

#include "penning/constants.hpp"
#include "penning/trap.hpp"

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace penning {

/// One camera readout. f_ax scales the applied potential by f_ax^2 relative to the
/// reference potential (axial frequency f_ax times the reference frequency).
struct PositionReading {
  double f_ax = 1.0;
  Vec3 applied_field = Vec3::Zero();  // V/m
  double px = 0.0;                    // camera column (x), pixels
  double pz = 0.0;                    // camera row (z), pixels
  double width = 0.0;                 // point-spread-function width, pixels (proxy for y)
  bool lost = false;                  // ion left the imaged region
};

/// Imaging and reference-potential parameters that set the readout resolution.
struct ImagingSetup {
  IonSpecies species = IonSpecies::beryllium9();
  double reference_omega = constants::kTwoPi * 1e6;  // rad/s, f_ax = 1
  double pixel_size = 16e-6;                          // m
  double magnification = 25.0;
  double wavelength = 313e-9;                         // m
  double numerical_aperture = 0.55;
  double position_error_px = 0.5;   // x, z readout half-quantum
  double width_error_px = 1.0;      // y readout error

  /// Curvature of the reference potential per axis, V/m^2 (absolute values).
  Vec3 reference_curvature() const;
  /// Position resolution per axis: p/(2M) in x and z, the depth of field in y.
  Vec3 position_resolution() const;
  /// Smallest resolvable |grad phi_app| per axis: reference curvature times resolution.
  Vec3 sensitivity() const;
  void validate() const;
};

struct StrayFieldResult {
  Vec3 grad_phi_stray = Vec3::Zero();  // V/m
  Vec3 grad_phi_app = Vec3::Zero();    // V/m
  Vec3 sigma_stray = Vec3::Zero();
  Vec3 sigma_app = Vec3::Zero();
};

/// Solves grad phi_stray + f_i^2 grad phi_app - E_i = 0 for both unknowns from two applied
/// fields at different f_ax that put the ion at the same camera position.
/// Uncertainty: a readout error delta_nu shifts E_i by f_i^2 kappa_nu delta_nu.
StrayFieldResult extract_stray_field(double f1, const Vec3& e1, double f2, const Vec3& e2,
                                     const ImagingSetup& setup);

/// Same, from two readings; throws std::invalid_argument if the readings are not
/// co-located within the readout errors.
StrayFieldResult extract_stray_field(const PositionReading& r1, const PositionReading& r2,
                                     const ImagingSetup& setup);

using CameraOracle = std::function<PositionReading(const Vec3& applied_field, double f_ax)>;

struct CalibrationOptions {
  double f1 = 1.6;
  double f2 = 2.5;
  int max_iterations = 5;
  int scan_points = 21;                // applied-field values per axis and frequency
  double initial_half_width = 800.0;   // V/m, first scan around the start field
  double shrink = 0.1;                 // half-width factor between iterations
  double min_half_width = 20.0;        // V/m
  Vec3 start_field = Vec3::Zero();
};

struct CalibrationStep {
  Vec3 e1 = Vec3::Zero();
  Vec3 e2 = Vec3::Zero();
  StrayFieldResult result;
  bool within_sensitivity = false;
};

struct CalibrationResult {
  StrayFieldResult result;  // best estimate (last step)
  std::vector<CalibrationStep> trace;
  bool converged = false;
  int iterations = 0;
};

/// Iterative crossover search. Each step scans the correction field along each axis at
/// both f_ax values around the current E1, fits the readouts linearly, picks E2 so the
/// f2 readout matches the f1 readout at E1, and extracts the stray field. The next E1 is
/// the correction that nulls the estimated stray gradient. Stops once |grad phi_app| is
/// below the imaging sensitivity on every axis.
CalibrationResult iterate_calibration(const CameraOracle& oracle, const ImagingSetup& setup,
                                      const CalibrationOptions& options = {});

// ---- magnetics ----

enum class RabiScanKind { Frequency, Duration };

/// Frequency scan: abscissa = drive angular frequency (rad/s), `fixed` = pulse duration (s).
/// Duration scan: abscissa = pulse duration (s), `fixed` = drive detuning (rad/s).
struct RabiScan {
  RabiScanKind kind = RabiScanKind::Frequency;
  double fixed = 0.0;
  std::vector<double> abscissa;
  std::vector<double> p_up;
  std::vector<int> shots;
  Vec3 position = Vec3::Zero();

  void validate() const;
};

/// P(up) after a pulse of duration t with Rabi rate omega_rabi at detuning delta,
/// starting from |up>.
double rabi_lineshape(double omega_rabi, double delta, double t);

struct RabiFit {
  double omega0 = 0.0;        // rad/s (frequency scans)
  double omega_rabi = 0.0;    // rad/s
  double sigma_omega0 = 0.0;
  double sigma_omega_rabi = 0.0;
  double chi2 = 0.0;
  int dof = 0;
};

/// Weighted least squares with binomial uncertainties. Frequency scans fit (omega0, Omega),
/// duration scans fit Omega at the scan's fixed detuning. Throws NotIdentifiableError on
/// flat scans.
RabiFit fit_rabi(const RabiScan& scan);

struct GradientPoint {
  Vec3 position = Vec3::Zero();  // m
  double value = 0.0;            // any field-like quantity (T, or rad/s)
  double sigma = 1.0;
};

struct GradientFit {
  double offset = 0.0;              // value at the centroid
  double sigma_offset = 0.0;
  Vec3 centroid = Vec3::Zero();
  Vec3 slope = Vec3::Zero();        // per m; zero on axes that were not varied
  Vec3 sigma_slope = Vec3::Zero();
  std::array<bool, 3> fitted{false, false, false};
  Eigen::MatrixXd covariance;       // (offset, fitted slopes...)
  std::vector<double> residuals;    // (model - value) / sigma
  double chi2 = 0.0;
  int dof = 0;
};

/// Weighted linear regression value = offset + slope . (r - centroid) over the axes whose
/// coordinates vary. Throws NotIdentifiableError for collinear or too-small designs.
GradientFit fit_gradient(const std::vector<GradientPoint>& points);

/// g muB / hbar with g = 2.0023, rad s^-1 T^-1.
double default_spin_sensitivity();

/// delta_omega / (d omega / dB).
double delta_b_from_delta_omega(double delta_omega, double sensitivity = default_spin_sensitivity());

}  // namespace penning
