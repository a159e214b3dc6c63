#pragma once

// Ideal Penning trap: species, quadrupole potential, eigenfrequencies and the
// conversions between motional heating rates and electric-field noise.

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace penning {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using CVec3 = Eigen::Vector3cd;

/// Cartesian axes of the trap frame: y is the surface normal, z is along B.
enum class Axis { X = 0, Y = 1, Z = 2 };

struct IonSpecies {
  int charge = 1;     // in units of e
  double mass = 0.0;  // kg
  std::string name;

  double charge_coulomb() const;

  /// Throws std::invalid_argument on charge == 0 or mass <= 0.
  void validate() const;

  /// 9Be+ with mass = atomic mass - one electron mass.
  static IonSpecies beryllium9();
};

struct TrapSettings {
  double magnetic_field = 0.0;  // T, along z
  double omega_z = 0.0;         // rad/s
  Vec3 center = Vec3::Zero();   // m
};

struct ModeSpectrum {
  double omega_c = 0.0;
  double omega_plus = 0.0;
  double omega_minus = 0.0;
  double omega_z = 0.0;
};

enum class Mode { Axial, Plus, Minus };

std::string_view to_string(Mode mode);
/// Accepts "z"/"axial", "+"/"plus"/"cyclotron", "-"/"minus"/"magnetron".
Mode parse_mode(std::string_view text);

struct ModeGeometry {
  Mode mode = Mode::Axial;
  double zero_point_spread = 0.0;  // m
  CVec3 vector = CVec3::Zero();    // unit norm
};

/// Bare cyclotron frequency |q| B / m.
double cyclotron_frequency(const IonSpecies& species, double magnetic_field);

/// Magnetron and modified cyclotron frequencies. Throws UnstableTrapError when
/// wc^2 < 2 wz^2 and std::invalid_argument for non-positive B or wz.
ModeSpectrum mode_frequencies(const IonSpecies& species, const TrapSettings& settings);

/// Mismatch of a quoted spectrum against the ideal-trap relations.
struct SpectrumCheck {
  double sum_mismatch = 0.0;         // w+ + w- - wc, rad/s
  double product_mismatch = 0.0;     // w+ w- - wz^2/2, rad^2/s^2
  double quadrature_mismatch = 0.0;  // w+^2 + w-^2 + wz^2 - wc^2, rad^2/s^2
  double worst_relative = 0.0;

  bool consistent(double relative_tolerance) const { return worst_relative <= relative_tolerance; }
};

/// Reports how far a quoted (wc, w+, w-, wz) quadruple is from a physical ideal trap.
SpectrumCheck validate_spectrum(const ModeSpectrum& quoted);

struct PotentialSample {
  double value = 0.0;           // V
  Vec3 gradient = Vec3::Zero();  // V/m
  Mat3 hessian = Mat3::Zero();   // V/m^2
};

/// phi = m wz^2 (2 dz^2 - dx^2 - dy^2) / (4 q) around settings.center.
PotentialSample quadrupole_potential(const TrapSettings& settings, const IonSpecies& species,
                                     const Vec3& r);

/// Diagonal curvature of the quadrupole, (-1/2, -1/2, 1) m wz^2 / q.
Vec3 quadrupole_curvature(const TrapSettings& settings, const IonSpecies& species);

ModeGeometry mode_geometry(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species);

/// n_dot = q^2 r0^2 / (2 hbar^2) sum_nu |gamma_nu|^2 S_E,nu. psd in V^2 m^-2 Hz^-1, one entry per axis.
double heating_rate_from_noise(const ModeGeometry& mode, const IonSpecies& species, const Vec3& psd);

/// Field PSD that produces `rate` in the given mode, assuming noise polarised along the mode
/// (axial: S_E,z; radial: S_E,x = S_E,y). Exact inverse of heating_rate_from_noise on that image.
double noise_from_heating_rate(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species,
                               double rate);

/// Heating rate per unit field PSD for the mode, quanta/s per (V^2 m^-2 Hz^-1).
double rate_per_psd(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species);

/// Equilibrium shift of the ion under a uniform field E.
Vec3 displacement_from_field(const TrapSettings& settings, const IonSpecies& species, const Vec3& field);

struct FieldSensitivity {
  double axial = 0.0;           // V/m, m p wz^2 / (2 q M)
  double radial = 0.0;          // V/m, half the axial value
  double minimal_shift = 0.0;   // m, p / (2 M)
};

FieldSensitivity field_sensitivity(const TrapSettings& settings, const IonSpecies& species,
                                   double pixel_size, double magnification);

/// lambda / NA^2.
double depth_of_field(double wavelength, double numerical_aperture);

}  // namespace penning
