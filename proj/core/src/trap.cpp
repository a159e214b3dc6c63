#include "penning/trap.hpp"

#include "penning/constants.hpp"
#include "penning/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace penning {

using namespace constants;

double IonSpecies::charge_coulomb() const { return charge * kElementaryCharge; }

void IonSpecies::validate() const {
  if (charge == 0) {
    throw std::invalid_argument("ion species '" + name + "': charge must be nonzero");
  }
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw std::invalid_argument("ion species '" + name + "': mass must be positive");
  }
}

IonSpecies IonSpecies::beryllium9() {
  return IonSpecies{1, kBe9AtomicMass_u * kAtomicMassUnit - kElectronMass, "9Be+"};
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Axial:
      return "z";
    case Mode::Plus:
      return "+";
    case Mode::Minus:
      return "-";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "z" || text == "axial") return Mode::Axial;
  if (text == "+" || text == "plus" || text == "cyclotron") return Mode::Plus;
  if (text == "-" || text == "minus" || text == "magnetron") return Mode::Minus;
  throw std::invalid_argument("unknown mode label '" + std::string(text) + "'");
}

double cyclotron_frequency(const IonSpecies& species, double magnetic_field) {
  species.validate();
  return std::abs(species.charge_coulomb()) * magnetic_field / species.mass;
}

ModeSpectrum mode_frequencies(const IonSpecies& species, const TrapSettings& settings) {
  species.validate();
  if (!(settings.magnetic_field > 0.0)) {
    throw std::invalid_argument("magnetic field must be positive");
  }
  if (!(settings.omega_z > 0.0)) {
    throw std::invalid_argument("axial frequency must be positive");
  }
  const double wc = cyclotron_frequency(species, settings.magnetic_field);
  const double wz = settings.omega_z;
  const double discriminant = wc * wc - 2.0 * wz * wz;
  if (discriminant < 0.0) {
    throw UnstableTrapError("unstable trap: wc^2 - 2 wz^2 = " + std::to_string(discriminant) +
                            " rad^2/s^2 < 0 (wc = " + std::to_string(wc) +
                            " rad/s, wz = " + std::to_string(wz) + " rad/s)");
  }
  ModeSpectrum s;
  s.omega_c = wc;
  s.omega_z = wz;
  s.omega_plus = 0.5 * (wc + std::sqrt(discriminant));
  // Product form avoids cancellation in (wc - sqrt(...)) / 2 for weak confinement.
  s.omega_minus = wz * wz / (2.0 * s.omega_plus);
  return s;
}

SpectrumCheck validate_spectrum(const ModeSpectrum& q) {
  SpectrumCheck c;
  c.sum_mismatch = q.omega_plus + q.omega_minus - q.omega_c;
  c.product_mismatch = q.omega_plus * q.omega_minus - 0.5 * q.omega_z * q.omega_z;
  c.quadrature_mismatch = q.omega_plus * q.omega_plus + q.omega_minus * q.omega_minus +
                          q.omega_z * q.omega_z - q.omega_c * q.omega_c;
  const double rel_sum = std::abs(c.sum_mismatch) / std::abs(q.omega_c);
  const double rel_prod = std::abs(c.product_mismatch) / (0.5 * q.omega_z * q.omega_z);
  const double rel_quad = std::abs(c.quadrature_mismatch) / (q.omega_c * q.omega_c);
  c.worst_relative = std::max({rel_sum, rel_prod, rel_quad});
  return c;
}

Vec3 quadrupole_curvature(const TrapSettings& settings, const IonSpecies& species) {
  const double k = species.mass * settings.omega_z * settings.omega_z / species.charge_coulomb();
  return Vec3(-0.5 * k, -0.5 * k, k);
}

PotentialSample quadrupole_potential(const TrapSettings& settings, const IonSpecies& species,
                                     const Vec3& r) {
  species.validate();
  const Vec3 curvature = quadrupole_curvature(settings, species);
  const Vec3 d = r - settings.center;
  PotentialSample out;
  out.value = 0.5 * (curvature.array() * d.array().square()).sum();
  out.gradient = curvature.cwiseProduct(d);
  out.hessian = curvature.asDiagonal();
  return out;
}

ModeGeometry mode_geometry(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species) {
  species.validate();
  ModeGeometry g;
  g.mode = mode;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  using C = std::complex<double>;
  switch (mode) {
    case Mode::Axial:
      g.zero_point_spread = std::sqrt(kHbar / (2.0 * species.mass * spectrum.omega_z));
      g.vector = CVec3(C(0.0), C(0.0), C(1.0));
      break;
    case Mode::Plus:
    case Mode::Minus: {
      const double split = spectrum.omega_plus - spectrum.omega_minus;
      if (!(split > 0.0)) {
        throw std::invalid_argument("radial mode geometry requires w+ > w-");
      }
      g.zero_point_spread = std::sqrt(kHbar / (2.0 * species.mass * split));
      const double sign = mode == Mode::Plus ? -1.0 : 1.0;
      g.vector = CVec3(C(inv_sqrt2), C(0.0, sign * inv_sqrt2), C(0.0));
      break;
    }
  }
  return g;
}

double heating_rate_from_noise(const ModeGeometry& mode, const IonSpecies& species, const Vec3& psd) {
  if ((psd.array() < 0.0).any()) {
    throw std::invalid_argument("field noise PSD must be nonnegative");
  }
  const double q = species.charge_coulomb();
  double weighted = 0.0;
  for (int nu = 0; nu < 3; ++nu) {
    weighted += std::norm(mode.vector[nu]) * psd[nu];
  }
  return q * q * mode.zero_point_spread * mode.zero_point_spread / (2.0 * kHbar * kHbar) * weighted;
}

double rate_per_psd(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species) {
  species.validate();
  const double q = species.charge_coulomb();
  const double w = mode == Mode::Axial ? spectrum.omega_z : spectrum.omega_plus - spectrum.omega_minus;
  return q * q / (4.0 * kHbar * species.mass * w);
}

double noise_from_heating_rate(Mode mode, const ModeSpectrum& spectrum, const IonSpecies& species,
                               double rate) {
  if (rate < 0.0) {
    throw std::invalid_argument("heating rate must be nonnegative");
  }
  return rate / rate_per_psd(mode, spectrum, species);
}

Vec3 displacement_from_field(const TrapSettings& settings, const IonSpecies& species, const Vec3& field) {
  species.validate();
  // Equilibrium of q E = q k (r - r0) per axis.
  return field.cwiseQuotient(quadrupole_curvature(settings, species));
}

FieldSensitivity field_sensitivity(const TrapSettings& settings, const IonSpecies& species,
                                   double pixel_size, double magnification) {
  species.validate();
  if (!(pixel_size > 0.0) || !(magnification > 0.0)) {
    throw std::invalid_argument("pixel size and magnification must be positive");
  }
  FieldSensitivity s;
  s.minimal_shift = pixel_size / (2.0 * magnification);
  s.axial = species.mass * pixel_size * settings.omega_z * settings.omega_z /
            (2.0 * std::abs(species.charge_coulomb()) * magnification);
  s.radial = 0.5 * s.axial;
  return s;
}

double depth_of_field(double wavelength, double numerical_aperture) {
  if (!(wavelength > 0.0) || !(numerical_aperture > 0.0)) {
    throw std::invalid_argument("wavelength and NA must be positive");
  }
  return wavelength / (numerical_aperture * numerical_aperture);
}

}  // namespace penning
