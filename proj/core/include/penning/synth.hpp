#pragma once

// Seeded synthetic measurements: camera readouts, phonon-growth series, Rabi scans,
// heating-rate datasets and stray-field samples. Every generator is a pure function of
// (scenario, inputs): its random stream is derived from scenario.seed and the inputs.

#include "penning/noise.hpp"
#include "penning/sensing.hpp"
#include "penning/surfacecharge.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace penning {

/// Pixel projection and a width-vs-defocus curve w = w0 sqrt(1 + ((dy - offset) / y_R)^2).
struct CameraModel {
  ImagingSetup imaging;
  double center_px = 256.0;
  double center_pz = 256.0;
  double w0_px = 2.0;
  double rayleigh = 2e-6;         // m
  double focus_offset = 150e-6;   // m, focal plane above the nominal position
  double region_radius = 120e-6;  // m, imaged region around the nominal position
  double min_height = 10e-6;      // m
  int width_dither_px = 1;        // uniform integer jitter in [-n, n]
};

struct MagneticScenario {
  double omega0 = 0.0;                    // rad/s, spin transition at the target
  Vec3 omega0_gradient = Vec3::Zero();    // rad/s per m
  double rabi = 0.0;                      // rad/s
  Vec3 rabi_gradient = Vec3::Zero();      // rad/s per m
};

struct ScenarioSpec {
  std::uint64_t seed = 1;
  Vec3 target{0.0, 152e-6, 0.0};          // nominal ion position r*, m
  Vec3 stray_gradient = Vec3::Zero();     // uniform grad phi_stray, V/m
  std::optional<DipoleGrid> dipoles;      // its field adds to the stray field
  CameraModel camera;
  NoiseModelParams noise_axial;
  NoiseModelParams noise_plus;
  NoiseModelParams noise_minus;
  double omega_z = constants::kTwoPi * 2.6e6;
  double omega_plus = constants::kTwoPi * 4.32e6;
  double omega_minus = constants::kTwoPi * 0.845e6;
  MagneticScenario magnetic;

  const NoiseModelParams& noise(Mode mode) const;
  double mode_omega(Mode mode) const;
};

/// splitmix64 mixing of the seed with arbitrary 64-bit words.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> words);
std::uint64_t bits_of(double v);

/// Stray field (V/m) acting on the ion at r: -stray_gradient plus the dipole field.
Vec3 scenario_stray_field(const ScenarioSpec& scenario, const Vec3& r);

/// Equilibrium of the ion in f_ax^2 times the reference quadrupole plus the applied and stray
/// fields, projected on the camera. Positions are floor-quantized with the nominal position at
/// the centre of pixel (center_px, center_pz).
PositionReading camera_oracle(const ScenarioSpec& scenario, const Vec3& applied_field, double f_ax);

struct PhononSeries {
  HeatingRecord record;              // fitted rate and sigma
  std::vector<double> wait_times;    // s
  std::vector<double> mean_phonons;  // estimates
  std::vector<int> shots;
  double true_rate = 0.0;
};

/// Mean phonon number n(t) = n0 + rate t with Poisson counting over `shots` per point, fitted
/// linearly (weighted, one reweighting pass). The true rate comes from the scenario noise model.
PhononSeries phonon_series(const ScenarioSpec& scenario, const TrapModel& trap, Mode mode,
                           const Vec3& position, const std::vector<double>& wait_times, int shots,
                           double initial_phonons = 0.05);

/// Binomial sampling of the two-level lineshape at the scenario's omega0(r), Omega(r).
/// shots <= 0 returns the exact lineshape (with 1e9 nominal shots).
RabiScan rabi_oracle(const ScenarioSpec& scenario, const Vec3& position, RabiScanKind kind,
                     const std::vector<double>& abscissa, double fixed, int shots);

/// Records at each distance above `lateral` with Gaussian relative noise `rel_sigma`.
std::vector<HeatingRecord> heating_dataset(const ScenarioSpec& scenario, const TrapModel& trap, Mode mode,
                                           const std::vector<double>& distances, double rel_sigma,
                                           bool detached = false, const Vec3& lateral = Vec3::Zero());

/// Records of `mode` whose field PSD follows psd_ref (omega/omega_ref)^-alpha.
std::vector<HeatingRecord> frequency_dataset(const ScenarioSpec& scenario, const TrapModel& trap,
                                             const Vec3& position, const std::vector<double>& omegas,
                                             double psd_ref, double alpha, double omega_ref, double rel_sigma,
                                             Mode mode = Mode::Axial);

/// Field samples of the scenario's dipole grid with Gaussian noise of rel_noise * |E| per axis
/// (floored at `sigma_floor`, V/m). The uniform stray part is left out: it is not a
/// surface-dipole signal. Throws std::invalid_argument without a dipole grid.
std::vector<FieldSample> field_samples(const ScenarioSpec& scenario, const std::vector<Vec3>& positions,
                                       double rel_noise, double sigma_floor = 1e-3);

/// Regular nx x nz sample grids over [-half_span, half_span]^2 at each height, cell-centred.
/// With `stagger`, plane k is shifted by (k - (n-1)/2)/n of a cell along both axes.
std::vector<Vec3> field_sample_layout(const std::vector<double>& heights, int nx, int nz, double half_span,
                                      bool stagger = true);

}  // namespace penning
