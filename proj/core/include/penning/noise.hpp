#pragma once

// Composite electric-field noise models (surface power law, Johnson, correlated
// technical noise, EMI), their fits to heating-rate data, spectral rescaling and
// detection of discrete noise spikes.

#include "penning/electrodes.hpp"

#include <string>
#include <vector>

namespace penning {

struct HeatingRecord {
  Mode mode = Mode::Axial;
  Vec3 position = Vec3::Zero();  // m
  double distance = 0.0;         // m, ion-electrode distance
  double omega = 0.0;            // rad/s, frequency of the heated mode
  double rate = 0.0;             // quanta/s
  double sigma_rate = 1.0;       // quanta/s
  bool detached = false;         // trap electrodes disconnected from the sources

  /// Throws std::invalid_argument. Negative rates are rejected.
  void validate() const;
};

enum class NoiseModelKind { Axial, Radial };

/// Amplitudes use a 100 um pivot: surface term = amplitude * (d / 100 um)^-beta.
struct NoiseModelParams {
  double amplitude = 0.0;     // quanta/s at the pivot
  double beta = 4.0;
  double sv_corr = 0.0;       // V^2/Hz, radial model
  double n_emi = 0.0;         // quanta/s, axial model
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (amplitude, beta, third parameter)

  void validate() const;
};

inline constexpr double kNoisePivot = 100e-6;

struct RateBreakdown {
  double johnson = 0.0;
  double surface = 0.0;
  double correlated = 0.0;
  double emi = 0.0;

  double total() const { return johnson + surface + correlated + emi; }
};

/// Mode spectrum in which `mode` oscillates at `omega` for the trap's field and species.
ModeSpectrum spectrum_for_mode(const TrapModel& trap, Mode mode, double omega);

/// Johnson + surface + correlated for a radial mode (plus or minus).
RateBreakdown model_radial_rate(const NoiseModelParams& params, const TrapModel& trap, Mode mode,
                                double omega, const Vec3& r0, double distance, bool detached = false);
/// Johnson + surface + EMI for the axial mode.
RateBreakdown model_axial_rate(const NoiseModelParams& params, const TrapModel& trap, double omega_z,
                               const Vec3& r0, double distance, bool detached = false);
/// Dispatches on the record's mode.
RateBreakdown model_rate(const NoiseModelParams& params, const TrapModel& trap, const HeatingRecord& record);

/// Axial heating rate caused by a uniform EMI field PSD (V^2 m^-2 Hz^-1).
double emi_rate_from_psd(const TrapModel& trap, double omega_z, double field_psd);

struct DistanceFit {
  NoiseModelKind kind = NoiseModelKind::Axial;
  NoiseModelParams params;
  double chi2 = 0.0;
  int dof = 0;
  bool converged = false;
  std::vector<double> residuals;           // (model - rate) / sigma
  std::vector<RateBreakdown> breakdown;    // per record
};

struct DistanceFitOptions {
  std::vector<double> beta_starts{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  double beta_min = 0.0;
  double beta_max = 10.0;
};

/// Chi-square fit of (amplitude, beta, n_emi | sv_corr). Records must share one mode
/// (axial for the axial model, plus or minus for the radial model) and span >= 4 distances.
DistanceFit fit_distance_scaling(const std::vector<HeatingRecord>& records, NoiseModelKind kind,
                                 const TrapModel& trap, const DistanceFitOptions& options = {});

struct FrequencyScaling {
  double alpha = 0.0;
  double amplitude = 0.0;       // S_E at the reference frequency, V^2 m^-2 Hz^-1
  double omega_ref = 0.0;
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // (alpha, ln amplitude)
  double sigma_alpha = 0.0;
  std::vector<std::size_t> rejected;  // indices of records with rate <= 0
};

/// Weighted fit of ln S_E = ln S_ref - alpha ln(omega / omega_ref); rates are converted with
/// the mode's heating-rate relation. Needs >= 3 distinct frequencies among accepted records.
FrequencyScaling fit_frequency_scaling(const std::vector<HeatingRecord>& records, const TrapModel& trap,
                                       double omega_ref);

/// S_ref = S (omega / omega_ref)^alpha.
double rescale_noise(double psd, double omega, double alpha, double omega_ref);

struct SpikeOptions {
  double factor = 3.0;       // excess over the running median
  double min_sigma = 3.0;    // excess in units of the point's sigma
  int window = 7;            // running-median window (odd)
};

struct Spike {
  std::size_t index = 0;
  double omega = 0.0;
  double ratio = 0.0;        // rate / baseline
};

/// Running-median baseline over a frequency grid; needs >= 8 points.
std::vector<Spike> flag_spikes(const std::vector<HeatingRecord>& grid, const SpikeOptions& options = {});

}  // namespace penning
