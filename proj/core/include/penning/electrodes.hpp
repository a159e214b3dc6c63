#pragma once

// Planar multi-electrode trap in the gapless-plane approximation, plus the
// per-group RC filter network that shapes Johnson and correlated voltage noise.

#include "penning/solid_angle.hpp"
#include "penning/trap.hpp"

#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace penning {

struct RectElectrode {
  std::string id;
  Rect extent;        // m, in the y = 0 plane
  std::string group;  // co-wired electrodes share a group and its filter
};

struct FilterStage {
  double resistance = 0.0;         // ohm
  double capacitance = 0.0;        // F
  double series_resistance = 0.0;  // ohm, wiring between filter and electrode
  double temperature = 0.0;        // K

  void validate() const;
  double time_constant() const { return resistance * capacitance; }
  double cutoff_angular() const { return 1.0 / time_constant(); }
};

/// Immutable after construction.
class TrapModel {
 public:
  /// Validates ids, rectangles, overlaps and the group -> filter mapping.
  TrapModel(std::vector<RectElectrode> electrodes, std::map<std::string, FilterStage> filters,
            double magnetic_field, IonSpecies species);

  const std::vector<RectElectrode>& electrodes() const { return electrodes_; }
  const std::map<std::string, FilterStage>& filters() const { return filters_; }
  double magnetic_field() const { return magnetic_field_; }
  const IonSpecies& species() const { return species_; }

  std::size_t size() const { return electrodes_.size(); }
  /// Throws std::out_of_range for unknown ids.
  std::size_t index_of(std::string_view id) const;
  bool has_electrode(std::string_view id) const;
  bool has_group(std::string_view group) const;
  const FilterStage& filter_of(std::size_t electrode_index) const;
  std::vector<std::size_t> group_members(std::string_view group) const;
  /// Groups in lexicographic order.
  std::vector<std::string> groups() const;

 private:
  std::vector<RectElectrode> electrodes_;
  std::map<std::string, FilterStage> filters_;
  double magnetic_field_;
  IonSpecies species_;
};

/// Bundled 25-electrode layout: five central strips, a co-wired axialization pair whose
/// out-of-plane field null sits 152 um above the centre, and 18 axially segmented controls.
TrapModel default_trap_model();

/// Outer x edge of the axialization strips in the default layout (calibrated), m.
inline constexpr double kDefaultAxializationOuterEdge = 236.67e-6;

/// Potential per applied volt of one electrode (all others grounded). Requires r.y() > 0.
PotentialSample basis_potential(const RectElectrode& electrode, const Vec3& r);
PotentialSample basis_potential(const TrapModel& trap, std::string_view electrode_id, const Vec3& r);

/// Sum of basis potentials of all electrodes in a wiring group.
PotentialSample group_basis_potential(const TrapModel& trap, std::string_view group, const Vec3& r);

/// d = 1 / |d(phi)/d(nu)| for an electrode id or a group label; +inf on a field null.
double characteristic_distance(const TrapModel& trap, std::string_view id_or_group, const Vec3& r0,
                               Axis axis);

/// R / (1 + j w R C) + R_series.
std::complex<double> filter_impedance(const FilterStage& stage, double omega);
/// 1 / (1 + j w R C).
std::complex<double> filter_transfer(const FilterStage& stage, double omega);

/// Johnson field-noise PSD per axis, V^2 m^-2 Hz^-1: groups add incoherently.
Vec3 johnson_field_psd(const TrapModel& trap, const Vec3& r0, double omega);

struct GroupNoise {
  std::string group;
  double voltage_psd = 0.0;  // 4 kB T Re Z, V^2/Hz
  Vec3 field_psd = Vec3::Zero();
};
/// Per-group contributions; their sum is johnson_field_psd.
std::vector<GroupNoise> johnson_breakdown(const TrapModel& trap, const Vec3& r0, double omega);

struct CorrelatedCoupling {
  Vec3 field_per_volt = Vec3::Zero();     // V/m per volt of common-mode noise, signed
  Vec3 inverse_distance = Vec3::Zero();   // 1 / d_corr per axis, m^-1
  Vec3 psd_per_voltage_psd = Vec3::Zero(); // S_E / S_V,corr per axis, m^-2
};

/// Field from a common voltage V |T_i(w)| applied in phase to every electrode.
CorrelatedCoupling correlated_field(const TrapModel& trap, const Vec3& r0, double omega);

/// S_E,corr per axis for a common-mode voltage PSD.
Vec3 correlated_field_psd(const TrapModel& trap, const Vec3& r0, double omega, double voltage_psd);

}  // namespace penning
