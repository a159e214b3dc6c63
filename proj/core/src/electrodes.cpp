#include "penning/electrodes.hpp"

#include "penning/constants.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

namespace penning {

using constants::kBoltzmann;
using constants::kMicro;
using constants::kTwoPi;

void FilterStage::validate() const {
  if (!(resistance > 0.0) || !(capacitance > 0.0)) {
    throw std::invalid_argument("filter stage needs R > 0 and C > 0");
  }
  if (!(series_resistance >= 0.0)) {
    throw std::invalid_argument("filter series resistance must be >= 0");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("filter temperature must be > 0");
  }
}

TrapModel::TrapModel(std::vector<RectElectrode> electrodes, std::map<std::string, FilterStage> filters,
                     double magnetic_field, IonSpecies species)
    : electrodes_(std::move(electrodes)),
      filters_(std::move(filters)),
      magnetic_field_(magnetic_field),
      species_(std::move(species)) {
  species_.validate();
  if (electrodes_.empty()) {
    throw std::invalid_argument("trap model needs at least one electrode");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    const auto& e = electrodes_[i];
    if (e.id.empty()) {
      throw std::invalid_argument("electrode id must not be empty");
    }
    if (!ids.insert(e.id).second) {
      throw std::invalid_argument("duplicate electrode id '" + e.id + "'");
    }
    if (!e.extent.valid()) {
      throw std::invalid_argument("electrode '" + e.id + "' needs x1 < x2 and z1 < z2");
    }
    if (filters_.find(e.group) == filters_.end()) {
      throw std::invalid_argument("electrode '" + e.id + "' belongs to group '" + e.group +
                                  "' without a filter stage");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (e.extent.overlaps(electrodes_[j].extent)) {
        throw std::invalid_argument("electrodes '" + electrodes_[j].id + "' and '" + e.id + "' overlap");
      }
    }
  }
  for (const auto& [group, stage] : filters_) {
    stage.validate();
  }
}

std::size_t TrapModel::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    if (electrodes_[i].id == id) return i;
  }
  throw std::out_of_range("unknown electrode '" + std::string(id) + "'");
}

bool TrapModel::has_electrode(std::string_view id) const {
  return std::any_of(electrodes_.begin(), electrodes_.end(), [&](const auto& e) { return e.id == id; });
}

bool TrapModel::has_group(std::string_view group) const {
  return filters_.find(std::string(group)) != filters_.end();
}

const FilterStage& TrapModel::filter_of(std::size_t electrode_index) const {
  return filters_.at(electrodes_.at(electrode_index).group);
}

std::vector<std::size_t> TrapModel::group_members(std::string_view group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    if (electrodes_[i].group == group) out.push_back(i);
  }
  return out;
}

std::vector<std::string> TrapModel::groups() const {
  std::vector<std::string> out;
  for (const auto& [group, stage] : filters_) {
    if (!group_members(group).empty()) out.push_back(group);
  }
  return out;
}

TrapModel default_trap_model() {
  const double um = kMicro;
  const double strip_half_length = 1500.0 * um;
  const double strip_width = 40.0 * um;
  const double axial_inner = 100.0 * um;
  const double axial_outer = kDefaultAxializationOuterEdge;
  const double control_width = 300.0 * um;
  const double segment_length = 100.0 * um;

  std::vector<RectElectrode> electrodes;
  std::map<std::string, FilterStage> filters;
  const FilterStage strip_filter{1e3, 22e-9, 0.25, 6.5};
  const FilterStage control_filter{10e3, 560e-12, 0.25, 6.5};
  const FilterStage axialization_filter{1e3, 560e-12, 0.25, 6.5};

  for (int k = 0; k < 5; ++k) {
    const double x1 = -axial_inner + k * strip_width;
    const double x2 = k == 4 ? axial_inner : -axial_inner + (k + 1) * strip_width;
    const std::string id = "S" + std::to_string(k + 1);
    electrodes.push_back({id, Rect{x1, x2, -strip_half_length, strip_half_length}, id});
    filters[id] = strip_filter;
  }
  electrodes.push_back({"AXL", Rect{-axial_outer, -axial_inner, -strip_half_length, strip_half_length}, "AX"});
  electrodes.push_back({"AXR", Rect{axial_inner, axial_outer, -strip_half_length, strip_half_length}, "AX"});
  filters["AX"] = axialization_filter;

  for (int side = 0; side < 2; ++side) {
    const double x1 = side == 0 ? -axial_outer - control_width : axial_outer;
    const double x2 = side == 0 ? -axial_outer : axial_outer + control_width;
    for (int k = 0; k < 9; ++k) {
      const double z1 = (-4.5 + k) * segment_length;
      const double z2 = (-3.5 + k) * segment_length;
      const std::string id = std::string(side == 0 ? "CL" : "CR") + std::to_string(k + 1);
      electrodes.push_back({id, Rect{x1, x2, z1, z2}, id});
      filters[id] = control_filter;
    }
  }
  return TrapModel(std::move(electrodes), std::move(filters), 3.0, IonSpecies::beryllium9());
}

PotentialSample basis_potential(const RectElectrode& electrode, const Vec3& r) {
  if (!(r.y() > 0.0)) {
    throw std::invalid_argument("basis potential requires a point strictly above the electrode plane");
  }
  const SolidAngle sa = rect_solid_angle(electrode.extent, r);
  const double scale = 1.0 / kTwoPi;
  return PotentialSample{scale * sa.value, scale * sa.gradient, scale * sa.hessian};
}

PotentialSample basis_potential(const TrapModel& trap, std::string_view electrode_id, const Vec3& r) {
  return basis_potential(trap.electrodes()[trap.index_of(electrode_id)], r);
}

PotentialSample group_basis_potential(const TrapModel& trap, std::string_view group, const Vec3& r) {
  const auto members = trap.group_members(group);
  if (members.empty()) {
    throw std::out_of_range("unknown or empty group '" + std::string(group) + "'");
  }
  PotentialSample sum;
  for (std::size_t i : members) {
    const PotentialSample p = basis_potential(trap.electrodes()[i], r);
    sum.value += p.value;
    sum.gradient += p.gradient;
    sum.hessian += p.hessian;
  }
  return sum;
}

double characteristic_distance(const TrapModel& trap, std::string_view id_or_group, const Vec3& r0,
                               Axis axis) {
  const PotentialSample p = trap.has_electrode(id_or_group) ? basis_potential(trap, id_or_group, r0)
                                                            : group_basis_potential(trap, id_or_group, r0);
  const double coupling = std::abs(p.gradient[static_cast<int>(axis)]);
  if (coupling == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return 1.0 / coupling;
}

std::complex<double> filter_impedance(const FilterStage& stage, double omega) {
  if (omega < 0.0) {
    throw std::invalid_argument("angular frequency must be >= 0");
  }
  const std::complex<double> denom(1.0, omega * stage.time_constant());
  return stage.resistance / denom + stage.series_resistance;
}

std::complex<double> filter_transfer(const FilterStage& stage, double omega) {
  if (omega < 0.0) {
    throw std::invalid_argument("angular frequency must be >= 0");
  }
  return 1.0 / std::complex<double>(1.0, omega * stage.time_constant());
}

std::vector<GroupNoise> johnson_breakdown(const TrapModel& trap, const Vec3& r0, double omega) {
  std::vector<GroupNoise> out;
  for (const auto& group : trap.groups()) {
    const FilterStage& stage = trap.filters().at(group);
    GroupNoise g;
    g.group = group;
    g.voltage_psd = 4.0 * kBoltzmann * stage.temperature * filter_impedance(stage, omega).real();
    const Vec3 grad = group_basis_potential(trap, group, r0).gradient;
    g.field_psd = g.voltage_psd * grad.cwiseAbs2();
    out.push_back(std::move(g));
  }
  return out;
}

Vec3 johnson_field_psd(const TrapModel& trap, const Vec3& r0, double omega) {
  Vec3 total = Vec3::Zero();
  for (const auto& g : johnson_breakdown(trap, r0, omega)) {
    total += g.field_psd;
  }
  return total;
}

CorrelatedCoupling correlated_field(const TrapModel& trap, const Vec3& r0, double omega) {
  CorrelatedCoupling c;
  for (std::size_t i = 0; i < trap.size(); ++i) {
    const double gain = std::abs(filter_transfer(trap.filter_of(i), omega));
    c.field_per_volt -= gain * basis_potential(trap.electrodes()[i], r0).gradient;
  }
  c.inverse_distance = c.field_per_volt.cwiseAbs();
  c.psd_per_voltage_psd = c.field_per_volt.cwiseAbs2();
  return c;
}

Vec3 correlated_field_psd(const TrapModel& trap, const Vec3& r0, double omega, double voltage_psd) {
  if (voltage_psd < 0.0) {
    throw std::invalid_argument("correlated voltage PSD must be >= 0");
  }
  return voltage_psd * correlated_field(trap, r0, omega).psd_per_voltage_psd;
}

}  // namespace penning
