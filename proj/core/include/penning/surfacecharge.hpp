#pragma once

// Surface dipole layers: forward fields of rectangular patches and the regularized
// inversion of measured stray fields into a patch-density map plus uniform background.
//
// Densities are stored in C/m. The I/O unit e*A/um^2 is 1.602176634e-17 C/m.

#include "penning/solid_angle.hpp"

#include <cstddef>
#include <vector>

namespace penning {

double from_e_angstrom_per_um2(double density);  // -> C/m
double to_e_angstrom_per_um2(double density);    // C/m ->

struct DipolePatch {
  Rect extent;
  double density = 0.0;  // C/m, positive = dipoles pointing away from the surface (+y)
};

struct PatchField {
  double potential = 0.0;  // V
  Vec3 field = Vec3::Zero();  // V/m
};

/// phi = D Omega / (4 pi eps0), E = -grad phi. Throws on points on the patch itself.
PatchField patch_field(const DipolePatch& patch, const Vec3& r);

/// Regular nx x nz tiling of `region`; patch (ix, iz) has index iz * nx + ix.
/// The background density covers the whole region on top of the patches.
struct DipoleGrid {
  Rect region{-500e-6, 500e-6, -500e-6, 500e-6};
  int nx = 20;
  int nz = 20;
  std::vector<double> densities;  // C/m, size nx * nz
  double background = 0.0;        // C/m

  static DipoleGrid zeros(const Rect& region, int nx, int nz);

  std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(nz); }
  Rect patch(std::size_t index) const;
  /// Throws std::invalid_argument if the shape or densities are inconsistent.
  void validate() const;
};

PatchField grid_field(const DipoleGrid& grid, const Vec3& r);

struct FieldSample {
  Vec3 position = Vec3::Zero();  // m
  Vec3 field = Vec3::Zero();     // V/m
  Vec3 sigma = Vec3::Ones();     // V/m, > 0
};

struct InversionOptions {
  /// Weight of sum D_i^2 with D_i in e*A/um^2. Negative selects lambda on the L-curve.
  double lambda = -1.0;
  /// L-curve search range, relative to the mean squared singular value of the design.
  double lcurve_min = 1e-10;
  double lcurve_max = 1e2;
  int lcurve_points = 61;
};

struct InversionResult {
  DipoleGrid grid;
  double lambda = 0.0;                  // as used, (e*A/um^2)^-2
  double chi2 = 0.0;                    // sum of normalized squared residuals
  double penalty = 0.0;                 // lambda * sum D_i^2 (e*A/um^2 units)
  std::vector<Vec3> residuals;          // (E_model - E_meas) / sigma, per sample
  std::vector<double> density_sigma;    // C/m, per patch (posterior, ignores bias)
  double background_sigma = 0.0;        // C/m
  std::size_t observations = 0;
  std::size_t unknowns = 0;
  std::size_t rank = 0;                 // numerical rank of the unregularized design
  double effective_parameters = 0.0;    // trace of the influence matrix
  bool underdetermined = false;         // fewer observations than unknowns or rank-deficient
};

/// Minimizes sum ((E_model - E_meas)/sigma)^2 + lambda sum D_i^2 over the patch densities
/// and an unregularized background. With lambda == 0 a rank-deficient design throws
/// RankDeficientError. `layout` supplies region and shape; its densities are ignored.
InversionResult invert_dipoles(const std::vector<FieldSample>& samples, const DipoleGrid& layout,
                               const InversionOptions& options = {});

/// Field of every patch (columns 0..n-1, at unit density of 1 e*A/um^2) and of the
/// background (last column) at every sample, three rows per sample, unweighted.
Eigen::MatrixXd dipole_design_matrix(const std::vector<Vec3>& positions, const DipoleGrid& layout);

/// -D / eps0, V.
double work_function_shift(double background_density);

}  // namespace penning
