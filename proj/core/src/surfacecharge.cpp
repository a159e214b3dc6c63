#include "penning/surfacecharge.hpp"

#include "penning/constants.hpp"
#include "penning/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace penning {

using constants::kEAngstromPerUm2;
using constants::kEpsilon0;
using constants::kPi;

double from_e_angstrom_per_um2(double density) { return density * kEAngstromPerUm2; }
double to_e_angstrom_per_um2(double density) { return density / kEAngstromPerUm2; }

PatchField patch_field(const DipolePatch& patch, const Vec3& r) {
  const SolidAngle sa = rect_solid_angle(patch.extent, r);
  const double k = patch.density / (4.0 * kPi * kEpsilon0);
  return PatchField{k * sa.value, -k * sa.gradient};
}

DipoleGrid DipoleGrid::zeros(const Rect& region, int nx, int nz) {
  if (nx <= 0 || nz <= 0) {
    throw std::invalid_argument("dipole grid needs nx, nz >= 1");
  }
  DipoleGrid g;
  g.region = region;
  g.nx = nx;
  g.nz = nz;
  g.densities.assign(g.size(), 0.0);
  g.validate();
  return g;
}

Rect DipoleGrid::patch(std::size_t index) const {
  if (index >= size()) {
    throw std::out_of_range("patch index out of range");
  }
  const auto ix = static_cast<int>(index % static_cast<std::size_t>(nx));
  const auto iz = static_cast<int>(index / static_cast<std::size_t>(nx));
  // Edges computed from the same expression on both sides so neighbours share them exactly.
  auto edge = [](double a, double b, int k, int n) { return k == n ? b : a + (b - a) * k / n; };
  return Rect{edge(region.x1, region.x2, ix, nx), edge(region.x1, region.x2, ix + 1, nx),
              edge(region.z1, region.z2, iz, nz), edge(region.z1, region.z2, iz + 1, nz)};
}

void DipoleGrid::validate() const {
  if (nx <= 0 || nz <= 0) {
    throw std::invalid_argument("dipole grid needs nx, nz >= 1");
  }
  if (!region.valid()) {
    throw std::invalid_argument("dipole grid region needs x1 < x2 and z1 < z2");
  }
  if (densities.size() != size()) {
    throw std::invalid_argument("dipole grid has " + std::to_string(densities.size()) +
                                " densities, expected " + std::to_string(size()));
  }
  for (double d : densities) {
    if (!std::isfinite(d)) throw std::invalid_argument("dipole density must be finite");
  }
  if (!std::isfinite(background)) {
    throw std::invalid_argument("background density must be finite");
  }
}

PatchField grid_field(const DipoleGrid& grid, const Vec3& r) {
  grid.validate();
  PatchField total;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.densities[i] == 0.0) continue;
    const PatchField f = patch_field(DipolePatch{grid.patch(i), grid.densities[i]}, r);
    total.potential += f.potential;
    total.field += f.field;
  }
  if (grid.background != 0.0) {
    const PatchField f = patch_field(DipolePatch{grid.region, grid.background}, r);
    total.potential += f.potential;
    total.field += f.field;
  }
  return total;
}

Eigen::MatrixXd dipole_design_matrix(const std::vector<Vec3>& positions, const DipoleGrid& layout) {
  const auto n = static_cast<Eigen::Index>(layout.size());
  Eigen::MatrixXd a(3 * static_cast<Eigen::Index>(positions.size()), n + 1);
  const double unit = kEAngstromPerUm2;
  for (std::size_t s = 0; s < positions.size(); ++s) {
    const auto row = 3 * static_cast<Eigen::Index>(s);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Rect rect = layout.patch(static_cast<std::size_t>(i));
      a.block<3, 1>(row, i) = patch_field(DipolePatch{rect, unit}, positions[s]).field;
    }
    a.block<3, 1>(row, n) = patch_field(DipolePatch{layout.region, unit}, positions[s]).field;
  }
  return a;
}

double work_function_shift(double background_density) { return -background_density / kEpsilon0; }

namespace {

// Tikhonov on the background-projected system A~ D = y~, solved through one SVD.
struct ProjectedSystem {
  Eigen::MatrixXd v;
  Eigen::VectorXd s;
  Eigen::VectorXd beta;   // U^T y~
  double outside = 0.0;   // |y~|^2 - |beta|^2, the part no density can explain

  Eigen::VectorXd solve(double lambda, double cutoff) const {
    Eigen::VectorXd coef(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double si = s(i);
      coef(i) = (si <= cutoff) ? 0.0 : si * beta(i) / (si * si + lambda);
    }
    return v * coef;
  }

  double residual_sq(double lambda, double cutoff) const {
    double r = outside;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double si = s(i);
      const double f = (si <= cutoff) ? 1.0 : lambda / (si * si + lambda);
      r += f * f * beta(i) * beta(i);
    }
    return r;
  }

  double solution_sq(double lambda, double cutoff) const {
    double n = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double si = s(i);
      if (si <= cutoff) continue;
      const double c = si * beta(i) / (si * si + lambda);
      n += c * c;
    }
    return n;
  }
};

// Maximum curvature of (log |r|, log |x|) over a log-spaced lambda grid.
double lcurve_corner(const ProjectedSystem& sys, double cutoff, const InversionOptions& opt) {
  const double scale = sys.s.squaredNorm() / std::max<Eigen::Index>(1, sys.s.size());
  const int n = std::max(opt.lcurve_points, 5);
  std::vector<double> lam(static_cast<std::size_t>(n));
  std::vector<double> rho(lam.size());
  std::vector<double> eta(lam.size());
  for (int k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / (n - 1);
    const auto ks = static_cast<std::size_t>(k);
    lam[ks] = scale * opt.lcurve_min * std::pow(opt.lcurve_max / opt.lcurve_min, t);
    rho[ks] = 0.5 * std::log(std::max(sys.residual_sq(lam[ks], cutoff), 1e-300));
    eta[ks] = 0.5 * std::log(std::max(sys.solution_sq(lam[ks], cutoff), 1e-300));
  }
  double best_kappa = -std::numeric_limits<double>::infinity();
  std::size_t best = lam.size() / 2;
  for (std::size_t k = 1; k + 1 < lam.size(); ++k) {
    // Grid is uniform in log lambda, so the step cancels in the curvature.
    const double r1 = 0.5 * (rho[k + 1] - rho[k - 1]);
    const double e1 = 0.5 * (eta[k + 1] - eta[k - 1]);
    const double r2 = rho[k + 1] - 2.0 * rho[k] + rho[k - 1];
    const double e2 = eta[k + 1] - 2.0 * eta[k] + eta[k - 1];
    const double denom = std::pow(r1 * r1 + e1 * e1, 1.5);
    if (denom <= 0.0) continue;
    const double kappa = (r1 * e2 - r2 * e1) / denom;
    if (kappa > best_kappa) {
      best_kappa = kappa;
      best = k;
    }
  }
  return lam[best];
}

}  // namespace

InversionResult invert_dipoles(const std::vector<FieldSample>& samples, const DipoleGrid& layout,
                               const InversionOptions& options) {
  if (samples.empty()) {
    throw std::invalid_argument("dipole inversion needs at least one field sample");
  }
  if (layout.nx <= 0 || layout.nz <= 0 || !layout.region.valid()) {
    throw std::invalid_argument("invalid dipole grid layout");
  }
  if (!std::isfinite(options.lambda)) {
    throw std::invalid_argument("regularization weight must be finite");
  }
  std::vector<Vec3> positions;
  positions.reserve(samples.size());
  Eigen::VectorXd y(3 * static_cast<Eigen::Index>(samples.size()));
  Eigen::VectorXd w(y.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& fs = samples[s];
    if (!(fs.sigma.minCoeff() > 0.0)) {
      throw std::invalid_argument("field sample " + std::to_string(s) + " needs sigma > 0 on every axis");
    }
    positions.push_back(fs.position);
    for (int a = 0; a < 3; ++a) {
      const auto row = 3 * static_cast<Eigen::Index>(s) + a;
      w(row) = 1.0 / fs.sigma(a);
      y(row) = fs.field(a) * w(row);
    }
  }

  Eigen::MatrixXd aw = dipole_design_matrix(positions, layout);
  aw = w.asDiagonal() * aw;
  const Eigen::Index np = aw.cols() - 1;
  const Eigen::VectorXd b = aw.col(np);
  const double bb = b.squaredNorm();
  if (!(bb > 0.0)) {
    throw RankDeficientError("samples carry no information on the background density",
                             0, static_cast<std::size_t>(np + 1));
  }
  const Eigen::MatrixXd ap = aw.leftCols(np);
  const Eigen::RowVectorXd coupling = b.transpose() * ap / bb;  // bg absorbed per unit patch density
  const Eigen::MatrixXd proj = ap - b * coupling;
  const Eigen::VectorXd yproj = y - b * (b.dot(y) / bb);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(proj, Eigen::ComputeThinU | Eigen::ComputeThinV);
  ProjectedSystem sys;
  sys.s = svd.singularValues();
  sys.v = svd.matrixV();
  sys.beta = svd.matrixU().transpose() * yproj;
  sys.outside = std::max(0.0, yproj.squaredNorm() - sys.beta.squaredNorm());

  const double smax = sys.s.size() > 0 ? sys.s(0) : 0.0;
  const double cutoff = smax * std::numeric_limits<double>::epsilon() *
                        static_cast<double>(std::max(proj.rows(), proj.cols())) * 8.0;
  std::size_t rank_p = 0;
  for (Eigen::Index i = 0; i < sys.s.size(); ++i) {
    if (sys.s(i) > cutoff) ++rank_p;
  }

  InversionResult out;
  out.observations = static_cast<std::size_t>(y.size());
  out.unknowns = static_cast<std::size_t>(np + 1);
  out.rank = rank_p + 1;
  out.underdetermined = out.observations < out.unknowns || out.rank < out.unknowns;

  double lambda = options.lambda;
  if (lambda < 0.0) {
    lambda = lcurve_corner(sys, cutoff, options);
  } else if (lambda == 0.0 && out.rank < out.unknowns) {
    throw RankDeficientError("dipole design has rank " + std::to_string(out.rank) + " for " +
                                 std::to_string(out.unknowns) +
                                 " unknowns; a regularization weight lambda > 0 is required",
                             out.rank, out.unknowns);
  }
  out.lambda = lambda;

  const Eigen::VectorXd d = sys.solve(lambda, lambda > 0.0 ? 0.0 : cutoff);
  const double bg = (b.dot(y) - b.dot(ap * d)) / bb;

  out.grid = layout;
  out.grid.densities.resize(static_cast<std::size_t>(np));
  for (Eigen::Index i = 0; i < np; ++i) {
    out.grid.densities[static_cast<std::size_t>(i)] = from_e_angstrom_per_um2(d(i));
  }
  out.grid.background = from_e_angstrom_per_um2(bg);

  const Eigen::VectorXd r = ap * d + b * bg - y;
  out.chi2 = r.squaredNorm();
  out.penalty = lambda * d.squaredNorm();
  out.residuals.resize(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    out.residuals[s] = r.segment<3>(3 * static_cast<Eigen::Index>(s));
  }

  // Posterior covariance of the densities: V diag(1/(s^2 + lambda)) V^T; the background
  // variance follows from the profiled normal equations.
  Eigen::VectorXd inv(sys.s.size());
  double dof = 1.0;
  for (Eigen::Index i = 0; i < sys.s.size(); ++i) {
    const double s2 = sys.s(i) * sys.s(i);
    const bool kept = lambda > 0.0 || sys.s(i) > cutoff;
    inv(i) = kept ? 1.0 / (s2 + lambda) : 0.0;
    dof += kept ? s2 / (s2 + lambda) : 0.0;
  }
  out.effective_parameters = dof;
  const Eigen::MatrixXd vs = sys.v * inv.cwiseSqrt().asDiagonal();
  out.density_sigma.resize(static_cast<std::size_t>(np));
  for (Eigen::Index i = 0; i < np; ++i) {
    out.density_sigma[static_cast<std::size_t>(i)] = from_e_angstrom_per_um2(vs.row(i).norm());
  }
  const double bg_var = 1.0 / bb + (coupling * vs).squaredNorm();
  out.background_sigma = from_e_angstrom_per_um2(std::sqrt(bg_var));
  return out;
}

}  // namespace penning
