#include "penning/sensing.hpp"

#include "penning/errors.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace penning {

using constants::kBohrMagneton;
using constants::kElectronG;
using constants::kHbar;
using constants::kPi;

Vec3 ImagingSetup::reference_curvature() const {
  const double k = species.mass * reference_omega * reference_omega / std::abs(species.charge_coulomb());
  return Vec3(0.5 * k, 0.5 * k, k);
}

Vec3 ImagingSetup::position_resolution() const {
  const double lateral = position_error_px * pixel_size / magnification;
  return Vec3(lateral, depth_of_field(wavelength, numerical_aperture), lateral);
}

Vec3 ImagingSetup::sensitivity() const { return reference_curvature().cwiseProduct(position_resolution()); }

void ImagingSetup::validate() const {
  species.validate();
  if (!(reference_omega > 0.0) || !(pixel_size > 0.0) || !(magnification > 0.0) || !(wavelength > 0.0) ||
      !(numerical_aperture > 0.0) || !(position_error_px > 0.0) || !(width_error_px > 0.0)) {
    throw std::invalid_argument("imaging setup parameters must all be positive");
  }
}

StrayFieldResult extract_stray_field(double f1, const Vec3& e1, double f2, const Vec3& e2,
                                     const ImagingSetup& setup) {
  if (!(f1 > 0.0) || !(f2 > 0.0)) {
    throw std::invalid_argument("f_ax must be positive");
  }
  const double q1 = f1 * f1;
  const double q2 = f2 * f2;
  const double delta = q2 - q1;
  if (std::abs(delta) <= 1e-12 * std::max(q1, q2)) {
    throw std::invalid_argument("stray-field extraction needs two different f_ax values");
  }
  StrayFieldResult r;
  r.grad_phi_app = (e2 - e1) / delta;
  r.grad_phi_stray = -(q1 * e2 - q2 * e1) / delta;

  const Vec3 unit = setup.sensitivity();  // field per readout error at f_ax = 1
  const Vec3 s1 = q1 * unit;
  const Vec3 s2 = q2 * unit;
  for (int a = 0; a < 3; ++a) {
    r.sigma_app(a) = std::hypot(s1(a), s2(a)) / std::abs(delta);
    r.sigma_stray(a) = std::hypot(q1 * s2(a), q2 * s1(a)) / std::abs(delta);
  }
  return r;
}

StrayFieldResult extract_stray_field(const PositionReading& r1, const PositionReading& r2,
                                     const ImagingSetup& setup) {
  if (r1.lost || r2.lost) {
    throw std::invalid_argument("cannot extract a stray field from a lost-ion reading");
  }
  const double pos_tol = 2.0 * setup.position_error_px;
  const double width_tol = 2.0 * setup.width_error_px;
  if (std::abs(r1.px - r2.px) > pos_tol || std::abs(r1.pz - r2.pz) > pos_tol ||
      std::abs(r1.width - r2.width) > width_tol) {
    throw std::invalid_argument("readings are not co-located on the camera");
  }
  return extract_stray_field(r1.f_ax, r1.applied_field, r2.f_ax, r2.applied_field, setup);
}

namespace {

double reading_along(const PositionReading& r, int axis) {
  switch (axis) {
    case 0:
      return r.px;
    case 1:
      return r.width;
    default:
      return r.pz;
  }
}

struct Line {
  double intercept = 0.0;
  double slope = 0.0;
};

// Ordinary least squares; false when fewer than three points or no slope.
bool fit_line(const std::vector<double>& t, const std::vector<double>& v, Line& out) {
  const std::size_t n = t.size();
  if (n < 3) return false;
  double mt = 0.0;
  double mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += t[i];
    mv += v[i];
  }
  mt /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double stt = 0.0;
  double stv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    stt += (t[i] - mt) * (t[i] - mt);
    stv += (t[i] - mt) * (v[i] - mv);
  }
  if (!(stt > 0.0) || stv == 0.0) return false;
  out.slope = stv / stt;
  out.intercept = mv - out.slope * mt;
  return true;
}

}  // namespace

CalibrationResult iterate_calibration(const CameraOracle& oracle, const ImagingSetup& setup,
                                      const CalibrationOptions& options) {
  setup.validate();
  if (!oracle) {
    throw std::invalid_argument("calibration needs a measurement oracle");
  }
  if (options.max_iterations < 1 || options.scan_points < 3 || !(options.initial_half_width > 0.0) ||
      !(options.shrink > 0.0) || !(options.min_half_width > 0.0)) {
    throw std::invalid_argument("invalid calibration options");
  }

  CalibrationResult out;
  const Vec3 sensitivity = setup.sensitivity();
  Vec3 e1 = options.start_field;
  double half_width = options.initial_half_width;
  const int n = options.scan_points;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Vec3 e2 = e1;
    bool scan_ok = true;
    for (int axis = 0; axis < 3 && scan_ok; ++axis) {
      Line lines[2];
      const double fs[2] = {options.f1, options.f2};
      for (int k = 0; k < 2 && scan_ok; ++k) {
        std::vector<double> ts;
        std::vector<double> vs;
        for (int j = 0; j < n; ++j) {
          const double t = -half_width + 2.0 * half_width * j / (n - 1);
          Vec3 e = e1;
          e(axis) += t;
          const PositionReading r = oracle(e, fs[k]);
          if (r.lost) continue;
          ts.push_back(t);
          vs.push_back(reading_along(r, axis));
        }
        scan_ok = fit_line(ts, vs, lines[k]);
      }
      if (!scan_ok) break;
      // E2 puts the f2 image where the f1 image sits at E1.
      e2(axis) = e1(axis) + (lines[0].intercept - lines[1].intercept) / lines[1].slope;
    }
    if (!scan_ok) break;

    CalibrationStep step;
    step.e1 = e1;
    step.e2 = e2;
    step.result = extract_stray_field(options.f1, e1, options.f2, e2, setup);
    step.within_sensitivity = (step.result.grad_phi_app.cwiseAbs().array() <= sensitivity.array()).all();
    out.trace.push_back(step);
    out.result = step.result;
    out.iterations = iter + 1;
    if (step.within_sensitivity) {
      out.converged = true;
      break;
    }
    // The applied field that cancels the stray gradient at the ion.
    e1 = step.result.grad_phi_stray;
    half_width = std::max(half_width * options.shrink, options.min_half_width);
  }
  return out;
}

// ---- Rabi spectroscopy ----

void RabiScan::validate() const {
  const std::size_t n = abscissa.size();
  if (n < 5) {
    throw std::invalid_argument("Rabi scan needs at least 5 points");
  }
  if (p_up.size() != n || shots.size() != n) {
    throw std::invalid_argument("Rabi scan columns have different lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p_up[i] >= 0.0 && p_up[i] <= 1.0)) {
      throw std::invalid_argument("Rabi scan ordinate outside [0, 1] at point " + std::to_string(i));
    }
    if (shots[i] <= 0) {
      throw std::invalid_argument("Rabi scan needs positive shot counts");
    }
    if (!std::isfinite(abscissa[i])) {
      throw std::invalid_argument("Rabi scan abscissa must be finite");
    }
  }
  if (kind == RabiScanKind::Frequency && !(fixed > 0.0)) {
    throw std::invalid_argument("frequency scan needs a positive pulse duration");
  }
  if (kind == RabiScanKind::Duration) {
    for (double t : abscissa) {
      if (t < 0.0) throw std::invalid_argument("pulse durations must be >= 0");
    }
  }
}

double rabi_lineshape(double omega_rabi, double delta, double t) {
  const double w2 = omega_rabi * omega_rabi + delta * delta;
  if (w2 == 0.0) return 1.0;
  const double s = std::sin(0.5 * std::sqrt(w2) * t);
  return 1.0 - omega_rabi * omega_rabi / w2 * s * s;
}

namespace {

// Dimensionless form: u = Omega * T, x = delta * T, y = t / T for a scan scale T.
template <typename T>
T rabi_dimensionless(const T& u, const T& x, const T& y) {
  const T w2 = u * u + x * x;
  const T s = sin(0.5 * sqrt(w2) * y);
  return T(1.0) - u * u / w2 * s * s;
}

struct FrequencyResidual {
  double x;  // (omega_i - omega_mid) * tau
  double p;
  double inv_sigma;
  template <typename T>
  bool operator()(const T* const c, const T* const u, T* r) const {
    r[0] = (rabi_dimensionless(u[0], T(x) - c[0], T(1.0)) - T(p)) * T(inv_sigma);
    return true;
  }
};

struct DurationResidual {
  double y;  // t_i / t_max
  double x;  // fixed detuning * t_max
  double p;
  double inv_sigma;
  template <typename T>
  bool operator()(const T* const u, T* r) const {
    r[0] = (rabi_dimensionless(u[0], T(x), T(y)) - T(p)) * T(inv_sigma);
    return true;
  }
};

double binomial_sigma(double p, int shots) {
  const double n = shots;
  return std::sqrt((p * (1.0 - p) * n + 1.0) / ((n + 2.0) * (n + 2.0)));
}

ceres::Solver::Options solver_options() {
  ceres::Solver::Options o;
  o.linear_solver_type = ceres::DENSE_QR;
  o.max_num_iterations = 200;
  o.function_tolerance = 1e-15;
  o.gradient_tolerance = 1e-16;
  o.parameter_tolerance = 1e-15;
  o.logging_type = ceres::SILENT;
  o.minimizer_progress_to_stdout = false;
  return o;
}

struct ScaledScan {
  std::vector<double> x;  // per-point dimensionless abscissa
  std::vector<double> p;
  std::vector<int> shots;
  double scale = 1.0;     // T
  double mid = 0.0;       // omega_mid (frequency scans)
  double fixed_x = 0.0;   // dimensionless fixed detuning (duration scans)
};

double model_at(const RabiScan& scan, const ScaledScan& s, double c, double u, std::size_t i) {
  return scan.kind == RabiScanKind::Frequency ? rabi_dimensionless(u, s.x[i] - c, 1.0)
                                              : rabi_dimensionless(u, s.fixed_x, s.x[i]);
}

double chi2_at(const RabiScan& scan, const ScaledScan& s, const std::vector<double>& sig, double c, double u) {
  double chi2 = 0.0;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    const double r = (model_at(scan, s, c, u, i) - s.p[i]) / sig[i];
    chi2 += r * r;
  }
  return chi2;
}

struct RabiCandidate {
  double c = 0.0;
  double u = 0.0;
  double chi2 = std::numeric_limits<double>::infinity();
};

RabiCandidate refine(const RabiScan& scan, const ScaledScan& s, const std::vector<double>& sig,
                     RabiCandidate start, std::vector<double>* covariance) {
  double c = start.c;
  double u = start.u;
  ceres::Problem problem;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    if (scan.kind == RabiScanKind::Frequency) {
      problem.AddResidualBlock(new ceres::AutoDiffCostFunction<FrequencyResidual, 1, 1, 1>(
                                   new FrequencyResidual{s.x[i], s.p[i], 1.0 / sig[i]}),
                               nullptr, &c, &u);
    } else {
      problem.AddResidualBlock(new ceres::AutoDiffCostFunction<DurationResidual, 1, 1>(
                                   new DurationResidual{s.x[i], s.fixed_x, s.p[i], 1.0 / sig[i]}),
                               nullptr, &u);
    }
  }
  problem.SetParameterLowerBound(&u, 0, 1e-9);
  ceres::Solver::Summary summary;
  ceres::Solve(solver_options(), &problem, &summary);
  RabiCandidate out{c, u, 2.0 * summary.final_cost};
  if (covariance != nullptr) {
    covariance->clear();
    ceres::Covariance::Options copt;
    copt.algorithm_type = ceres::DENSE_SVD;
    copt.null_space_rank = 0;
    ceres::Covariance cov(copt);
    std::vector<std::pair<const double*, const double*>> blocks;
    blocks.emplace_back(&u, &u);
    if (scan.kind == RabiScanKind::Frequency) {
      blocks.emplace_back(&c, &c);
      blocks.emplace_back(&c, &u);
    }
    if (cov.Compute(blocks, &problem)) {
      double cuu = 0.0;
      cov.GetCovarianceBlock(&u, &u, &cuu);
      covariance->push_back(cuu);
      if (scan.kind == RabiScanKind::Frequency) {
        double ccc = 0.0;
        cov.GetCovarianceBlock(&c, &c, &ccc);
        covariance->push_back(ccc);
      }
    }
  }
  return out;
}

}  // namespace

RabiFit fit_rabi(const RabiScan& scan) {
  scan.validate();
  const std::size_t n = scan.abscissa.size();
  ScaledScan s;
  s.p = scan.p_up;
  s.shots = scan.shots;
  if (scan.kind == RabiScanKind::Frequency) {
    const auto [lo, hi] = std::minmax_element(scan.abscissa.begin(), scan.abscissa.end());
    s.mid = 0.5 * (*lo + *hi);
    s.scale = scan.fixed;
    for (double w : scan.abscissa) s.x.push_back((w - s.mid) * s.scale);
  } else {
    s.scale = *std::max_element(scan.abscissa.begin(), scan.abscissa.end());
    if (!(s.scale > 0.0)) {
      throw NotIdentifiableError("duration scan has no nonzero pulse duration");
    }
    for (double t : scan.abscissa) s.x.push_back(t / s.scale);
    s.fixed_x = scan.fixed * s.scale;
  }

  // Binomial weights with Laplace smoothing for the first pass.
  std::vector<double> sig(n);
  double max_sigma = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ps = (s.p[i] * s.shots[i] + 1.0) / (s.shots[i] + 2.0);
    sig[i] = std::sqrt(ps * (1.0 - ps) / s.shots[i]);
    max_sigma = std::max(max_sigma, sig[i]);
  }
  const auto [pmin, pmax] = std::minmax_element(s.p.begin(), s.p.end());
  if (*pmax - *pmin <= 2.0 * max_sigma) {
    throw NotIdentifiableError("Rabi scan is flat within its projection noise; no resonance to fit");
  }

  // Multi-start: coarse grid over (centre, pulse area), keep the best few.
  std::vector<RabiCandidate> grid;
  const auto [xmin, xmax] = std::minmax_element(s.x.begin(), s.x.end());
  if (scan.kind == RabiScanKind::Frequency) {
    for (int i = 0; i <= 40; ++i) {
      const double c = *xmin + (*xmax - *xmin) * i / 40.0;
      for (int j = 1; j <= 24; ++j) {
        const double u = 4.0 * kPi * j / 24.0;
        grid.push_back({c, u, chi2_at(scan, s, sig, c, u)});
      }
    }
  } else {
    const double umax = kPi * std::max<std::size_t>(n, 4);
    for (int j = 1; j <= 400; ++j) {
      const double u = umax * j / 400.0;
      grid.push_back({0.0, u, chi2_at(scan, s, sig, 0.0, u)});
    }
  }
  std::sort(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.chi2 < b.chi2; });

  RabiCandidate best;
  for (std::size_t k = 0; k < std::min<std::size_t>(4, grid.size()); ++k) {
    const RabiCandidate c = refine(scan, s, sig, grid[k], nullptr);
    if (c.chi2 < best.chi2) best = c;
  }

  // One reweighting pass with model-based binomial errors.
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = binomial_sigma(std::clamp(model_at(scan, s, best.c, best.u, i), 0.0, 1.0), s.shots[i]);
  }
  std::vector<double> cov;
  best = refine(scan, s, sig, best, &cov);
  const std::size_t expected = scan.kind == RabiScanKind::Frequency ? 2 : 1;
  if (cov.size() != expected || !std::all_of(cov.begin(), cov.end(), [](double v) { return std::isfinite(v) && v >= 0.0; })) {
    throw NotIdentifiableError("Rabi fit covariance is singular; parameters not identifiable from this scan");
  }

  RabiFit fit;
  fit.omega_rabi = best.u / s.scale;
  fit.sigma_omega_rabi = std::sqrt(cov[0]) / s.scale;
  if (scan.kind == RabiScanKind::Frequency) {
    fit.omega0 = s.mid + best.c / s.scale;
    fit.sigma_omega0 = std::sqrt(cov[1]) / s.scale;
  } else {
    fit.omega0 = std::numeric_limits<double>::quiet_NaN();
  }
  fit.chi2 = best.chi2;
  fit.dof = static_cast<int>(n) - static_cast<int>(expected);
  return fit;
}

// ---- gradients ----

GradientFit fit_gradient(const std::vector<GradientPoint>& points) {
  const std::size_t n = points.size();
  if (n < 3) {
    throw NotIdentifiableError("gradient fit needs at least 3 points");
  }
  GradientFit fit;
  for (const auto& p : points) {
    if (!(p.sigma > 0.0)) throw std::invalid_argument("gradient point sigma must be > 0");
    fit.centroid += p.position;
  }
  fit.centroid /= static_cast<double>(n);

  std::vector<int> axes;
  for (int a = 0; a < 3; ++a) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : points) {
      lo = std::min(lo, p.position(a));
      hi = std::max(hi, p.position(a));
    }
    if (hi - lo > 1e-12) {
      axes.push_back(a);
      fit.fitted[static_cast<std::size_t>(a)] = true;
    }
  }
  if (axes.empty()) {
    throw NotIdentifiableError("all points share one position; no gradient to fit");
  }
  const auto cols = static_cast<Eigen::Index>(axes.size() + 1);
  if (static_cast<Eigen::Index>(n) <= cols) {
    throw NotIdentifiableError("gradient fit needs more points than parameters");
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), cols);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double w = 1.0 / points[i].sigma;
    x(row, 0) = w;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      // Micrometre columns keep the normal matrix well scaled.
      x(row, static_cast<Eigen::Index>(k + 1)) = w * (points[i].position(axes[k]) - fit.centroid(axes[k])) * 1e6;
    }
    y(row) = w * points[i].value;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) {
    throw NotIdentifiableError("gradient fit design is collinear (positions vary along a single line "
                               "shared by several axes)");
  }
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::MatrixXd cov = (x.transpose() * x).inverse();

  fit.offset = beta(0);
  fit.sigma_offset = std::sqrt(cov(0, 0));
  fit.covariance = cov;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k + 1);
    fit.slope(axes[k]) = beta(c) * 1e6;
    fit.sigma_slope(axes[k]) = std::sqrt(cov(c, c)) * 1e6;
    // Report covariance in per-metre units.
    fit.covariance.row(c) *= 1e6;
    fit.covariance.col(c) *= 1e6;
  }
  const Eigen::VectorXd r = x * beta - y;
  fit.residuals.assign(r.data(), r.data() + r.size());
  fit.chi2 = r.squaredNorm();
  fit.dof = static_cast<int>(n) - static_cast<int>(cols);
  return fit;
}

double default_spin_sensitivity() { return kElectronG * kBohrMagneton / kHbar; }

double delta_b_from_delta_omega(double delta_omega, double sensitivity) {
  if (sensitivity == 0.0 || !std::isfinite(sensitivity)) {
    throw std::invalid_argument("magnetic sensitivity must be finite and nonzero");
  }
  return delta_omega / sensitivity;
}

}  // namespace penning
