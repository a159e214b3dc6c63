#include "penning/noise.hpp"

#include "penning/errors.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

namespace penning {

void HeatingRecord::validate() const {
  if (!(distance > 0.0)) throw std::invalid_argument("heating record needs distance > 0");
  if (!(omega > 0.0)) throw std::invalid_argument("heating record needs omega > 0");
  if (!(sigma_rate > 0.0)) throw std::invalid_argument("heating record needs sigma_rate > 0");
  if (!(rate >= 0.0)) throw std::invalid_argument("heating record has a negative or undefined rate");
  if (!position.allFinite()) throw std::invalid_argument("heating record position must be finite");
}

void NoiseModelParams::validate() const {
  if (!(amplitude >= 0.0) || !(sv_corr >= 0.0) || !(n_emi >= 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("noise model parameters must be finite and nonnegative");
  }
}

ModeSpectrum spectrum_for_mode(const TrapModel& trap, Mode mode, double omega) {
  if (!(omega > 0.0)) throw std::invalid_argument("mode frequency must be positive");
  const IonSpecies& sp = trap.species();
  if (mode == Mode::Axial) {
    return mode_frequencies(sp, TrapSettings{trap.magnetic_field(), omega, Vec3::Zero()});
  }
  const double wc = cyclotron_frequency(sp, trap.magnetic_field());
  ModeSpectrum s;
  s.omega_c = wc;
  if (mode == Mode::Plus) {
    if (!(omega >= 0.5 * wc && omega < wc)) {
      throw UnstableTrapError("modified cyclotron frequency must lie in [wc/2, wc)");
    }
    s.omega_plus = omega;
    s.omega_minus = wc - omega;
  } else {
    if (!(omega <= 0.5 * wc)) {
      throw UnstableTrapError("magnetron frequency must not exceed wc/2");
    }
    s.omega_minus = omega;
    s.omega_plus = wc - omega;
  }
  s.omega_z = std::sqrt(2.0 * s.omega_plus * s.omega_minus);
  return s;
}

namespace {

double surface_term(const NoiseModelParams& p, double distance) {
  if (!(distance > 0.0)) throw std::invalid_argument("distance must be positive");
  return p.amplitude * std::pow(distance / kNoisePivot, -p.beta);
}

double johnson_rate(const TrapModel& trap, Mode mode, const ModeSpectrum& s, double omega, const Vec3& r0) {
  const ModeGeometry g = mode_geometry(mode, s, trap.species());
  return heating_rate_from_noise(g, trap.species(), johnson_field_psd(trap, r0, omega));
}

double correlated_rate_per_sv(const TrapModel& trap, Mode mode, const ModeSpectrum& s, double omega,
                              const Vec3& r0) {
  const ModeGeometry g = mode_geometry(mode, s, trap.species());
  return heating_rate_from_noise(g, trap.species(), correlated_field(trap, r0, omega).psd_per_voltage_psd);
}

}  // namespace

RateBreakdown model_radial_rate(const NoiseModelParams& params, const TrapModel& trap, Mode mode,
                                double omega, const Vec3& r0, double distance, bool detached) {
  params.validate();
  if (mode == Mode::Axial) {
    throw std::invalid_argument("radial noise model needs the plus or minus mode");
  }
  const ModeSpectrum s = spectrum_for_mode(trap, mode, omega);
  RateBreakdown b;
  b.surface = surface_term(params, distance);
  if (!detached) {
    b.johnson = johnson_rate(trap, mode, s, omega, r0);
    b.correlated = params.sv_corr * correlated_rate_per_sv(trap, mode, s, omega, r0);
  }
  return b;
}

RateBreakdown model_axial_rate(const NoiseModelParams& params, const TrapModel& trap, double omega_z,
                               const Vec3& r0, double distance, bool detached) {
  params.validate();
  const ModeSpectrum s = spectrum_for_mode(trap, Mode::Axial, omega_z);
  RateBreakdown b;
  b.surface = surface_term(params, distance);
  b.emi = params.n_emi;
  if (!detached) {
    b.johnson = johnson_rate(trap, Mode::Axial, s, omega_z, r0);
  }
  return b;
}

RateBreakdown model_rate(const NoiseModelParams& params, const TrapModel& trap, const HeatingRecord& r) {
  if (r.mode == Mode::Axial) {
    return model_axial_rate(params, trap, r.omega, r.position, r.distance, r.detached);
  }
  return model_radial_rate(params, trap, r.mode, r.omega, r.position, r.distance, r.detached);
}

double emi_rate_from_psd(const TrapModel& trap, double omega_z, double field_psd) {
  if (field_psd < 0.0) throw std::invalid_argument("EMI field PSD must be >= 0");
  const ModeSpectrum s = spectrum_for_mode(trap, Mode::Axial, omega_z);
  return rate_per_psd(Mode::Axial, s, trap.species()) * field_psd;
}

namespace {

// rate_i = fixed_i + A (d_i/pivot)^-beta + T h_i, all divided by sigma_i.
struct RecordResidual {
  double fixed;
  double scaled_distance;
  double h;
  double rate;
  double inv_sigma;

  template <typename T>
  bool operator()(const T* const a, const T* const beta, const T* const third, T* r) const {
    const T surface = a[0] * exp(-beta[0] * log(scaled_distance));
    r[0] = (T(fixed) + surface + third[0] * T(h) - T(rate)) * T(inv_sigma);
    return true;
  }
};

struct Prepared {
  std::vector<double> fixed;  // Johnson
  std::vector<double> sd;     // d / pivot
  std::vector<double> h;      // rate per unit third parameter
  std::vector<double> rate;
  std::vector<double> inv_sigma;

  double chi2(double a, double beta, double t) const {
    double c = 0.0;
    for (std::size_t i = 0; i < rate.size(); ++i) {
      const double r = (fixed[i] + a * std::pow(sd[i], -beta) + t * h[i] - rate[i]) * inv_sigma[i];
      c += r * r;
    }
    return c;
  }
};

// Nonnegative weighted least squares in (A, T) for a fixed beta: two unknowns, so the
// active set is enumerated directly.
std::pair<double, double> linear_start(const Prepared& p, double beta) {
  double saa = 0.0, sat = 0.0, stt = 0.0, say = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < p.rate.size(); ++i) {
    const double w = p.inv_sigma[i] * p.inv_sigma[i];
    const double xa = std::pow(p.sd[i], -beta);
    const double xt = p.h[i];
    const double y = p.rate[i] - p.fixed[i];
    saa += w * xa * xa;
    sat += w * xa * xt;
    stt += w * xt * xt;
    say += w * xa * y;
    sty += w * xt * y;
  }
  std::vector<std::pair<double, double>> cands{{0.0, 0.0}};
  if (saa > 0.0) cands.emplace_back(std::max(0.0, say / saa), 0.0);
  if (stt > 0.0) cands.emplace_back(0.0, std::max(0.0, sty / stt));
  const double det = saa * stt - sat * sat;
  if (det > 1e-12 * saa * stt) {
    const double a = (say * stt - sty * sat) / det;
    const double t = (sty * saa - say * sat) / det;
    if (a >= 0.0 && t >= 0.0) cands.emplace_back(a, t);
  }
  auto best = cands.front();
  double best_chi2 = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) {
    const double v = p.chi2(c.first, beta, c.second);
    if (v < best_chi2) {
      best_chi2 = v;
      best = c;
    }
  }
  return best;
}

}  // namespace

DistanceFit fit_distance_scaling(const std::vector<HeatingRecord>& records, NoiseModelKind kind,
                                 const TrapModel& trap, const DistanceFitOptions& options) {
  if (records.empty()) throw std::invalid_argument("distance fit needs records");
  const Mode mode = records.front().mode;
  std::set<double> distances;
  for (const auto& r : records) {
    r.validate();
    if (r.mode != mode) throw std::invalid_argument("distance fit records must share one mode");
    distances.insert(r.distance);
  }
  if (kind == NoiseModelKind::Axial && mode != Mode::Axial) {
    throw std::invalid_argument("axial noise model needs axial records");
  }
  if (kind == NoiseModelKind::Radial && mode == Mode::Axial) {
    throw std::invalid_argument("radial noise model needs plus or minus records");
  }
  if (distances.size() < 4) {
    throw std::invalid_argument("distance fit needs at least 4 distinct distances");
  }
  if (options.beta_starts.empty() || !(options.beta_min < options.beta_max)) {
    throw std::invalid_argument("invalid beta search options");
  }

  // Parameter scaling: S_V in units of 1e-18 V^2/Hz.
  const double sv_unit = 1e-18;
  Prepared p;
  for (const auto& r : records) {
    const ModeSpectrum s = spectrum_for_mode(trap, r.mode, r.omega);
    p.fixed.push_back(r.detached ? 0.0 : johnson_rate(trap, r.mode, s, r.omega, r.position));
    p.sd.push_back(r.distance / kNoisePivot);
    if (kind == NoiseModelKind::Axial) {
      p.h.push_back(1.0);
    } else {
      p.h.push_back(r.detached ? 0.0 : sv_unit * correlated_rate_per_sv(trap, r.mode, s, r.omega, r.position));
    }
    p.rate.push_back(r.rate);
    p.inv_sigma.push_back(1.0 / r.sigma_rate);
  }

  double best_x[3] = {0.0, 4.0, 0.0};
  double best_chi2 = std::numeric_limits<double>::infinity();
  bool best_converged = false;
  for (double beta0 : options.beta_starts) {
    const double b0 = std::clamp(beta0, options.beta_min, options.beta_max);
    const auto [a0, t0] = linear_start(p, b0);
    double a = std::max(a0, 1e-12);
    double beta = b0;
    double t = t0;
    ceres::Problem problem;
    for (std::size_t i = 0; i < p.rate.size(); ++i) {
      problem.AddResidualBlock(new ceres::AutoDiffCostFunction<RecordResidual, 1, 1, 1, 1>(new RecordResidual{
                                   p.fixed[i], p.sd[i], p.h[i], p.rate[i], p.inv_sigma[i]}),
                               nullptr, &a, &beta, &t);
    }
    problem.SetParameterLowerBound(&a, 0, 0.0);
    problem.SetParameterLowerBound(&t, 0, 0.0);
    problem.SetParameterLowerBound(&beta, 0, options.beta_min);
    problem.SetParameterUpperBound(&beta, 0, options.beta_max);
    ceres::Solver::Options so;
    so.linear_solver_type = ceres::DENSE_QR;
    so.max_num_iterations = 500;
    so.function_tolerance = 1e-14;
    so.gradient_tolerance = 1e-14;
    so.parameter_tolerance = 1e-12;
    so.logging_type = ceres::SILENT;
    ceres::Solver::Summary summary;
    ceres::Solve(so, &problem, &summary);
    const double chi2 = 2.0 * summary.final_cost;
    if (chi2 < best_chi2) {
      best_chi2 = chi2;
      best_x[0] = a;
      best_x[1] = beta;
      best_x[2] = t;
      best_converged = summary.termination_type == ceres::CONVERGENCE;
    }
  }

  DistanceFit fit;
  fit.kind = kind;
  fit.params.amplitude = best_x[0];
  fit.params.beta = best_x[1];
  if (kind == NoiseModelKind::Axial) {
    fit.params.n_emi = best_x[2];
  } else {
    fit.params.sv_corr = best_x[2] * sv_unit;
  }
  fit.chi2 = best_chi2;
  fit.dof = static_cast<int>(records.size()) - 3;
  fit.converged = best_converged && std::isfinite(best_chi2);

  // Local covariance from the weighted Jacobian at the optimum.
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(records.size()), 3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double pw = std::pow(p.sd[i], -best_x[1]);
    jac(row, 0) = pw * p.inv_sigma[i];
    jac(row, 1) = -best_x[0] * pw * std::log(p.sd[i]) * p.inv_sigma[i];
    jac(row, 2) = p.h[i] * p.inv_sigma[i];
  }
  const Eigen::Matrix3d normal = jac.transpose() * jac;
  Eigen::Matrix3d cov = normal.completeOrthogonalDecomposition().pseudoInverse();
  if (kind == NoiseModelKind::Radial) {
    cov.row(2) *= sv_unit;
    cov.col(2) *= sv_unit;
  }
  fit.params.covariance = cov;

  for (std::size_t i = 0; i < records.size(); ++i) {
    RateBreakdown b = model_rate(fit.params, trap, records[i]);
    fit.residuals.push_back((b.total() - records[i].rate) / records[i].sigma_rate);
    fit.breakdown.push_back(b);
  }
  return fit;
}

FrequencyScaling fit_frequency_scaling(const std::vector<HeatingRecord>& records, const TrapModel& trap,
                                       double omega_ref) {
  if (!(omega_ref > 0.0)) throw std::invalid_argument("reference frequency must be positive");
  FrequencyScaling out;
  out.omega_ref = omega_ref;
  std::vector<double> xs, ys, ws;
  std::set<double> freqs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!(r.rate > 0.0)) {
      out.rejected.push_back(i);
      continue;
    }
    r.validate();
    const ModeSpectrum s = spectrum_for_mode(trap, r.mode, r.omega);
    const double psd = noise_from_heating_rate(r.mode, s, trap.species(), r.rate);
    xs.push_back(std::log(r.omega / omega_ref));
    ys.push_back(std::log(psd));
    const double rel = r.sigma_rate / r.rate;
    ws.push_back(1.0 / (rel * rel));
    freqs.insert(r.omega);
  }
  if (freqs.size() < 3) {
    throw std::invalid_argument("frequency scaling needs at least 3 distinct frequencies with positive rates");
  }
  // ln S = c0 + c1 x with c1 = -alpha.
  Eigen::Matrix2d n = Eigen::Matrix2d::Zero();
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::Vector2d row(1.0, xs[i]);
    n += ws[i] * row * row.transpose();
    v += ws[i] * ys[i] * row;
  }
  const Eigen::Vector2d c = n.ldlt().solve(v);
  const Eigen::Matrix2d cov = n.inverse();
  out.alpha = -c(1);
  out.amplitude = std::exp(c(0));
  out.sigma_alpha = std::sqrt(cov(1, 1));
  out.covariance << cov(1, 1), -cov(0, 1), -cov(0, 1), cov(0, 0);
  return out;
}

double rescale_noise(double psd, double omega, double alpha, double omega_ref) {
  if (!(omega > 0.0) || !(omega_ref > 0.0)) {
    throw std::invalid_argument("frequencies must be positive");
  }
  return psd * std::pow(omega / omega_ref, alpha);
}

std::vector<Spike> flag_spikes(const std::vector<HeatingRecord>& grid, const SpikeOptions& options) {
  const std::size_t n = grid.size();
  if (n < 8) {
    throw std::invalid_argument("spike search needs at least 8 grid points");
  }
  if (options.window < 3 || options.window % 2 == 0 || !(options.factor > 1.0) || options.min_sigma < 0.0) {
    throw std::invalid_argument("invalid spike search options");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid[i].validate();
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a].omega < grid[b].omega; });

  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(options.window), n);
  std::vector<Spike> spikes;
  for (std::size_t k = 0; k < n; ++k) {
    // Window of w sorted neighbours, shifted inwards at the ends.
    std::size_t lo = k >= w / 2 ? k - w / 2 : 0;
    lo = std::min(lo, n - w);
    std::vector<double> vals;
    for (std::size_t j = lo; j < lo + w; ++j) vals.push_back(grid[order[j]].rate);
    std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(w / 2), vals.end());
    const double baseline = vals[w / 2];
    const auto& r = grid[order[k]];
    const double excess = r.rate - baseline;
    if (r.rate > options.factor * baseline && excess >= options.min_sigma * r.sigma_rate) {
      spikes.push_back({order[k], r.omega, baseline > 0.0 ? r.rate / baseline : std::numeric_limits<double>::infinity()});
    }
  }
  return spikes;
}

}  // namespace penning
