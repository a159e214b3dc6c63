#include "penning/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace penning {

const NoiseModelParams& ScenarioSpec::noise(Mode mode) const {
  switch (mode) {
    case Mode::Axial:
      return noise_axial;
    case Mode::Plus:
      return noise_plus;
    case Mode::Minus:
      return noise_minus;
  }
  throw std::invalid_argument("unknown mode");
}

double ScenarioSpec::mode_omega(Mode mode) const {
  switch (mode) {
    case Mode::Axial:
      return omega_z;
    case Mode::Plus:
      return omega_plus;
    case Mode::Minus:
      return omega_minus;
  }
  throw std::invalid_argument("unknown mode");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Distinct tags keep the streams of different generators apart.
enum Stream : std::uint64_t { kCamera = 1, kPhonon = 2, kRabi = 3, kHeating = 4, kFrequency = 5, kField = 6 };

std::uint64_t hash_vec(std::uint64_t h, const Vec3& v) {
  for (int i = 0; i < 3; ++i) h = splitmix64(h ^ bits_of(v(i)));
  return h;
}

std::uint64_t hash_range(std::uint64_t h, const std::vector<double>& xs) {
  for (double x : xs) h = splitmix64(h ^ bits_of(x));
  return h;
}

}  // namespace

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

Vec3 scenario_stray_field(const ScenarioSpec& scenario, const Vec3& r) {
  Vec3 e = -scenario.stray_gradient;
  if (scenario.dipoles) e += grid_field(*scenario.dipoles, r).field;
  return e;
}

PositionReading camera_oracle(const ScenarioSpec& scenario, const Vec3& applied_field, double f_ax) {
  if (!(f_ax > 0.0)) throw std::invalid_argument("f_ax must be positive");
  const CameraModel& cam = scenario.camera;
  const ImagingSetup& img = cam.imaging;
  img.validate();

  PositionReading out;
  out.f_ax = f_ax;
  out.applied_field = applied_field;

  // Signed curvature of f^2 phi_app: radial axes are anti-confining.
  const Vec3 k = img.reference_curvature();
  const Vec3 curvature = f_ax * f_ax * Vec3(-k.x(), -k.y(), k.z());
  Vec3 r = scenario.target;
  for (int iter = 0; iter < 50; ++iter) {
    if (!(r.y() > cam.min_height) || (r - scenario.target).norm() > cam.region_radius) break;
    const Vec3 next = scenario.target + (applied_field + scenario_stray_field(scenario, r)).cwiseQuotient(curvature);
    const double step = (next - r).norm();
    r = next;
    if (step < 1e-15) break;
  }
  const Vec3 d = r - scenario.target;
  if (!(r.y() > cam.min_height) || d.norm() > cam.region_radius || !d.allFinite()) {
    out.lost = true;
    return out;
  }

  const double scale = img.magnification / img.pixel_size;  // pixels per metre
  out.px = cam.center_px + std::floor(scale * d.x() + 0.5);
  out.pz = cam.center_pz + std::floor(scale * d.z() + 0.5);
  const double defocus = (d.y() - cam.focus_offset) / cam.rayleigh;
  double width = std::floor(cam.w0_px * std::sqrt(1.0 + defocus * defocus) + 0.5);
  if (cam.width_dither_px > 0) {
    std::mt19937_64 rng(derive_seed(scenario.seed,
                                    {kCamera, bits_of(applied_field.x()), bits_of(applied_field.y()),
                                     bits_of(applied_field.z()), bits_of(f_ax)}));
    std::uniform_int_distribution<int> jitter(-cam.width_dither_px, cam.width_dither_px);
    width += jitter(rng);
  }
  out.width = width;
  return out;
}

PhononSeries phonon_series(const ScenarioSpec& scenario, const TrapModel& trap, Mode mode,
                           const Vec3& position, const std::vector<double>& wait_times, int shots,
                           double initial_phonons) {
  if (shots <= 0) throw std::invalid_argument("phonon series needs shots > 0");
  if (initial_phonons < 0.0) throw std::invalid_argument("initial phonon number must be >= 0");
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < wait_times.size(); ++i) {
    if (wait_times[i] < 0.0) throw std::invalid_argument("wait times must be >= 0");
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) seen = seen || wait_times[j] == wait_times[i];
    if (!seen) ++distinct;
  }
  if (distinct < 2) throw std::invalid_argument("phonon series needs at least two distinct wait times");

  HeatingRecord truth;
  truth.mode = mode;
  truth.position = position;
  truth.distance = position.y();
  truth.omega = scenario.mode_omega(mode);
  const double rate = model_rate(scenario.noise(mode), trap, truth).total();

  PhononSeries out;
  out.true_rate = rate;
  out.wait_times = wait_times;
  std::uint64_t h = derive_seed(scenario.seed, {kPhonon, static_cast<std::uint64_t>(mode),
                                                static_cast<std::uint64_t>(shots)});
  h = hash_vec(h, position);
  h = hash_range(h, wait_times);
  std::mt19937_64 rng(h);
  for (double t : wait_times) {
    const double mean = (initial_phonons + rate * t) * shots;
    std::poisson_distribution<long long> counts(std::max(mean, 1e-300));
    out.mean_phonons.push_back(static_cast<double>(counts(rng)) / shots);
    out.shots.push_back(shots);
  }

  // Weighted line fit, variances n / shots; reweighted once from the fitted line.
  const std::size_t n = wait_times.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::Vector2d coef = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      const double guess = pass == 0 ? out.mean_phonons[i] : coef(0) + coef(1) * wait_times[i];
      const double var = std::max(guess, 0.5 / shots) / shots;
      const double w = 1.0 / std::sqrt(var);
      const auto row = static_cast<Eigen::Index>(i);
      x(row, 0) = w;
      x(row, 1) = w * wait_times[i];
      y(row) = w * out.mean_phonons[i];
    }
    const Eigen::Matrix2d normal = x.transpose() * x;
    coef = normal.ldlt().solve(x.transpose() * y);
    cov = normal.inverse();
  }
  out.record = truth;
  out.record.rate = coef(1);
  out.record.sigma_rate = std::sqrt(cov(1, 1));
  return out;
}

RabiScan rabi_oracle(const ScenarioSpec& scenario, const Vec3& position, RabiScanKind kind,
                     const std::vector<double>& abscissa, double fixed, int shots) {
  const Vec3 d = position - scenario.target;
  const double w0 = scenario.magnetic.omega0 + scenario.magnetic.omega0_gradient.dot(d);
  const double rabi = scenario.magnetic.rabi + scenario.magnetic.rabi_gradient.dot(d);

  RabiScan scan;
  scan.kind = kind;
  scan.fixed = fixed;
  scan.position = position;
  scan.abscissa = abscissa;
  std::uint64_t h = derive_seed(scenario.seed, {kRabi, static_cast<std::uint64_t>(kind), bits_of(fixed),
                                                static_cast<std::uint64_t>(shots)});
  h = hash_vec(h, position);
  h = hash_range(h, abscissa);
  std::mt19937_64 rng(h);
  for (double a : abscissa) {
    const double p = kind == RabiScanKind::Frequency ? rabi_lineshape(rabi, a - w0, fixed)
                                                     : rabi_lineshape(rabi, fixed, a);
    if (shots <= 0) {
      scan.p_up.push_back(p);
      scan.shots.push_back(1000000000);
    } else {
      std::binomial_distribution<int> draw(shots, std::clamp(p, 0.0, 1.0));
      scan.p_up.push_back(static_cast<double>(draw(rng)) / shots);
      scan.shots.push_back(shots);
    }
  }
  return scan;
}

std::vector<HeatingRecord> heating_dataset(const ScenarioSpec& scenario, const TrapModel& trap, Mode mode,
                                           const std::vector<double>& distances, double rel_sigma,
                                           bool detached, const Vec3& lateral) {
  if (!(rel_sigma > 0.0)) throw std::invalid_argument("relative rate uncertainty must be > 0");
  std::uint64_t h = derive_seed(scenario.seed, {kHeating, static_cast<std::uint64_t>(mode), bits_of(rel_sigma),
                                                static_cast<std::uint64_t>(detached)});
  h = hash_vec(h, lateral);
  h = hash_range(h, distances);
  std::mt19937_64 rng(h);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<HeatingRecord> out;
  for (double d : distances) {
    HeatingRecord r;
    r.mode = mode;
    r.position = Vec3(lateral.x(), d, lateral.z());
    r.distance = d;
    r.omega = scenario.mode_omega(mode);
    r.detached = detached;
    const double truth = model_rate(scenario.noise(mode), trap, r).total();
    r.rate = std::max(0.0, truth * (1.0 + rel_sigma * gauss(rng)));
    r.sigma_rate = rel_sigma * truth;
    out.push_back(r);
  }
  return out;
}

std::vector<HeatingRecord> frequency_dataset(const ScenarioSpec& scenario, const TrapModel& trap,
                                             const Vec3& position, const std::vector<double>& omegas,
                                             double psd_ref, double alpha, double omega_ref, double rel_sigma,
                                             Mode mode) {
  if (!(rel_sigma > 0.0) || !(psd_ref > 0.0) || !(omega_ref > 0.0)) {
    throw std::invalid_argument("frequency dataset needs positive psd_ref, omega_ref and rel_sigma");
  }
  std::uint64_t h = derive_seed(scenario.seed, {kFrequency, bits_of(psd_ref), bits_of(alpha), bits_of(omega_ref),
                                                bits_of(rel_sigma), static_cast<std::uint64_t>(mode)});
  h = hash_vec(h, position);
  h = hash_range(h, omegas);
  std::mt19937_64 rng(h);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<HeatingRecord> out;
  for (double w : omegas) {
    const ModeSpectrum s = spectrum_for_mode(trap, mode, w);
    const double truth = rate_per_psd(mode, s, trap.species()) * psd_ref * std::pow(w / omega_ref, -alpha);
    HeatingRecord r;
    r.mode = mode;
    r.position = position;
    r.distance = position.y();
    r.omega = w;
    r.rate = std::max(0.0, truth * (1.0 + rel_sigma * gauss(rng)));
    r.sigma_rate = rel_sigma * truth;
    out.push_back(r);
  }
  return out;
}

std::vector<FieldSample> field_samples(const ScenarioSpec& scenario, const std::vector<Vec3>& positions,
                                       double rel_noise, double sigma_floor) {
  if (rel_noise < 0.0 || !(sigma_floor > 0.0)) {
    throw std::invalid_argument("field noise must be >= 0 with a positive floor");
  }
  if (!scenario.dipoles) throw std::invalid_argument("field samples need a dipole grid");
  std::uint64_t h = derive_seed(scenario.seed, {kField, bits_of(rel_noise), bits_of(sigma_floor)});
  for (const auto& p : positions) h = hash_vec(h, p);
  std::mt19937_64 rng(h);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FieldSample> out;
  for (const auto& p : positions) {
    FieldSample s;
    s.position = p;
    const Vec3 e = grid_field(*scenario.dipoles, p).field;
    const double sigma = std::max(rel_noise * e.norm(), sigma_floor);
    s.sigma = Vec3::Constant(sigma);
    for (int a = 0; a < 3; ++a) s.field(a) = e(a) + (rel_noise > 0.0 ? sigma * gauss(rng) : 0.0);
    out.push_back(s);
  }
  return out;
}

}  // namespace penning

namespace penning {

std::vector<Vec3> field_sample_layout(const std::vector<double>& heights, int nx, int nz, double half_span,
                                      bool stagger) {
  if (nx <= 0 || nz <= 0 || !(half_span > 0.0)) throw std::invalid_argument("sample layout needs nx, nz > 0 and a positive span");
  std::vector<Vec3> out;
  const double n = static_cast<double>(heights.size());
  for (std::size_t k = 0; k < heights.size(); ++k) {
    if (!(heights[k] > 0.0)) throw std::invalid_argument("sample heights must be > 0");
    // Shifting each plane by a fraction of a cell decorrelates the planes' blind spots.
    const double shift = stagger ? static_cast<double>(k) / n - 0.5 * (n - 1.0) / n : 0.0;
    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        const double fx = (ix + 0.5 + shift) / nx;
        const double fz = (iz + 0.5 + shift) / nz;
        out.emplace_back(-half_span + 2.0 * half_span * fx, heights[k], -half_span + 2.0 * half_span * fz);
      }
    }
  }
  return out;
}

}  // namespace penning
