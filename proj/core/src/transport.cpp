#include "penning/transport.hpp"

#include "penning/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace penning {
namespace {

constexpr int kHessianRows = 6;
constexpr int kRows = 3 + kHessianRows;

// (row, col) of the six independent Hessian entries: xx, yy, zz, xy, xz, yz.
constexpr int kHessianIndex[kHessianRows][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};

Eigen::MatrixXd design_matrix(const TrapModel& trap, const Vec3& r, double hessian_length) {
  Eigen::MatrixXd a(kRows, static_cast<Eigen::Index>(trap.size()));
  for (std::size_t i = 0; i < trap.size(); ++i) {
    const PotentialSample p = basis_potential(trap.electrodes()[i], r);
    const auto col = static_cast<Eigen::Index>(i);
    a.block<3, 1>(0, col) = p.gradient;
    for (int k = 0; k < kHessianRows; ++k) {
      a(3 + k, col) = hessian_length * p.hessian(kHessianIndex[k][0], kHessianIndex[k][1]);
    }
  }
  return a;
}

Eigen::VectorXd target_vector(const PotentialTarget& target) {
  Eigen::VectorXd b(kRows);
  b.head<3>() = target.gradient;
  for (int k = 0; k < kHessianRows; ++k) {
    b(3 + k) = target.hessian_length * target.hessian(kHessianIndex[k][0], kHessianIndex[k][1]);
  }
  return b;
}

// min |A_F x_F - rhs|^2 + lambda |x_F|^2, minimum norm when underdetermined.
Eigen::VectorXd solve_free(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs, double lambda,
                           const std::vector<Eigen::Index>& free) {
  const auto m = a.rows();
  const auto nf = static_cast<Eigen::Index>(free.size());
  const Eigen::Index extra = lambda > 0.0 ? nf : 0;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(m + extra, nf);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m + extra);
  for (Eigen::Index j = 0; j < nf; ++j) {
    aug.col(j).head(m) = a.col(free[static_cast<std::size_t>(j)]);
  }
  b.head(m) = rhs;
  if (extra > 0) {
    aug.bottomRows(extra).diagonal().setConstant(std::sqrt(lambda));
  }
  return aug.completeOrthogonalDecomposition().solve(b);
}

}  // namespace

double VoltageSolution::voltage(const std::string& id) const {
  for (std::size_t i = 0; i < electrode_ids.size(); ++i) {
    if (electrode_ids[i] == id) return voltages(static_cast<Eigen::Index>(i));
  }
  throw std::out_of_range("no voltage for electrode '" + id + "'");
}

PotentialTarget cylindrical_target(const IonSpecies& species, const Vec3& r0, double omega_z) {
  species.validate();
  PotentialTarget t;
  t.position = r0;
  const double k = species.mass * omega_z * omega_z / species.charge_coulomb();
  t.hessian = Vec3(-0.5 * k, -0.5 * k, k).asDiagonal();
  return t;
}

PotentialTarget field_target(const Vec3& r0, const Vec3& field) {
  PotentialTarget t;
  t.position = r0;
  t.gradient = -field;
  return t;
}

PotentialSample evaluate_voltages(const TrapModel& trap, const Eigen::VectorXd& voltages, const Vec3& r) {
  if (voltages.size() != static_cast<Eigen::Index>(trap.size())) {
    throw std::invalid_argument("voltage vector size does not match the electrode count");
  }
  PotentialSample sum;
  for (std::size_t i = 0; i < trap.size(); ++i) {
    const double v = voltages(static_cast<Eigen::Index>(i));
    if (v == 0.0) continue;
    const PotentialSample p = basis_potential(trap.electrodes()[i], r);
    sum.value += v * p.value;
    sum.gradient += v * p.gradient;
    sum.hessian += v * p.hessian;
  }
  return sum;
}

VoltageSolution solve_potential(const TrapModel& trap, const PotentialTarget& target) {
  if (!(target.position.y() > 0.0)) {
    throw std::invalid_argument("target position must lie above the electrode plane");
  }
  if (!(target.max_voltage > 0.0)) {
    throw std::invalid_argument("max_voltage must be positive");
  }
  if (target.regularization < 0.0) {
    throw std::invalid_argument("regularization must be >= 0");
  }
  const Eigen::MatrixXd a = design_matrix(trap, target.position, target.hessian_length);
  const Eigen::VectorXd b = target_vector(target);
  const Eigen::Index n = a.cols();
  const double vmax = target.max_voltage;
  const double lambda = target.regularization;

  // Active-set bounded least squares: walk from a feasible point towards the
  // free-set optimum, pinning variables that hit a bound, and release pinned
  // variables whose multiplier has the wrong sign.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<int> pinned(static_cast<std::size_t>(n), 0);  // -1 lower, +1 upper, 0 free
  const int max_iterations = static_cast<int>(10 * n + 20);
  for (int iter = 0; iter < max_iterations; ++iter) {
    std::vector<Eigen::Index> free;
    Eigen::VectorXd rhs = b;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (pinned[static_cast<std::size_t>(i)] == 0) {
        free.push_back(i);
      } else {
        rhs -= a.col(i) * x(i);
      }
    }
    Eigen::VectorXd z = x;
    if (!free.empty()) {
      const Eigen::VectorXd zf = solve_free(a, rhs, lambda, free);
      for (std::size_t j = 0; j < free.size(); ++j) z(free[j]) = zf(static_cast<Eigen::Index>(j));
    }

    bool inside = true;
    for (Eigen::Index i : free) {
      if (std::abs(z(i)) > vmax * (1.0 + 1e-12)) inside = false;
    }
    if (inside) {
      x = z;
      const Eigen::VectorXd grad = a.transpose() * (a * x - b) + lambda * x;
      Eigen::Index worst = -1;
      double worst_violation = 1e-12 * (1.0 + grad.cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < n; ++i) {
        const int side = pinned[static_cast<std::size_t>(i)];
        const double violation = side * grad(i);  // > 0 means moving inward lowers the cost
        if (side != 0 && violation > worst_violation) {
          worst_violation = violation;
          worst = i;
        }
      }
      if (worst < 0) break;
      pinned[static_cast<std::size_t>(worst)] = 0;
      continue;
    }

    double alpha = 1.0;
    for (Eigen::Index i : free) {
      if (std::abs(z(i)) > vmax) {
        const double bound = std::copysign(vmax, z(i));
        alpha = std::min(alpha, (bound - x(i)) / (z(i) - x(i)));
      }
    }
    alpha = std::clamp(alpha, 0.0, 1.0);
    for (Eigen::Index i : free) {
      x(i) += alpha * (z(i) - x(i));
      if (std::abs(x(i)) >= vmax * (1.0 - 1e-12)) {
        x(i) = std::copysign(vmax, x(i));
        pinned[static_cast<std::size_t>(i)] = x(i) > 0.0 ? 1 : -1;
      }
    }
  }

  VoltageSolution sol;
  for (const auto& e : trap.electrodes()) sol.electrode_ids.push_back(e.id);
  sol.voltages = x;
  sol.bounds_active = std::any_of(pinned.begin(), pinned.end(), [](int s) { return s != 0; });

  const PotentialSample realized = evaluate_voltages(trap, x, target.position);
  sol.gradient_error = realized.gradient - target.gradient;
  sol.hessian_error = realized.hessian - target.hessian;

  double sum_sq = 0.0;
  int count = 0;
  const double h = 5e-6;
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) {
      for (int k = -1; k <= 1; ++k) {
        const Vec3 d(i * h, j * h, k * h);
        const Vec3 r = target.position + d;
        if (!(r.y() > 0.0)) continue;
        const double want = realized.value + target.gradient.dot(d) + 0.5 * d.dot(target.hessian * d);
        const double diff = evaluate_voltages(trap, x, r).value - want;
        sum_sq += diff * diff;
        ++count;
      }
    }
  }
  sol.residual = count > 0 ? std::sqrt(sum_sq / count) : 0.0;

  const double target_norm = target.hessian.norm();
  const bool gradient_ok = sol.gradient_error.norm() <= target.gradient_tolerance;
  const bool hessian_ok =
      target_norm > 0.0 ? sol.hessian_error.norm() <= target.hessian_tolerance * target_norm
                        : sol.hessian_error.norm() * target.hessian_length <= target.gradient_tolerance;
  sol.feasible = gradient_ok && hessian_ok;
  return sol;
}

Vec3 find_equilibrium(const TrapModel& trap, const Eigen::VectorXd& voltages, const Vec3& guess,
                      const Vec3& extra_field) {
  Vec3 r = guess;
  for (int iter = 0; iter < 100; ++iter) {
    const PotentialSample p = evaluate_voltages(trap, voltages, r);
    const Vec3 step = p.hessian.fullPivLu().solve(p.gradient - extra_field);
    if (!step.allFinite()) {
      throw std::runtime_error("equilibrium search hit a singular Hessian");
    }
    r -= step;
    if (!(r.y() > 0.0)) {
      throw std::runtime_error("equilibrium search left the region above the electrodes");
    }
    if (step.norm() < 1e-13) return r;
  }
  throw std::runtime_error("equilibrium search did not converge");
}

double path_length(const std::vector<Vec3>& path) {
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) total += (path[i] - path[i - 1]).norm();
  return total;
}

Eigen::VectorXd Waveform::voltages_at(double t) const {
  if (voltages.empty()) {
    throw std::logic_error("empty waveform");
  }
  if (t <= times.front() || voltages.size() == 1) return voltages.front();
  if (t >= times.back()) return voltages.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - times.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  return (1.0 - w) * voltages[lo] + w * voltages[hi];
}

Waveform make_waveform(const TrapModel& trap, const WaveformRequest& request) {
  if (request.path.empty()) {
    throw std::invalid_argument("transport path is empty");
  }
  if (!(request.step > 0.0) || request.step > 1e-6 * (1.0 + 1e-12)) {
    throw std::invalid_argument("transport step must lie in (0, 1 um]");
  }
  if (!(request.speed > 0.0)) {
    throw std::invalid_argument("transport speed must be positive");
  }
  if (!(request.budget.max_lag > 0.0)) {
    throw std::invalid_argument("filter budget must be positive");
  }

  Waveform wf;
  for (const auto& e : trap.electrodes()) wf.electrode_ids.push_back(e.id);

  wf.positions.push_back(request.path.front());
  for (std::size_t s = 1; s < request.path.size(); ++s) {
    const Vec3 from = request.path[s - 1];
    const Vec3 delta = request.path[s] - from;
    const double len = delta.norm();
    if (len == 0.0) continue;
    const int n = std::max(1, static_cast<int>(std::ceil(len / request.step - 1e-9)));
    for (int k = 1; k <= n; ++k) wf.positions.push_back(from + delta * (static_cast<double>(k) / n));
  }

  double arc = 0.0;
  for (std::size_t k = 0; k < wf.positions.size(); ++k) {
    if (k > 0) arc += (wf.positions[k] - wf.positions[k - 1]).norm();
    wf.times.push_back(arc / request.speed);

    PotentialTarget target = cylindrical_target(trap.species(), wf.positions[k], request.omega_z);
    target.max_voltage = request.max_voltage;
    target.regularization = request.regularization;
    const VoltageSolution sol = solve_potential(trap, target);
    if (!sol.feasible) {
      throw std::runtime_error("no feasible trapping potential at waveform sample " + std::to_string(k));
    }
    wf.voltages.push_back(sol.voltages);
  }
  wf.duration = wf.times.back();

  for (std::size_t k = 1; k < wf.size(); ++k) {
    const double dt = wf.times[k] - wf.times[k - 1];
    for (std::size_t i = 0; i < trap.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      const double rate = std::abs(wf.voltages[k](idx) - wf.voltages[k - 1](idx)) / dt;
      const double lag = trap.filter_of(i).time_constant() * rate;
      if (lag > request.budget.max_lag) {
        throw FilterBudgetError("electrode '" + wf.electrode_ids[i] + "' would lag by " +
                                    std::to_string(lag) + " V at sample " + std::to_string(k) +
                                    " (budget " + std::to_string(request.budget.max_lag) + " V)",
                                wf.electrode_ids[i], k);
      }
    }
  }
  return wf;
}

}  // namespace penning
