#include "commands.hpp"

#include "cli.hpp"

#include "bundled.hpp"
#include "penning/errors.hpp"
#include "penning/io.hpp"
#include "svg_plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace penning::cli {

using constants::kMicro;
using constants::kTwoPi;
using io::format_number;

namespace {

constexpr double kMHz = kTwoPi * 1e6;

std::string num(double v) { return format_number(v); }

// File-name friendly mode label.
const char* mode_word(Mode m) {
  switch (m) {
    case Mode::Axial: return "axial";
    case Mode::Plus: return "plus";
    case Mode::Minus: return "minus";
  }
  return "axial";
}

std::vector<std::string> um3(const Vec3& v) { return {num(v.x() / kMicro), num(v.y() / kMicro), num(v.z() / kMicro)}; }

json vec_json(const Vec3& v, double scale = 1.0) { return json::array({v.x() / scale, v.y() / scale, v.z() / scale}); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

std::vector<double> split_numbers(const std::string& text, char sep) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      throw UsageError("'" + cell + "' is not a number");
    }
    if (cell.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v)) {
      throw UsageError("'" + cell + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

template <typename T>
std::vector<T> read_with(const std::string& path, std::vector<T> (*reader)(std::istream&, const std::string&)) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return reader(in, path);
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw InvariantViolation(what + " is not finite");
}

ImagingSetup imaging_from(const json& block, ImagingSetup s = {}) {
  if (block.contains("pixel_um")) s.pixel_size = block.at("pixel_um").get<double>() * kMicro;
  if (block.contains("magnification")) s.magnification = block.at("magnification").get<double>();
  if (block.contains("wavelength_nm")) s.wavelength = block.at("wavelength_nm").get<double>() * 1e-9;
  if (block.contains("numerical_aperture")) s.numerical_aperture = block.at("numerical_aperture").get<double>();
  if (block.contains("reference_MHz")) s.reference_omega = block.at("reference_MHz").get<double>() * kMHz;
  s.validate();
  return s;
}

struct LoadedScenario {
  ScenarioSpec spec;
  json datasets = json::object();
  std::string source;
};

LoadedScenario load_scenario(const Context& ctx, const std::string& path) {
  LoadedScenario s;
  std::string text;
  if (path.empty()) {
    text = bundled_scenario_json();
    s.source = "<bundled scenario>";
  } else {
    text = io::read_text_file(path);
    s.source = path;
  }
  s.spec = io::parse_scenario(text, s.source);
  const json doc = json::parse(text);
  if (doc.contains("datasets")) s.datasets = doc.at("datasets");
  if (ctx.seed) s.spec.seed = *ctx.seed;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- modes

int cmd_modes(const Context& ctx, const ModesArgs& args) {
  const json cfg = ctx.block("modes");
  IonSpecies species = IonSpecies::beryllium9();
  if (auto m = pick<double>(cfg, "mass_u", args.mass_u, 0.0); m != 0.0) {
    species.mass = m * constants::kAtomicMassUnit;
    species.name = "custom";
  }
  species.charge = pick<int>(cfg, "charge", args.charge, species.charge);
  species.validate();

  std::vector<std::pair<double, double>> points;  // (B, fz MHz)
  if (!args.input.empty()) {
    const auto table = io::read_table_file(args.input, {"B_T", "fz_MHz"});
    if (table.rows.empty()) throw SchemaError(args.input + ": no data rows");
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      double b = 0.0;
      double f = 0.0;
      try {
        b = std::stod(table.rows[i][0]);
        f = std::stod(table.rows[i][1]);
      } catch (const std::exception&) {
        throw SchemaError(fmt::format("{}:{}: expected two numbers", args.input, table.line_numbers[i]));
      }
      points.emplace_back(b, f);
    }
  } else {
    const double b = pick<double>(cfg, "B_T", args.field_t, 3.0);
    std::vector<double> fz = args.fz_mhz;
    if (fz.empty()) fz = cfg.contains("fz_MHz") ? cfg.at("fz_MHz").get<std::vector<double>>() : std::vector<double>{2.6};
    for (double f : fz) points.emplace_back(b, f);
  }

  std::vector<std::vector<std::string>> rows;
  ctx.log() << fmt::format("{:>8} {:>10} {:>12} {:>12} {:>12}\n", "B [T]", "fz [MHz]", "fc [MHz]", "f+ [MHz]", "f- [MHz]");
  for (const auto& [b, fz] : points) {
    TrapSettings settings;
    settings.magnetic_field = b;
    settings.omega_z = fz * kMHz;
    const ModeSpectrum s = mode_frequencies(species, settings);
    if (!validate_spectrum(s).consistent(1e-9)) throw InvariantViolation("computed spectrum violates the ideal-trap relations");
    rows.push_back({num(b), num(fz), num(s.omega_c / kMHz), num(s.omega_plus / kMHz), num(s.omega_minus / kMHz)});
    ctx.log() << fmt::format("{:8.4g} {:10.6g} {:12.6f} {:12.6f} {:12.6f}\n", b, fz, s.omega_c / kMHz, s.omega_plus / kMHz,
                             s.omega_minus / kMHz);
  }
  ctx.emit_table("modes", {"B_T", "fz_MHz", "fc_MHz", "fplus_MHz", "fminus_MHz"}, rows);

  if (!args.validate.empty()) {
    const auto v = split_numbers(args.validate, ',');
    if (v.size() != 4) throw UsageError("--validate needs four frequencies 'fc,f+,f-,fz' in MHz");
    for (double f : v) {
      if (!(f >= 0.0)) throw UsageError("--validate frequencies must be >= 0");
    }
    const ModeSpectrum quoted{v[0] * kMHz, v[1] * kMHz, v[2] * kMHz, v[3] * kMHz};
    const SpectrumCheck c = validate_spectrum(quoted);
    const double khz = kTwoPi * 1e3;
    const double mhz2 = kMHz * kMHz;
    ctx.emit_table("spectrum_check", {"relation", "mismatch", "unit"},
                   {{"f+ + f- - fc", num(c.sum_mismatch / khz), "kHz"},
                    {"f+ f- - fz^2/2", num(c.product_mismatch / mhz2), "MHz^2"},
                    {"f+^2 + f-^2 + fz^2 - fc^2", num(c.quadrature_mismatch / mhz2), "MHz^2"},
                    {"worst relative", num(c.worst_relative), "1"}});
    ctx.log() << fmt::format("quoted spectrum: sum mismatch {:.3f} kHz, product mismatch {:.4g} MHz^2, "
                             "quadrature mismatch {:.4g} MHz^2 -> {}\n",
                             c.sum_mismatch / khz, c.product_mismatch / mhz2, c.quadrature_mismatch / mhz2,
                             c.consistent(1e-6) ? "consistent" : "INCONSISTENT");
  }
  return kOk;
}

// ---------------------------------------------------------------- strayfield

namespace {

std::vector<std::string> stray_row(const StrayFieldResult& r) {
  std::vector<std::string> row;
  for (const Vec3* v : {&r.grad_phi_stray, &r.grad_phi_app, &r.sigma_stray, &r.sigma_app}) {
    for (int a = 0; a < 3; ++a) row.push_back(num((*v)(a)));
  }
  return row;
}

const std::vector<std::string> kStrayCols{"gx_stray", "gy_stray", "gz_stray", "gx_app", "gy_app", "gz_app",
                                          "sgx_stray", "sgy_stray", "sgz_stray", "sgx_app", "sgy_app", "sgz_app"};

json stray_json(const StrayFieldResult& r) {
  return {{"grad_phi_stray_V_per_m", vec_json(r.grad_phi_stray)},
          {"grad_phi_app_V_per_m", vec_json(r.grad_phi_app)},
          {"sigma_stray_V_per_m", vec_json(r.sigma_stray)},
          {"sigma_app_V_per_m", vec_json(r.sigma_app)}};
}

}  // namespace

int cmd_strayfield(const Context& ctx, const StrayArgs& args) {
  const json cfg = ctx.block("strayfield");
  if (args.readings.empty() == args.scenario.empty()) throw UsageError("give exactly one of --readings or --scenario");

  if (!args.readings.empty()) {
    const ImagingSetup setup = imaging_from(cfg.value("imaging", json::object()));
    const auto readings = read_with<PositionReading>(args.readings, io::read_readings);
    if (readings.empty() || readings.size() % 2 != 0) {
      throw SchemaError(args.readings + ": needs a positive, even number of readings (consecutive pairs)");
    }
    std::vector<std::vector<std::string>> rows;
    json pairs = json::array();
    for (std::size_t k = 0; k + 1 < readings.size(); k += 2) {
      StrayFieldResult r;
      try {
        r = extract_stray_field(readings[k], readings[k + 1], setup);
      } catch (const std::invalid_argument& e) {
        throw SchemaError(fmt::format("{}: pair {} (data rows {}, {}): {}", args.readings, k / 2, k + 1, k + 2, e.what()));
      }
      auto row = std::vector<std::string>{std::to_string(k / 2), num(readings[k].f_ax), num(readings[k + 1].f_ax)};
      for (auto& c : stray_row(r)) row.push_back(c);
      rows.push_back(std::move(row));
      json p = stray_json(r);
      p["pair"] = k / 2;
      pairs.push_back(p);
      ctx.log() << fmt::format("pair {}: grad phi_stray = ({:.2f}, {:.2f}, {:.2f}) V/m, |grad phi_app| = {:.3g} V/m\n",
                               k / 2, r.grad_phi_stray.x(), r.grad_phi_stray.y(), r.grad_phi_stray.z(),
                               r.grad_phi_app.norm());
    }
    std::vector<std::string> cols{"pair", "f1", "f2"};
    cols.insert(cols.end(), kStrayCols.begin(), kStrayCols.end());
    ctx.emit_table("strayfield", cols, rows);
    ctx.emit_json("strayfield", {{"schema", "penning-probe-schema v1"}, {"pairs", pairs}});
    return kOk;
  }

  const LoadedScenario sc = load_scenario(ctx, args.scenario);
  CalibrationOptions opt;
  opt.f1 = pick<double>(cfg, "f1", args.f1, opt.f1);
  opt.f2 = pick<double>(cfg, "f2", args.f2, opt.f2);
  opt.max_iterations = pick<int>(cfg, "max_iterations", args.max_iterations, opt.max_iterations);
  const ImagingSetup setup = sc.spec.camera.imaging;
  const ScenarioSpec spec = sc.spec;
  const CameraOracle oracle = [&spec](const Vec3& e, double f) { return camera_oracle(spec, e, f); };
  const CalibrationResult res = iterate_calibration(oracle, setup, opt);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < res.trace.size(); ++i) {
    const auto& st = res.trace[i];
    std::vector<std::string> row{std::to_string(i + 1)};
    for (int a = 0; a < 3; ++a) row.push_back(num(st.e1(a)));
    for (int a = 0; a < 3; ++a) row.push_back(num(st.e2(a)));
    for (auto& c : stray_row(st.result)) row.push_back(c);
    row.push_back(st.within_sensitivity ? "1" : "0");
    rows.push_back(std::move(row));
  }
  std::vector<std::string> cols{"iteration", "E1x", "E1y", "E1z", "E2x", "E2y", "E2z"};
  cols.insert(cols.end(), kStrayCols.begin(), kStrayCols.end());
  cols.push_back("within_sensitivity");
  ctx.emit_table("calibration_trace", cols, rows);

  const Vec3 truth = -scenario_stray_field(spec, spec.target);
  json report = stray_json(res.result);
  report["schema"] = "penning-probe-schema v1";
  report["converged"] = res.converged;
  report["iterations"] = res.iterations;
  report["sensitivity_V_per_m"] = vec_json(setup.sensitivity());
  report["scenario_grad_phi_stray_V_per_m"] = vec_json(truth);
  report["target_um"] = vec_json(spec.target, kMicro);
  ctx.emit_json("strayfield", report);
  ctx.log() << fmt::format("calibration {} after {} iteration(s): grad phi_stray = ({:.2f}, {:.2f}, {:.2f}) V/m "
                           "(scenario ({:.2f}, {:.2f}, {:.2f}))\n",
                           res.converged ? "converged" : "did NOT converge", res.iterations,
                           res.result.grad_phi_stray.x(), res.result.grad_phi_stray.y(), res.result.grad_phi_stray.z(),
                           truth.x(), truth.y(), truth.z());
  if (!res.converged) throw NotConverged("calibration did not reach the sensitivity bound; partial report written");
  return kOk;
}

// ---------------------------------------------------------------- dipoles

int cmd_dipoles(const Context& ctx, const DipoleArgs& args) {
  const json cfg = ctx.block("dipoles");
  const auto samples = read_with<FieldSample>(args.fields, io::read_field_samples);
  if (samples.empty()) throw SchemaError(args.fields + ": no field samples");
  const double half = pick<double>(cfg, "half_size_um", args.half_size_um, 500.0) * kMicro;
  const int nx = pick<int>(cfg, "nx", args.nx, 20);
  const int nz = pick<int>(cfg, "nz", args.nz, 20);
  const DipoleGrid layout = DipoleGrid::zeros(Rect{-half, half, -half, half}, nx, nz);
  InversionOptions opt;
  opt.lambda = pick<double>(cfg, "lambda", args.lambda, opt.lambda);
  const InversionResult res = invert_dipoles(samples, layout, opt);

  check_finite(res.grid.background, "background density");
  for (double d : res.grid.densities) check_finite(d, "patch density");

  std::ostringstream grid_csv;
  io::write_dipole_grid(grid_csv, res.grid, res.density_sigma);
  ctx.emit_text("dipoles.csv", grid_csv.str());

  json residuals = json::array();
  for (const auto& r : res.residuals) residuals.push_back(vec_json(r));
  const double bg = to_e_angstrom_per_um2(res.grid.background);
  json report{{"schema", "penning-probe-schema v1"},
              {"region_um", {-half / kMicro, half / kMicro, -half / kMicro, half / kMicro}},
              {"nx", nx},
              {"nz", nz},
              {"lambda", res.lambda},
              {"lambda_selection", opt.lambda < 0.0 ? "l-curve" : "fixed"},
              {"chi2", res.chi2},
              {"penalty", res.penalty},
              {"observations", res.observations},
              {"unknowns", res.unknowns},
              {"rank", res.rank},
              {"effective_parameters", res.effective_parameters},
              {"underdetermined", res.underdetermined},
              {"background_eA_per_um2", bg},
              {"background_sigma_eA_per_um2", to_e_angstrom_per_um2(res.background_sigma)},
              {"work_function_shift_V", work_function_shift(res.grid.background)},
              {"residuals_normalized", residuals}};
  ctx.emit_json("dipoles", report);

  std::vector<double> map;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < res.grid.size(); ++i) {
    const Rect p = res.grid.patch(i);
    const double d = to_e_angstrom_per_um2(res.grid.densities[i]);
    map.push_back(d);
    rows.push_back({std::to_string(i % static_cast<std::size_t>(nx)), std::to_string(i / static_cast<std::size_t>(nx)),
                    num(p.center_x() / kMicro), num(p.center_z() / kMicro), num(d)});
  }
  plot::Axes ax{"Dipole density relative to background (e A/um^2)", "x (um)", "z (um)"};
  ctx.emit_plot("dipoles_map", plot::heat_map(ax, nx, nz, map, -half / kMicro, half / kMicro, -half / kMicro, half / kMicro),
                {"ix", "iz", "x_um", "z_um", "D_eA_per_um2"}, rows);

  ctx.log() << fmt::format("{} samples, {} unknowns (rank {}{}), lambda = {:.4g}, chi2 = {:.4g}\n"
                           "background D = {:.5g} e A/um^2 -> work-function shift {:.4f} V\n",
                           samples.size(), res.unknowns, res.rank, res.underdetermined ? ", under-determined" : "",
                           res.lambda, res.chi2, bg, work_function_shift(res.grid.background));
  return kOk;
}

// ---------------------------------------------------------------- noisefit

namespace {

double component(const RateBreakdown& b, NoiseModelKind kind) { return kind == NoiseModelKind::Axial ? b.emi : b.correlated; }

void check_breakdown(const RateBreakdown& b) {
  for (double v : {b.johnson, b.surface, b.correlated, b.emi}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvariantViolation("negative or non-finite rate component");
  }
  // total() is the component sum by construction; guard against accidental redefinition.
  if (b.total() != b.johnson + b.surface + b.correlated + b.emi) throw InvariantViolation("breakdown does not sum to total");
}

int noisefit_frequency(const Context& ctx, const NoiseArgs& args, const TrapModel& trap) {
  const json cfg = ctx.block("noisefit");
  const auto records = read_with<HeatingRecord>(args.frequency, io::read_heating_records);
  const double ref = pick<double>(cfg, "ref_MHz", args.ref_mhz, 1.0) * kMHz;
  const FrequencyScaling fs = fit_frequency_scaling(records, trap, ref);
  check_finite(fs.alpha, "alpha");

  json spikes = json::array();
  std::vector<Spike> found;
  if (records.size() >= 8) {
    found = flag_spikes(records);
    for (const auto& s : found) spikes.push_back({{"index", s.index}, {"f_MHz", s.omega / kMHz}, {"ratio", s.ratio}});
  }
  json rejected = json::array();
  for (auto i : fs.rejected) rejected.push_back(i);
  ctx.emit_json("frequency_scaling", {{"schema", "penning-probe-schema v1"},
                                      {"alpha", fs.alpha},
                                      {"sigma_alpha", fs.sigma_alpha},
                                      {"psd_at_ref_V2_per_m2_Hz", fs.amplitude},
                                      {"ref_MHz", ref / kMHz},
                                      {"covariance_alpha_lnS", matrix_json(fs.covariance)},
                                      {"rejected_rows", rejected},
                                      {"spikes", spikes}});

  std::vector<std::vector<std::string>> rows;
  plot::Series data{"S_E (data)", {}, {}, {}, true};
  plot::Series fit{fmt::format("fit, alpha = {:.2f}", fs.alpha), {}, {}, {}};
  plot::Series rescaled{"rescaled to reference", {}, {}, {}, true};
  for (const auto& r : records) {
    if (!(r.rate > 0.0)) continue;
    const ModeSpectrum spec = spectrum_for_mode(trap, r.mode, r.omega);
    const double s = noise_from_heating_rate(r.mode, spec, trap.species(), r.rate);
    const double ss = noise_from_heating_rate(r.mode, spec, trap.species(), r.sigma_rate);
    const double f = r.omega / kMHz;
    const double model = fs.amplitude * std::pow(r.omega / ref, -fs.alpha);
    const double resc = rescale_noise(s, r.omega, fs.alpha, ref);
    data.x.push_back(f);
    data.y.push_back(s);
    data.yerr.push_back(ss);
    fit.x.push_back(f);
    fit.y.push_back(model);
    rescaled.x.push_back(f);
    rescaled.y.push_back(resc);
    rows.push_back({num(f), num(s), num(ss), num(model), num(resc)});
  }
  plot::Axes ax{"Field-noise frequency scaling", "f (MHz)", "S_E (V^2 m^-2 Hz^-1)", true, true};
  ctx.emit_plot("frequency_scaling", plot::line_plot(ax, {data, fit, rescaled}),
                {"f_MHz", "S_E", "sigma_S_E", "fit", "S_E_rescaled"}, rows);
  ctx.log() << fmt::format("alpha = {:.3f} +/- {:.3f}, S_E(ref {:.3g} MHz) = {:.4g} V^2/m^2/Hz, {} spike(s)\n", fs.alpha,
                           fs.sigma_alpha, ref / kMHz, fs.amplitude, found.size());
  for (const auto& s : found) ctx.log() << fmt::format("  spike at {:.4f} MHz, {:.1f}x baseline\n", s.omega / kMHz, s.ratio);
  return kOk;
}

}  // namespace

int cmd_noisefit(const Context& ctx, const NoiseArgs& args) {
  const TrapModel trap = ctx.trap();
  if (args.records.empty() == args.frequency.empty()) throw UsageError("give exactly one of --records or --frequency");
  if (!args.frequency.empty()) return noisefit_frequency(ctx, args, trap);

  const auto records = read_with<HeatingRecord>(args.records, io::read_heating_records);
  std::map<Mode, std::vector<HeatingRecord>> by_mode;
  for (const auto& r : records) by_mode[r.mode].push_back(r);
  std::vector<Mode> modes;
  if (args.mode == "all") {
    for (const auto& [m, recs] : by_mode) modes.push_back(m);
  } else {
    modes.push_back(parse_mode(args.mode));
  }
  if (modes.empty()) throw SchemaError(args.records + ": no heating records");

  json fits = json::object();
  bool all_converged = true;
  for (Mode mode : modes) {
    const auto& recs = by_mode[mode];
    if (recs.empty()) throw SchemaError(fmt::format("{}: no records for mode {}", args.records, to_string(mode)));
    const NoiseModelKind kind = mode == Mode::Axial ? NoiseModelKind::Axial : NoiseModelKind::Radial;
    const DistanceFit fit = fit_distance_scaling(recs, kind, trap);
    for (const auto& b : fit.breakdown) check_breakdown(b);
    all_converged = all_converged && fit.converged;

    const NoiseModelParams& p = fit.params;
    const Eigen::Vector3d sig = p.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    const char* third = kind == NoiseModelKind::Axial ? "n_emi_q_per_s" : "sv_corr_V2_per_Hz";
    const double third_val = kind == NoiseModelKind::Axial ? p.n_emi : p.sv_corr;
    json breakdown = json::array();
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto& b = fit.breakdown[i];
      breakdown.push_back({{"d_um", recs[i].distance / kMicro}, {"rate", recs[i].rate}, {"johnson", b.johnson},
                           {"surface", b.surface}, {"correlated", b.correlated}, {"emi", b.emi}, {"total", b.total()}});
    }
    fits[std::string(to_string(mode))] = {
        {"model", kind == NoiseModelKind::Axial ? "axial: johnson + surface + emi" : "radial: johnson + surface + correlated"},
        {"pivot_um", kNoisePivot / kMicro},
        {"amplitude_q_per_s", p.amplitude},
        {"beta", p.beta},
        {third, third_val},
        {"sigma", {{"amplitude_q_per_s", sig(0)}, {"beta", sig(1)}, {third, sig(2)}}},
        {"covariance", matrix_json(p.covariance)},
        {"chi2", fit.chi2},
        {"dof", fit.dof},
        {"converged", fit.converged},
        {"residuals", fit.residuals},
        {"breakdown", breakdown}};

    // Overlay: data and model components on a dense distance grid.
    double dmin = recs.front().distance;
    double dmax = dmin;
    for (const auto& r : recs) {
      dmin = std::min(dmin, r.distance);
      dmax = std::max(dmax, r.distance);
    }
    const Vec3 lateral(recs.front().position.x(), 0.0, recs.front().position.z());
    const bool detached = recs.front().detached;
    const double omega = recs.front().omega;
    std::vector<std::vector<std::string>> rows;
    plot::Series data{"data", {}, {}, {}, true};
    plot::Series tot{"total", {}, {}, {}};
    plot::Series js{"Johnson", {}, {}, {}, false, true};
    plot::Series sf{"surface", {}, {}, {}, false, true};
    plot::Series te{kind == NoiseModelKind::Axial ? "EMI" : "correlated", {}, {}, {}, false, true};
    for (const auto& r : recs) {
      data.x.push_back(r.distance / kMicro);
      data.y.push_back(r.rate);
      data.yerr.push_back(r.sigma_rate);
      rows.push_back({"data", num(r.distance / kMicro), num(r.rate), num(r.sigma_rate)});
    }
    const int n = 60;
    for (int i = 0; i < n; ++i) {
      const double d = dmin * std::pow(dmax / dmin, static_cast<double>(i) / (n - 1));
      HeatingRecord probe;
      probe.mode = mode;
      probe.position = Vec3(lateral.x(), d, lateral.z());
      probe.distance = d;
      probe.omega = omega;
      probe.detached = detached;
      const RateBreakdown b = model_rate(p, trap, probe);
      check_breakdown(b);
      const double du = d / kMicro;
      for (auto [s, v] : {std::pair{&tot, b.total()}, std::pair{&js, b.johnson}, std::pair{&sf, b.surface},
                          std::pair{&te, component(b, kind)}}) {
        s->x.push_back(du);
        s->y.push_back(v);
        rows.push_back({s->label, num(du), num(v), ""});
      }
    }
    plot::Axes ax{fmt::format("{} mode heating rate vs distance", to_string(mode)), "d (um)", "rate (quanta/s)", true, true};
    ctx.emit_plot(fmt::format("noisefit_{}", mode_word(mode)), plot::line_plot(ax, {data, tot, js, sf, te}),
                  {"series", "d_um", "rate", "sigma"}, rows);
    ctx.log() << fmt::format("{:>6}: beta = {:.3f} +/- {:.3f}, C(100 um) = {:.4g} q/s, {} = {:.4g}, chi2/dof = {:.3g}/{}{}\n",
                             to_string(mode), p.beta, sig(1), p.amplitude, third, third_val, fit.chi2, fit.dof,
                             fit.converged ? "" : "  [NOT CONVERGED]");
  }
  ctx.emit_json("noisefit", {{"schema", "penning-probe-schema v1"}, {"fits", fits}});
  if (!all_converged) throw NotConverged("at least one distance fit did not converge; partial report written");
  return kOk;
}

// ---------------------------------------------------------------- magnetics

int cmd_magnetics(const Context& ctx, const MagneticsArgs& args) {
  const json cfg = ctx.block("magnetics");
  const double sens = pick<double>(cfg, "sensitivity_rad_per_s_T", args.sensitivity, default_spin_sensitivity());
  if (!(sens > 0.0)) throw UsageError("sensitivity must be > 0");
  const auto scans = read_with<RabiScan>(args.scans, io::read_rabi_scans);
  if (scans.empty()) throw SchemaError(args.scans + ": no scans");

  std::vector<std::vector<std::string>> rows;
  std::vector<GradientPoint> centres;
  std::vector<GradientPoint> rabis;
  json fits = json::array();
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const RabiScan& s = scans[k];
    const RabiFit f = fit_rabi(s);
    const bool freq = s.kind == RabiScanKind::Frequency;
    auto row = std::vector<std::string>{fmt::format("s{}", k), freq ? "frequency" : "duration"};
    for (auto& c : um3(s.position)) row.push_back(c);
    row.push_back(freq ? num(f.omega0 / kMHz) : "");
    row.push_back(freq ? num(f.sigma_omega0 / kTwoPi) : "");
    row.push_back(num(f.omega_rabi / (kTwoPi * 1e3)));
    row.push_back(num(f.sigma_omega_rabi / kTwoPi));
    row.push_back(num(f.chi2));
    row.push_back(std::to_string(f.dof));
    rows.push_back(std::move(row));
    json j{{"scan", fmt::format("s{}", k)}, {"kind", freq ? "frequency" : "duration"},
           {"position_um", vec_json(s.position, kMicro)}, {"rabi_kHz", f.omega_rabi / (kTwoPi * 1e3)},
           {"sigma_rabi_Hz", f.sigma_omega_rabi / kTwoPi}, {"chi2", f.chi2}, {"dof", f.dof}};
    if (freq) {
      j["f0_MHz"] = f.omega0 / kMHz;
      j["sigma_f0_Hz"] = f.sigma_omega0 / kTwoPi;
      centres.push_back({s.position, f.omega0, f.sigma_omega0});
    }
    rabis.push_back({s.position, f.omega_rabi, f.sigma_omega_rabi});
    fits.push_back(j);
  }
  ctx.emit_table("rabi_fits", {"scan", "kind", "x_um", "y_um", "z_um", "f0_MHz", "sigma_f0_Hz", "rabi_kHz", "sigma_rabi_Hz", "chi2", "dof"},
                 rows);

  json report{{"schema", "penning-probe-schema v1"}, {"sensitivity_rad_per_s_T", sens}, {"scans", fits}};
  const char* axis_name[3] = {"x", "y", "z"};
  if (centres.size() >= 3) {
    const GradientFit g = fit_gradient(centres);
    // rad/s per m -> T/m -> nT/um (1 T/m = 1e3 nT/um).
    const Vec3 slope = g.slope / sens * 1e3;
    const Vec3 sigma = g.sigma_slope / sens * 1e3;
    json residuals = g.residuals;
    report["b_gradient"] = {{"slope_nT_per_um", vec_json(slope)},
                            {"sigma_nT_per_um", vec_json(sigma)},
                            {"fitted_axes", {g.fitted[0], g.fitted[1], g.fitted[2]}},
                            {"offset_MHz", g.offset / kMHz},
                            {"sigma_offset_Hz", g.sigma_offset / kTwoPi},
                            {"centroid_um", vec_json(g.centroid, kMicro)},
                            {"covariance_rad2_per_s2", matrix_json(g.covariance)},
                            {"residuals", residuals},
                            {"chi2", g.chi2},
                            {"dof", g.dof}};
    // Partial-residual plot per fitted axis: delta B against the coordinate on that axis.
    std::vector<plot::Series> series;
    std::vector<std::vector<std::string>> prow;
    for (int a = 0; a < 3; ++a) {
      if (!g.fitted[static_cast<std::size_t>(a)]) continue;
      plot::Series pts{fmt::format("{} data", axis_name[a]), {}, {}, {}, true};
      plot::Series line{fmt::format("{} fit", axis_name[a]), {}, {}, {}};
      for (const auto& c : centres) {
        const Vec3 dr = c.position - g.centroid;
        double others = 0.0;
        for (int b = 0; b < 3; ++b) {
          if (b != a) others += g.slope(b) * dr(b);
        }
        const double db_nt = (c.value - g.offset - others) / sens * 1e9;
        const double coord = c.position(a) / kMicro;
        pts.x.push_back(coord);
        pts.y.push_back(db_nt);
        pts.yerr.push_back(c.sigma / sens * 1e9);
        line.x.push_back(coord);
        line.y.push_back(g.slope(a) * dr(a) / sens * 1e9);
        prow.push_back({axis_name[a], num(coord), num(db_nt), num(c.sigma / sens * 1e9), num(line.y.back())});
      }
      series.push_back(pts);
      series.push_back(line);
      ctx.log() << fmt::format("dB/d{} = {:.3f} +/- {:.3f} nT/um\n", axis_name[a], slope(a), sigma(a));
    }
    plot::Axes ax{"Magnetic field relative to the fitted plane", "position (um)", "delta B (nT)"};
    ctx.emit_plot("magnetics_gradient", plot::line_plot(ax, series), {"axis", "coord_um", "delta_B_nT", "sigma_nT", "fit_nT"},
                  prow);
  } else {
    ctx.log() << "fewer than 3 frequency scans: no gradient fit\n";
  }
  if (rabis.size() >= 3) {
    try {
      const GradientFit g = fit_gradient(rabis);
      report["rabi_gradient"] = {{"slope_kHz_per_um", vec_json(g.slope / (kTwoPi * 1e3) * kMicro)},
                                 {"sigma_kHz_per_um", vec_json(g.sigma_slope / (kTwoPi * 1e3) * kMicro)},
                                 {"offset_kHz", g.offset / (kTwoPi * 1e3)},
                                 {"chi2", g.chi2},
                                 {"dof", g.dof}};
    } catch (const NotIdentifiableError&) {
      report["rabi_gradient"] = nullptr;
    }
  }
  ctx.emit_json("magnetics", report);
  return kOk;
}

// ---------------------------------------------------------------- synth

namespace {

template <typename T>
T get(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Vec3 um_vec(const json& j, const char* key, Vec3 fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw SchemaError(std::string("datasets: '") + key + "' needs 3 numbers");
  return Vec3(v[0], v[1], v[2]) * kMicro;
}

std::string to_csv(void (*writer)(std::ostream&, const std::vector<HeatingRecord>&), const std::vector<HeatingRecord>& r) {
  std::ostringstream ss;
  writer(ss, r);
  return ss.str();
}

}  // namespace

int cmd_synth(const Context& ctx, const SynthArgs& args) {
  const LoadedScenario sc = load_scenario(ctx, args.scenario);
  const ScenarioSpec& spec = sc.spec;
  const TrapModel trap = ctx.trap();
  const json& ds = sc.datasets;
  auto wanted = [&](const std::string& name) {
    if (!args.datasets.empty()) return std::find(args.datasets.begin(), args.datasets.end(), name) != args.datasets.end();
    return ds.contains(name);
  };

  json normalized = json::parse(io::scenario_json(spec));
  normalized["datasets"] = ds;
  ctx.emit_text("scenario.json", normalized.dump(2) + "\n");
  json truth{{"schema", "penning-probe-schema v1"}, {"seed", spec.seed}};
  std::vector<std::string> written{"scenario.json"};

  if (wanted("fields")) {
    if (!spec.dipoles) throw SchemaError(sc.source + ": the fields dataset needs a 'dipoles' block");
    const json f = ds.value("fields", json::object());
    const auto heights = get<std::vector<double>>(f, "heights_um", {75, 100, 152});
    std::vector<double> h;
    for (double v : heights) h.push_back(v * kMicro);
    const auto pos = field_sample_layout(h, get<int>(f, "nx", 10), get<int>(f, "nz", 8),
                                         get<double>(f, "half_span_um", 500) * kMicro, get<bool>(f, "stagger", true));
    const auto samples = field_samples(spec, pos, get<double>(f, "rel_noise", 0.05), get<double>(f, "sigma_floor_V_per_m", 1e-3));
    std::ostringstream ss;
    io::write_field_samples(ss, samples);
    ctx.emit_text("fields.csv", ss.str());
    written.push_back("fields.csv");
    truth["dipole_background_eA_per_um2"] = to_e_angstrom_per_um2(spec.dipoles->background);
  }

  if (wanted("readings")) {
    const json r = ds.value("readings", json::object());
    std::vector<Vec3> sites;
    for (const auto& s : r.value("sites_um", json::array({json::array({0, 152, 0})}))) {
      const auto v = s.get<std::vector<double>>();
      if (v.size() != 3) throw SchemaError("datasets.readings: sites need 3 numbers");
      sites.emplace_back(v[0] * kMicro, v[1] * kMicro, v[2] * kMicro);
    }
    CalibrationOptions opt;
    opt.f1 = get<double>(r, "f1", opt.f1);
    opt.f2 = get<double>(r, "f2", opt.f2);
    opt.max_iterations = get<int>(r, "max_iterations", opt.max_iterations);
    std::vector<PositionReading> readings;
    json site_truth = json::array();
    for (const Vec3& site : sites) {
      ScenarioSpec local = spec;
      local.target = site;
      const CameraOracle oracle = [&local](const Vec3& e, double fa) { return camera_oracle(local, e, fa); };
      const CalibrationResult res = iterate_calibration(oracle, local.camera.imaging, opt);
      if (res.trace.empty()) throw NotConverged("calibration produced no step at a readings site");
      const auto& last = res.trace.back();
      readings.push_back(camera_oracle(local, last.e1, opt.f1));
      readings.push_back(camera_oracle(local, last.e2, opt.f2));
      site_truth.push_back({{"site_um", vec_json(site, kMicro)},
                            {"grad_phi_stray_V_per_m", vec_json(-scenario_stray_field(local, site))},
                            {"converged", res.converged},
                            {"iterations", res.iterations}});
    }
    std::ostringstream ss;
    io::write_readings(ss, readings);
    ctx.emit_text("readings.csv", ss.str());
    written.push_back("readings.csv");
    truth["readings_sites"] = site_truth;
  }

  if (wanted("heating")) {
    const json h = ds.value("heating", json::object());
    std::vector<double> d;
    for (double v : get<std::vector<double>>(h, "distances_um", {50, 63, 75, 100, 125, 152, 300, 450})) d.push_back(v * kMicro);
    const double rel = get<double>(h, "rel_sigma", 0.1);
    std::vector<HeatingRecord> all;
    json params = json::object();
    for (const auto& name : get<std::vector<std::string>>(h, "modes", {"axial", "plus", "minus"})) {
      const Mode m = parse_mode(name);
      const bool detached = m == Mode::Axial && get<bool>(h, "detached_axial", true);
      const auto recs = heating_dataset(spec, trap, m, d, rel, detached);
      all.insert(all.end(), recs.begin(), recs.end());
      const auto& p = spec.noise(m);
      params[std::string(to_string(m))] = {{"amplitude_q_per_s", p.amplitude}, {"beta", p.beta}, {"sv_corr_V2_per_Hz", p.sv_corr},
                                           {"n_emi_q_per_s", p.n_emi}};
    }
    ctx.emit_text("heating.csv", to_csv(io::write_heating_records, all));
    written.push_back("heating.csv");
    truth["noise"] = params;
  }

  if (wanted("frequency")) {
    const json f = ds.value("frequency", json::object());
    std::vector<double> om;
    for (double v : get<std::vector<double>>(f, "f_MHz", {1.0, 1.5, 2.0, 2.6, 3.2})) om.push_back(v * kMHz);
    const double alpha = get<double>(f, "alpha", 1.7);
    const auto recs = frequency_dataset(spec, trap, um_vec(f, "position_um", spec.target), om,
                                        get<double>(f, "psd_ref_V2_per_m2_Hz", 1e-13), alpha,
                                        get<double>(f, "ref_MHz", 1.0) * kMHz, get<double>(f, "rel_sigma", 0.1));
    ctx.emit_text("frequency.csv", to_csv(io::write_heating_records, recs));
    written.push_back("frequency.csv");
    truth["alpha"] = alpha;
  }

  if (wanted("spikes")) {
    const json s = ds.value("spikes", json::object());
    const int n = get<int>(s, "points", 31);
    const double f0 = get<double>(s, "f_start_MHz", 4.0);
    const double f1 = get<double>(s, "f_stop_MHz", 4.6);
    if (n < 2 || !(f1 > f0)) throw SchemaError("datasets.spikes: needs points >= 2 and f_stop > f_start");
    std::vector<double> om;
    for (int i = 0; i < n; ++i) om.push_back((f0 + (f1 - f0) * i / (n - 1)) * kMHz);
    auto recs = frequency_dataset(spec, trap, um_vec(s, "position_um", spec.target), om,
                                  get<double>(s, "psd_ref_V2_per_m2_Hz", 1e-14), get<double>(s, "alpha", 1.0),
                                  get<double>(s, "ref_MHz", 1.0) * kMHz, get<double>(s, "rel_sigma", 0.1),
                                  parse_mode(get<std::string>(s, "mode", "plus")));
    const double factor = get<double>(s, "spike_factor", 8.0);
    json flagged = json::array();
    for (double fs : get<std::vector<double>>(s, "spike_MHz", {})) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < recs.size(); ++i) {
        if (std::abs(recs[i].omega - fs * kMHz) < std::abs(recs[best].omega - fs * kMHz)) best = i;
      }
      recs[best].rate *= factor;
      flagged.push_back(recs[best].omega / kMHz);
    }
    ctx.emit_text("spikes.csv", to_csv(io::write_heating_records, recs));
    written.push_back("spikes.csv");
    truth["spikes_MHz"] = flagged;
  }

  if (wanted("rabi")) {
    const json r = ds.value("rabi", json::object());
    const Vec3 centre = um_vec(r, "scan_center_um", spec.target);
    std::vector<Vec3> sites;
    for (double z : get<std::vector<double>>(r, "z_um", {-100, -50, 0, 50, 100})) sites.emplace_back(centre.x(), centre.y(), z * kMicro);
    for (double y : get<std::vector<double>>(r, "y_um", {75, 100, 125, 175, 200})) sites.emplace_back(centre.x(), y * kMicro, centre.z());
    if (!(spec.magnetic.rabi > 0.0)) throw SchemaError(sc.source + ": the rabi dataset needs magnetic.rabi_MHz > 0");
    const int points = get<int>(r, "points", 81);
    const double span = get<double>(r, "span_kHz", 40.0) * kTwoPi * 1e3;
    const int shots = get<int>(r, "shots", 200);
    if (points < 5) throw SchemaError("datasets.rabi: needs points >= 5");
    // The scan window is centred on the nominal line; the pulse is a pi pulse at the nominal Rabi rate.
    const double pulse = constants::kPi / spec.magnetic.rabi;
    std::vector<double> grid;
    for (int i = 0; i < points; ++i) grid.push_back(spec.magnetic.omega0 - span + 2.0 * span * i / (points - 1));
    std::vector<RabiScan> scans;
    for (const Vec3& site : sites) scans.push_back(rabi_oracle(spec, site, RabiScanKind::Frequency, grid, pulse, shots));
    std::vector<double> times;
    for (int i = 0; i < points; ++i) times.push_back(3.0 * pulse * (i + 1) / points);
    scans.push_back(rabi_oracle(spec, centre, RabiScanKind::Duration, times, 0.0, shots));
    std::ostringstream ss;
    io::write_rabi_scans(ss, scans);
    ctx.emit_text("rabi.csv", ss.str());
    written.push_back("rabi.csv");
    truth["b_gradient_nT_per_um"] = vec_json(spec.magnetic.omega0_gradient / default_spin_sensitivity() * 1e3);
    truth["f0_MHz"] = spec.magnetic.omega0 / kMHz;
  }

  ctx.emit_json("truth", truth);
  written.push_back("truth.json");
  ctx.log() << fmt::format("synthetic dataset (seed {}) written to {}:", spec.seed, ctx.out_dir.string());
  for (const auto& w : written) ctx.log() << " " << w;
  ctx.log() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- transport

int cmd_transport(const Context& ctx, const TransportArgs& args) {
  const json cfg = ctx.block("transport");
  const TrapModel trap = ctx.trap();
  WaveformRequest req;
  std::stringstream ss(args.path);
  std::string point;
  while (std::getline(ss, point, ';')) {
    const auto v = split_numbers(point, ',');
    if (v.size() != 3) throw UsageError("--path waypoints need three coordinates 'x,y,z' (um)");
    req.path.emplace_back(v[0] * kMicro, v[1] * kMicro, v[2] * kMicro);
  }
  req.speed = pick<double>(cfg, "speed_m_per_s", args.speed, req.speed);
  req.step = pick<double>(cfg, "step_um", args.step_um, req.step / kMicro) * kMicro;
  req.omega_z = pick<double>(cfg, "fz_MHz", args.fz_mhz, req.omega_z / kMHz) * kMHz;
  req.budget.max_lag = pick<double>(cfg, "max_lag_V", args.max_lag, req.budget.max_lag);

  Waveform wf;
  try {
    wf = make_waveform(trap, req);
  } catch (const FilterBudgetError&) {
    throw;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw NotConverged(e.what());
  }

  std::ostringstream csv;
  io::write_waveform(csv, wf, req.speed);
  ctx.emit_text("waveform.csv", csv.str());

  double worst = 0.0;
  double vmax = 0.0;
  for (std::size_t k = 0; k < wf.size(); ++k) {
    Vec3 eq;
    try {
      eq = find_equilibrium(trap, wf.voltages[k], wf.positions[k]);
    } catch (const std::runtime_error& e) {
      throw NotConverged(fmt::format("sample {}: {}", k, e.what()));
    }
    worst = std::max(worst, (eq - wf.positions[k]).norm());
    vmax = std::max(vmax, wf.voltages[k].cwiseAbs().maxCoeff());
  }
  ctx.emit_json("transport", {{"schema", "penning-probe-schema v1"},
                              {"samples", wf.size()},
                              {"duration_ms", wf.duration * 1e3},
                              {"length_um", path_length(req.path) / kMicro},
                              {"speed_m_per_s", req.speed},
                              {"max_equilibrium_deviation_um", worst / kMicro},
                              {"max_abs_voltage_V", vmax},
                              {"interpolation", "linear"}});

  // Voltage plot for the electrodes that actually move.
  std::vector<plot::Series> series;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < wf.electrode_ids.size(); ++i) {
    double lo = wf.voltages.front()(static_cast<Eigen::Index>(i));
    double hi = lo;
    for (const auto& v : wf.voltages) {
      lo = std::min(lo, v(static_cast<Eigen::Index>(i)));
      hi = std::max(hi, v(static_cast<Eigen::Index>(i)));
    }
    if (hi - lo < 1e-3 && series.size() >= 1) continue;
    plot::Series s{wf.electrode_ids[i], {}, {}, {}};
    for (std::size_t k = 0; k < wf.size(); ++k) {
      s.x.push_back(wf.times[k] * 1e6);
      s.y.push_back(wf.voltages[k](static_cast<Eigen::Index>(i)));
      rows.push_back({wf.electrode_ids[i], num(s.x.back()), num(s.y.back())});
    }
    series.push_back(std::move(s));
    if (series.size() >= 7) break;
  }
  plot::Axes ax{"Transport waveform", "t (us)", "V"};
  ctx.emit_plot("waveform_plot", plot::line_plot(ax, series), {"electrode", "t_us", "V"}, rows);
  ctx.log() << fmt::format("{} samples over {:.1f} um at {:.3g} m/s: duration {:.3f} ms, max |V| {:.3f} V, "
                           "max equilibrium deviation {:.3g} um\n",
                           wf.size(), path_length(req.path) / kMicro, req.speed, wf.duration * 1e3, vmax, worst / kMicro);
  return kOk;
}

int cmd_layout(const Context& ctx) {
  ctx.emit_text("trap_layout.json", io::trap_layout_json(ctx.trap()));
  ctx.log() << "wrote " << ctx.file("trap_layout.json").string() << "\n";
  return kOk;
}

}  // namespace penning::cli
