#include "cli.hpp"

#include "commands.hpp"
#include "penning/errors.hpp"
#include "penning/io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace penning::cli {

namespace fs = std::filesystem;

json Context::block(const std::string& name) const {
  if (config.contains(name)) {
    if (!config.at(name).is_object()) throw UsageError("config block '" + name + "' must be an object");
    return config.at(name);
  }
  return json::object();
}

std::string Context::config_path(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? p : (config_dir / path).lexically_normal().string();
}

TrapModel Context::trap() const {
  if (!trap_path.empty()) return io::load_trap_layout(trap_path);
  if (config.contains("trap_layout")) return io::load_trap_layout(config_path(config.at("trap_layout").get<std::string>()));
  return default_trap_model();
}

fs::path Context::file(const std::string& name) const { return out_dir / name; }

namespace {

void write_or_throw(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
}

json table_json(const std::vector<std::string>& columns, const std::vector<std::vector<std::string>>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json obj = json::object();
    for (std::size_t i = 0; i < columns.size(); ++i) {
      double v = 0.0;
      std::istringstream ss(r[i]);
      if (!r[i].empty() && (ss >> v) && ss.eof()) {
        obj[columns[i]] = v;
      } else {
        obj[columns[i]] = r[i];
      }
    }
    arr.push_back(obj);
  }
  return {{"schema", "penning-probe-schema v1"}, {"rows", arr}};
}

}  // namespace

std::string Context::emit_table(const std::string& name, const std::vector<std::string>& columns,
                                const std::vector<std::vector<std::string>>& rows) const {
  if (format == "json") {
    const auto path = file(name + ".json");
    write_or_throw(path, table_json(columns, rows).dump(2) + "\n");
    return path.string();
  }
  std::ostringstream ss;
  io::write_table(ss, columns, rows);
  const auto path = file(name + ".csv");
  write_or_throw(path, ss.str());
  return path.string();
}

void Context::emit_plot(const std::string& name, const std::string& svg, const std::vector<std::string>& columns,
                        const std::vector<std::vector<std::string>>& rows) const {
  write_or_throw(file(name + ".svg"), svg);
  std::ostringstream ss;
  io::write_table(ss, columns, rows);
  write_or_throw(file(name + ".csv"), ss.str());
}

void Context::emit_json(const std::string& name, const json& doc) const {
  write_or_throw(file(name + ".json"), doc.dump(2) + "\n");
}

void Context::emit_text(const std::string& name, const std::string& text) const { write_or_throw(file(name), text); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"penning_probe: stray-field, surface-dipole, noise and magnetic-field analysis for a surface Penning trap",
               "penning_probe"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for all subcommands");

  std::string config_file;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::string format = "csv";
  std::string trap;
  app.add_option("--config", config_file, "RunConfig JSON (per-subcommand blocks, trap_layout, out)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory (created if missing)");
  app.add_option("--seed", seed, "Override the scenario RNG seed");
  app.add_option("--format", format, "Result table format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--trap", trap, "Trap layout JSON (default: bundled layout)")->check(CLI::ExistingFile);

  ModesArgs modes;
  auto* c_modes = app.add_subcommand("modes", "Mode frequencies for a species / field / axial-frequency set");
  c_modes->add_option("--B", modes.field_t, "Magnetic field, T (default 3)");
  c_modes->add_option("--fz", modes.fz_mhz, "Axial frequencies, MHz (default 2.6)")->delimiter(',');
  c_modes->add_option("--mass-u", modes.mass_u, "Ion mass in u (default 9Be+)");
  c_modes->add_option("--charge", modes.charge, "Ion charge in e (default 1)");
  c_modes->add_option("--input", modes.input, "CSV with columns B_T,fz_MHz");
  c_modes->add_option("--validate", modes.validate, "Check a quoted spectrum 'fc,f+,f-,fz' (MHz)");

  StrayArgs stray;
  auto* c_stray = app.add_subcommand("strayfield", "Stray fields from co-located reading pairs, or a live calibration run");
  c_stray->add_option("--readings", stray.readings, "Readings CSV; consecutive rows form (f1, f2) pairs");
  c_stray->add_option("--scenario", stray.scenario, "Scenario JSON: run the iterative calibration against its camera model");
  c_stray->add_option("--f1", stray.f1, "First axial frequency factor (calibration)");
  c_stray->add_option("--f2", stray.f2, "Second axial frequency factor (calibration)");
  c_stray->add_option("--max-iterations", stray.max_iterations, "Calibration iteration cap");

  DipoleArgs dip;
  auto* c_dip = app.add_subcommand("dipoles", "Regularized surface-dipole inversion of field samples");
  c_dip->add_option("--fields", dip.fields, "Field-sample CSV")->required();
  c_dip->add_option("--lambda", dip.lambda, "Regularization weight in (e A/um^2)^-2; < 0 picks the L-curve corner");
  c_dip->add_option("--nx", dip.nx, "Patches along x (default 20)");
  c_dip->add_option("--nz", dip.nz, "Patches along z (default 20)");
  c_dip->add_option("--half-size", dip.half_size_um, "Half side of the square region, um (default 500)");

  NoiseArgs noise;
  auto* c_noise = app.add_subcommand("noisefit", "Distance-scaling noise fits, or frequency scaling and spike search");
  c_noise->add_option("--records", noise.records, "Heating-record CSV (distance scans)");
  c_noise->add_option("--mode", noise.mode, "Mode to fit")->check(CLI::IsMember({"axial", "plus", "minus", "all"}));
  c_noise->add_option("--frequency", noise.frequency, "Heating-record CSV over a frequency grid at fixed position");
  c_noise->add_option("--ref", noise.ref_mhz, "Reference frequency for rescaling, MHz (default 1)");

  MagneticsArgs mag;
  auto* c_mag = app.add_subcommand("magnetics", "Rabi fits and magnetic-gradient planes");
  c_mag->add_option("--scans", mag.scans, "Rabi-scan CSV")->required();
  c_mag->add_option("--sensitivity", mag.sensitivity, "d(omega)/dB in rad/s/T (default g muB/hbar)");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic dataset directory from a scenario");
  c_syn->add_option("--scenario", syn.scenario, "Scenario JSON (default: bundled)");
  c_syn->add_option("--dataset", syn.datasets, "Subset: fields, readings, heating, frequency, spikes, rabi")
      ->delimiter(',')
      ->check(CLI::IsMember({"fields", "readings", "heating", "frequency", "spikes", "rabi"}));

  TransportArgs tr;
  auto* c_tr = app.add_subcommand("transport", "Transport waveform along a path");
  c_tr->add_option("--path", tr.path, "Waypoints 'x,y,z;x,y,z;...' in um")->required();
  c_tr->add_option("--speed", tr.speed, "Transport speed, m/s (default 0.02)");
  c_tr->add_option("--step", tr.step_um, "Maximum step, um (default 1)");
  c_tr->add_option("--fz", tr.fz_mhz, "Axial frequency of the moving well, MHz (default 1)");
  c_tr->add_option("--max-lag", tr.max_lag, "Filter budget: largest tau |dV/dt|, V (default 0.02)");

  app.add_subcommand("layout", "Write the active trap layout as JSON");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kInputError;
  }

  try {
    Context ctx;
    ctx.out = &out;
    ctx.format = format;
    ctx.seed = seed;
    ctx.trap_path = trap;
    if (!config_file.empty()) {
      const std::string text = io::read_text_file(config_file);
      try {
        ctx.config = json::parse(text);
      } catch (const json::parse_error& e) {
        throw SchemaError(config_file + ": " + e.what());
      }
      if (!ctx.config.is_object()) throw SchemaError(config_file + ": config must be a JSON object");
      ctx.config_dir = fs::path(config_file).parent_path();
      if (out_dir == "." && ctx.config.contains("out")) out_dir = ctx.config_path(ctx.config.at("out").get<std::string>());
      if (!seed && ctx.config.contains("seed")) ctx.seed = ctx.config.at("seed").get<std::uint64_t>();
      if (ctx.trap_path.empty() && ctx.config.contains("trap_layout")) {
        ctx.trap_path = ctx.config_path(ctx.config.at("trap_layout").get<std::string>());
      }
    }
    ctx.out_dir = out_dir;
    fs::create_directories(ctx.out_dir);

    if (c_modes->parsed()) return cmd_modes(ctx, modes);
    if (c_stray->parsed()) return cmd_strayfield(ctx, stray);
    if (c_dip->parsed()) return cmd_dipoles(ctx, dip);
    if (c_noise->parsed()) return cmd_noisefit(ctx, noise);
    if (c_mag->parsed()) return cmd_magnetics(ctx, mag);
    if (c_syn->parsed()) return cmd_synth(ctx, syn);
    if (c_tr->parsed()) return cmd_transport(ctx, tr);
    return cmd_layout(ctx);
  } catch (const NotConverged& e) {
    err << "not converged: " << e.what() << "\n";
    return kNotConverged;
  } catch (const NotIdentifiableError& e) {
    err << "not identifiable: " << e.what() << "\n";
    return kNotConverged;
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << "\n";
    return kInputError;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kInputError;
  } catch (const RankDeficientError& e) {
    err << "rank deficient: " << e.what() << " (rank " << e.rank() << " of " << e.unknowns()
        << "); use --lambda > 0\n";
    return kInputError;
  } catch (const FilterBudgetError& e) {
    err << "filter budget: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << "\n";
    return kInputError;
  } catch (const std::domain_error& e) {
    err << "invalid input: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "filesystem error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInvariant;
  }
}

}  // namespace penning::cli
