#pragma once

// Shared plumbing for the subcommands: run context, output emission and the error
// types that map onto exit codes.

#include "penning/electrodes.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace penning::cli {

using json = nlohmann::json;

/// Fit or iteration that did not converge; a partial report has been written.
class NotConverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Internal consistency check failed (a bug, not bad input).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad flag values or inconsistent configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::string format = "csv";
  json config = json::object();            // RunConfig document, may be empty
  std::filesystem::path config_dir = ".";  // relative paths in the config resolve here
  std::string trap_path;                   // --trap overrides config "trap_layout"
  std::ostream* out = nullptr;

  std::ostream& log() const { return *out; }
  /// Subcommand block of the config, or an empty object.
  json block(const std::string& name) const;
  /// Resolves a path given in the config file.
  std::string config_path(const std::string& p) const;
  TrapModel trap() const;
  std::filesystem::path file(const std::string& name) const;

  /// Writes a table as <name>.csv or <name>.json according to --format; returns the path.
  std::string emit_table(const std::string& name, const std::vector<std::string>& columns,
                         const std::vector<std::vector<std::string>>& rows) const;
  /// Always CSV: the data behind a plot, next to <name>.svg.
  void emit_plot(const std::string& name, const std::string& svg, const std::vector<std::string>& columns,
                 const std::vector<std::vector<std::string>>& rows) const;
  void emit_json(const std::string& name, const json& doc) const;
  void emit_text(const std::string& name, const std::string& text) const;
};

/// Value from the config block unless the flag was given.
template <typename T>
T pick(const json& block, const char* key, const std::optional<T>& flag, T fallback) {
  if (flag) return *flag;
  if (block.contains(key)) return block.at(key).get<T>();
  return fallback;
}

struct ModesArgs {
  std::optional<double> field_t;
  std::vector<double> fz_mhz;
  std::optional<double> mass_u;
  std::optional<int> charge;
  std::string input;
  std::string validate;  // "fc,f+,f-,fz" in MHz
};
int cmd_modes(const Context& ctx, const ModesArgs& args);

struct StrayArgs {
  std::string readings;
  std::string scenario;
  std::optional<double> f1;
  std::optional<double> f2;
  std::optional<int> max_iterations;
};
int cmd_strayfield(const Context& ctx, const StrayArgs& args);

struct DipoleArgs {
  std::string fields;
  std::optional<double> lambda;
  std::optional<int> nx;
  std::optional<int> nz;
  std::optional<double> half_size_um;
};
int cmd_dipoles(const Context& ctx, const DipoleArgs& args);

struct NoiseArgs {
  std::string records;
  std::string mode = "all";     // axial | plus | minus | all
  std::string frequency;        // axial frequency-scan records instead of distance scans
  std::optional<double> ref_mhz;
};
int cmd_noisefit(const Context& ctx, const NoiseArgs& args);

struct MagneticsArgs {
  std::string scans;
  std::optional<double> sensitivity;  // rad/s per T
};
int cmd_magnetics(const Context& ctx, const MagneticsArgs& args);

struct SynthArgs {
  std::string scenario;
  std::vector<std::string> datasets;  // empty = all
};
int cmd_synth(const Context& ctx, const SynthArgs& args);

struct TransportArgs {
  std::string path;  // "x,y,z;x,y,z" in um
  std::optional<double> speed;  // m/s
  std::optional<double> step_um;
  std::optional<double> fz_mhz;
  std::optional<double> max_lag;
};
int cmd_transport(const Context& ctx, const TransportArgs& args);

int cmd_layout(const Context& ctx);

}  // namespace penning::cli
