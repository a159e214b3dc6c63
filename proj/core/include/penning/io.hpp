#pragma once

// File formats. Every data file starts with the line
//   # penning-probe-schema v1
// followed by optional "# key=value" metadata lines, one header row and data rows.
// Units at the file boundary: um, MHz (cycles), us, V/m; SI inside the library.
//
//   fields     x_um,y_um,z_um,Ex,Ey,Ez,sEx,sEy,sEz
//   readings   f_ax,Ex,Ey,Ez,px,pz,width,lost
//   rabi       scan,kind,x_um,y_um,z_um,fixed,abscissa,p_up,shots
//              kind=frequency: fixed = pulse length [us], abscissa = drive frequency [MHz]
//              kind=duration:  fixed = detuning [MHz],   abscissa = pulse length [us]
//   heating    mode,x_um,y_um,z_um,d_um,f_MHz,rate,sigma,detached
//   waveform   sample,t_us,x_um,y_um,z_um,<one column per electrode id, V>
//   dipoles    index,ix,iz,x_um,z_um,D_eA_per_um2,sigma_eA_per_um2
//
// Trap layouts and synthetic scenarios are JSON documents (see data/).

#include "penning/noise.hpp"
#include "penning/sensing.hpp"
#include "penning/surfacecharge.hpp"
#include "penning/synth.hpp"
#include "penning/transport.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace penning::io {

inline constexpr const char* kSchemaLine = "# penning-probe-schema v1";

/// Shortest round-trip decimal form; stable across runs.
std::string format_number(double v);

struct CsvTable {
  std::map<std::string, std::string> metadata;  // from "# key=value" lines
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // source line of each row, 1-based

  std::size_t column(const std::string& name) const;  // throws SchemaError
};

/// Parses and checks the schema line and the exact column list. Throws SchemaError
/// listing every offending row.
CsvTable read_table(std::istream& in, const std::vector<std::string>& expected_columns,
                    const std::string& source = "<input>", bool allow_extra_columns = false);
CsvTable read_table_file(const std::string& path, const std::vector<std::string>& expected_columns,
                         bool allow_extra_columns = false);

void write_table(std::ostream& out, const std::vector<std::string>& columns,
                 const std::vector<std::vector<std::string>>& rows,
                 const std::map<std::string, std::string>& metadata = {});

// Typed readers and writers.
std::vector<FieldSample> read_field_samples(std::istream& in, const std::string& source = "<input>");
void write_field_samples(std::ostream& out, const std::vector<FieldSample>& samples);

std::vector<PositionReading> read_readings(std::istream& in, const std::string& source = "<input>");
void write_readings(std::ostream& out, const std::vector<PositionReading>& readings);

std::vector<RabiScan> read_rabi_scans(std::istream& in, const std::string& source = "<input>");
void write_rabi_scans(std::ostream& out, const std::vector<RabiScan>& scans);

std::vector<HeatingRecord> read_heating_records(std::istream& in, const std::string& source = "<input>");
void write_heating_records(std::ostream& out, const std::vector<HeatingRecord>& records);

void write_waveform(std::ostream& out, const Waveform& waveform, double speed);
void write_dipole_grid(std::ostream& out, const DipoleGrid& grid, const std::vector<double>& sigma = {});

// JSON documents.
TrapModel load_trap_layout(const std::string& path);
TrapModel parse_trap_layout(const std::string& text, const std::string& source = "<input>");
std::string trap_layout_json(const TrapModel& trap);

ScenarioSpec load_scenario(const std::string& path);
ScenarioSpec parse_scenario(const std::string& text, const std::string& source = "<input>");
std::string scenario_json(const ScenarioSpec& scenario);

std::string read_text_file(const std::string& path);

}  // namespace penning::io
