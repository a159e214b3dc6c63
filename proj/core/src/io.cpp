#include "penning/io.hpp"

#include "penning/constants.hpp"
#include "penning/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>

namespace penning::io {

using constants::kMicro;
using constants::kTwoPi;
using json = nlohmann::json;

std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  return fmt::format("{}", v);
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

// Collects per-row problems so a bad file is reported in one go.
class Diagnostics {
 public:
  explicit Diagnostics(std::string source) : source_(std::move(source)) {}
  void add(std::size_t line, const std::string& msg) {
    if (messages_.size() < 50) messages_.emplace_back(line, msg);
    ++count_;
  }
  void raise_if_any() {
    if (count_ == 0) return;
    std::stable_sort(messages_.begin(), messages_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string all = fmt::format("{} schema error(s) in {}", count_, source_);
    for (const auto& [line, m] : messages_) all += fmt::format("\n  {}: line {}: {}", source_, line, m);
    throw SchemaError(all);
  }

 private:
  std::string source_;
  std::vector<std::pair<std::size_t, std::string>> messages_;
  std::size_t count_ = 0;
};

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

// Typed cell access bound to one table; failures land in the diagnostics.
class RowReader {
 public:
  RowReader(const CsvTable& t, Diagnostics& d) : table_(t), diag_(d) {}
  void at(std::size_t row) { row_ = row; }
  double num(const std::string& col) {
    const std::string& cell = table_.rows[row_][table_.column(col)];
    double v = 0.0;
    if (!parse_double(cell, v)) diag_.add(table_.line_numbers[row_], fmt::format("column '{}': '{}' is not a finite number", col, cell));
    return v;
  }
  long long integer(const std::string& col) {
    const std::string& cell = table_.rows[row_][table_.column(col)];
    long long v = 0;
    if (!parse_int(cell, v)) diag_.add(table_.line_numbers[row_], fmt::format("column '{}': '{}' is not an integer", col, cell));
    return v;
  }
  bool flag(const std::string& col) {
    const std::string& cell = table_.rows[row_][table_.column(col)];
    if (cell == "1" || cell == "true") return true;
    if (cell == "0" || cell == "false") return false;
    diag_.add(table_.line_numbers[row_], fmt::format("column '{}': '{}' is not a 0/1 flag", col, cell));
    return false;
  }
  const std::string& text(const std::string& col) { return table_.rows[row_][table_.column(col)]; }
  void fail(const std::string& msg) { diag_.add(table_.line_numbers[row_], msg); }

 private:
  const CsvTable& table_;
  Diagnostics& diag_;
  std::size_t row_ = 0;
};

Vec3 um_vec(RowReader& r, const char* x, const char* y, const char* z) {
  return Vec3(r.num(x), r.num(y), r.num(z)) * kMicro;
}

std::vector<std::string> um_cells(const Vec3& v) {
  return {format_number(v.x() / kMicro), format_number(v.y() / kMicro), format_number(v.z() / kMicro)};
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

// Malformed rows are reported into `diag` and skipped; the caller decides when to raise.
CsvTable read_table_into(std::istream& in, const std::vector<std::string>& expected, const std::string& source,
                         bool allow_extra, Diagnostics& diag) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) {
    throw SchemaError(source + ": empty file (expected '" + std::string(kSchemaLine) + "')");
  }
  ++lineno;
  if (trim(line) != kSchemaLine) {
    throw SchemaError(source + ": line 1: missing schema line '" + std::string(kSchemaLine) + "'");
  }
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos) t.metadata[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
      continue;
    }
    auto cells = split(line);
    if (!have_header) {
      t.columns = cells;
      have_header = true;
      const bool exact = t.columns == expected;
      bool superset = allow_extra && t.columns.size() >= expected.size() &&
                      std::equal(expected.begin(), expected.end(), t.columns.begin());
      if (!exact && !superset) {
        throw SchemaError(fmt::format("{}: line {}: header '{}' does not match expected '{}'", source, lineno,
                                      join(t.columns), join(expected)));
      }
      continue;
    }
    if (cells.size() != t.columns.size()) {
      diag.add(lineno, fmt::format("expected {} cells, found {}", t.columns.size(), cells.size()));
      continue;
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) {
    throw SchemaError(source + ": no header row");
  }
  return t;
}

}  // namespace

CsvTable read_table(std::istream& in, const std::vector<std::string>& expected, const std::string& source,
                    bool allow_extra) {
  Diagnostics diag(source);
  CsvTable t = read_table_into(in, expected, source, allow_extra, diag);
  diag.raise_if_any();
  return t;
}

CsvTable read_table_file(const std::string& path, const std::vector<std::string>& expected, bool allow_extra) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return read_table(in, expected, path, allow_extra);
}

void write_table(std::ostream& out, const std::vector<std::string>& columns,
                 const std::vector<std::vector<std::string>>& rows, const std::map<std::string, std::string>& metadata) {
  out << kSchemaLine << '\n';
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  out << join(columns) << '\n';
  for (const auto& r : rows) out << join(r) << '\n';
}

// ---- fields ----

static const std::vector<std::string> kFieldColumns{"x_um", "y_um", "z_um", "Ex", "Ey", "Ez", "sEx", "sEy", "sEz"};

std::vector<FieldSample> read_field_samples(std::istream& in, const std::string& source) {
  Diagnostics diag(source);
  const CsvTable t = read_table_into(in, kFieldColumns, source, false, diag);
  RowReader r(t, diag);
  std::vector<FieldSample> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.at(i);
    FieldSample s;
    s.position = um_vec(r, "x_um", "y_um", "z_um");
    s.field = Vec3(r.num("Ex"), r.num("Ey"), r.num("Ez"));
    s.sigma = Vec3(r.num("sEx"), r.num("sEy"), r.num("sEz"));
    if (!(s.sigma.minCoeff() > 0.0)) r.fail("field uncertainties must be > 0");
    if (!(s.position.y() > 0.0)) r.fail("sample must lie above the surface (y_um > 0)");
    out.push_back(s);
  }
  diag.raise_if_any();
  return out;
}

void write_field_samples(std::ostream& out, const std::vector<FieldSample>& samples) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : samples) {
    auto row = um_cells(s.position);
    for (int a = 0; a < 3; ++a) row.push_back(format_number(s.field(a)));
    for (int a = 0; a < 3; ++a) row.push_back(format_number(s.sigma(a)));
    rows.push_back(std::move(row));
  }
  write_table(out, kFieldColumns, rows);
}

// ---- camera readings ----

static const std::vector<std::string> kReadingColumns{"f_ax", "Ex", "Ey", "Ez", "px", "pz", "width", "lost"};

std::vector<PositionReading> read_readings(std::istream& in, const std::string& source) {
  Diagnostics diag(source);
  const CsvTable t = read_table_into(in, kReadingColumns, source, false, diag);
  RowReader r(t, diag);
  std::vector<PositionReading> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.at(i);
    PositionReading p;
    p.f_ax = r.num("f_ax");
    if (!(p.f_ax > 0.0)) r.fail("f_ax must be > 0");
    p.applied_field = Vec3(r.num("Ex"), r.num("Ey"), r.num("Ez"));
    p.px = r.num("px");
    p.pz = r.num("pz");
    p.width = r.num("width");
    p.lost = r.flag("lost");
    out.push_back(p);
  }
  diag.raise_if_any();
  return out;
}

void write_readings(std::ostream& out, const std::vector<PositionReading>& readings) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : readings) {
    rows.push_back({format_number(p.f_ax), format_number(p.applied_field.x()), format_number(p.applied_field.y()),
                    format_number(p.applied_field.z()), format_number(p.px), format_number(p.pz),
                    format_number(p.width), p.lost ? "1" : "0"});
  }
  write_table(out, kReadingColumns, rows);
}

// ---- Rabi scans ----

static const std::vector<std::string> kRabiColumns{"scan", "kind", "x_um", "y_um", "z_um",
                                                   "fixed", "abscissa", "p_up", "shots"};

std::vector<RabiScan> read_rabi_scans(std::istream& in, const std::string& source) {
  Diagnostics diag(source);
  const CsvTable t = read_table_into(in, kRabiColumns, source, false, diag);
  RowReader r(t, diag);
  std::vector<RabiScan> out;
  std::vector<std::string> ids;
  const double mhz = kTwoPi * 1e6;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.at(i);
    const std::string id = r.text("scan");
    const std::string kind_text = r.text("kind");
    RabiScanKind kind = RabiScanKind::Frequency;
    if (kind_text == "duration") {
      kind = RabiScanKind::Duration;
    } else if (kind_text != "frequency") {
      r.fail("kind must be 'frequency' or 'duration'");
    }
    const Vec3 pos = um_vec(r, "x_um", "y_um", "z_um");
    const double fixed_raw = r.num("fixed");
    const double abscissa_raw = r.num("abscissa");
    const double p = r.num("p_up");
    const long long shots = r.integer("shots");
    if (!(p >= 0.0 && p <= 1.0)) r.fail("p_up must lie in [0, 1]");
    if (shots <= 0 || shots > 2000000000LL) r.fail("shots must be a positive count");

    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) {
      ids.push_back(id);
      RabiScan s;
      s.kind = kind;
      s.position = pos;
      s.fixed = kind == RabiScanKind::Frequency ? fixed_raw * 1e-6 : fixed_raw * mhz;
      out.push_back(s);
      it = ids.end() - 1;
    }
    RabiScan& s = out[static_cast<std::size_t>(it - ids.begin())];
    if (s.kind != kind || (s.position - pos).norm() > 1e-15) {
      r.fail("scan '" + id + "' changes kind or position between rows");
    }
    s.abscissa.push_back(kind == RabiScanKind::Frequency ? abscissa_raw * mhz : abscissa_raw * 1e-6);
    s.p_up.push_back(p);
    s.shots.push_back(static_cast<int>(std::clamp<long long>(shots, 0, 2000000000LL)));
  }
  diag.raise_if_any();
  return out;
}

void write_rabi_scans(std::ostream& out, const std::vector<RabiScan>& scans) {
  std::vector<std::vector<std::string>> rows;
  const double mhz = kTwoPi * 1e6;
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const auto& s = scans[k];
    const bool freq = s.kind == RabiScanKind::Frequency;
    for (std::size_t i = 0; i < s.abscissa.size(); ++i) {
      auto row = std::vector<std::string>{fmt::format("s{}", k), freq ? "frequency" : "duration"};
      for (auto& c : um_cells(s.position)) row.push_back(c);
      row.push_back(format_number(freq ? s.fixed * 1e6 : s.fixed / mhz));
      row.push_back(format_number(freq ? s.abscissa[i] / mhz : s.abscissa[i] * 1e6));
      row.push_back(format_number(s.p_up[i]));
      row.push_back(std::to_string(s.shots[i]));
      rows.push_back(std::move(row));
    }
  }
  write_table(out, kRabiColumns, rows);
}

// ---- heating records ----

static const std::vector<std::string> kHeatingColumns{"mode", "x_um", "y_um", "z_um", "d_um",
                                                      "f_MHz", "rate", "sigma", "detached"};

std::vector<HeatingRecord> read_heating_records(std::istream& in, const std::string& source) {
  Diagnostics diag(source);
  const CsvTable t = read_table_into(in, kHeatingColumns, source, false, diag);
  RowReader r(t, diag);
  std::vector<HeatingRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.at(i);
    HeatingRecord h;
    try {
      h.mode = parse_mode(r.text("mode"));
    } catch (const std::invalid_argument& e) {
      r.fail(e.what());
    }
    h.position = um_vec(r, "x_um", "y_um", "z_um");
    h.distance = r.num("d_um") * kMicro;
    h.omega = r.num("f_MHz") * kTwoPi * 1e6;
    h.rate = r.num("rate");
    h.sigma_rate = r.num("sigma");
    h.detached = r.flag("detached");
    if (!(h.distance > 0.0)) r.fail("d_um must be > 0");
    if (!(h.omega > 0.0)) r.fail("f_MHz must be > 0");
    if (!(h.sigma_rate > 0.0)) r.fail("sigma must be > 0");
    if (h.rate < 0.0) r.fail("negative heating rates are rejected");
    out.push_back(h);
  }
  diag.raise_if_any();
  return out;
}

void write_heating_records(std::ostream& out, const std::vector<HeatingRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : records) {
    std::vector<std::string> row{std::string(to_string(h.mode))};
    for (auto& c : um_cells(h.position)) row.push_back(c);
    row.push_back(format_number(h.distance / kMicro));
    row.push_back(format_number(h.omega / (kTwoPi * 1e6)));
    row.push_back(format_number(h.rate));
    row.push_back(format_number(h.sigma_rate));
    row.push_back(h.detached ? "1" : "0");
    rows.push_back(std::move(row));
  }
  write_table(out, kHeatingColumns, rows);
}

// ---- waveform / dipoles ----

void write_waveform(std::ostream& out, const Waveform& wf, double speed) {
  std::vector<std::string> cols{"sample", "t_us", "x_um", "y_um", "z_um"};
  for (const auto& id : wf.electrode_ids) cols.push_back(id);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < wf.size(); ++k) {
    std::vector<std::string> row{std::to_string(k), format_number(wf.times[k] * 1e6)};
    for (auto& c : um_cells(wf.positions[k])) row.push_back(c);
    for (Eigen::Index i = 0; i < wf.voltages[k].size(); ++i) row.push_back(format_number(wf.voltages[k](i)));
    rows.push_back(std::move(row));
  }
  write_table(out, cols, rows,
              {{"duration_us", format_number(wf.duration * 1e6)},
               {"speed_m_per_s", format_number(speed)},
               {"interpolation", "linear"}});
}

void write_dipole_grid(std::ostream& out, const DipoleGrid& grid, const std::vector<double>& sigma) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Rect p = grid.patch(i);
    rows.push_back({std::to_string(i), std::to_string(i % static_cast<std::size_t>(grid.nx)),
                    std::to_string(i / static_cast<std::size_t>(grid.nx)), format_number(p.center_x() / kMicro),
                    format_number(p.center_z() / kMicro), format_number(to_e_angstrom_per_um2(grid.densities[i])),
                    sigma.empty() ? "" : format_number(to_e_angstrom_per_um2(sigma[i]))});
  }
  write_table(out, {"index", "ix", "iz", "x_um", "z_um", "D_eA_per_um2", "sigma_eA_per_um2"}, rows,
              {{"background_eA_per_um2", format_number(to_e_angstrom_per_um2(grid.background))},
               {"nx", std::to_string(grid.nx)},
               {"nz", std::to_string(grid.nz)}});
}

// ---- JSON ----

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json parse_json(const std::string& text, const std::string& source) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw SchemaError(source + ": empty document");
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(source + ": " + e.what());
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.at(key).is_number_unsigned()) {
      throw SchemaError(where + ": key '" + key + "' must be a non-negative integer");
    }
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(where + ": key '" + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

Vec3 get_vec(const json& j, const char* key, const std::string& where, double scale, Vec3 fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = get<std::vector<double>>(j, key, where);
  if (v.size() != 3) throw SchemaError(where + ": key '" + key + "' needs 3 numbers");
  return Vec3(v[0], v[1], v[2]) * scale;
}

json vec_json(const Vec3& v, double scale) { return json::array({v.x() / scale, v.y() / scale, v.z() / scale}); }

void check_schema(const json& doc, const std::string& source) {
  if (doc.contains("schema") && doc.at("schema") != "penning-probe-schema v1") {
    throw SchemaError(source + ": unsupported schema " + doc.at("schema").dump());
  }
}

}  // namespace

TrapModel parse_trap_layout(const std::string& text, const std::string& source) {
  const json doc = parse_json(text, source);
  check_schema(doc, source);
  const double b = get<double>(doc, "magnetic_field_T", source);
  IonSpecies species = IonSpecies::beryllium9();
  if (doc.contains("species")) {
    const json& s = doc.at("species");
    species.name = get_or<std::string>(s, "name", species.name, source + " species");
    species.charge = get_or<int>(s, "charge", species.charge, source + " species");
    if (s.contains("mass_kg")) species.mass = get<double>(s, "mass_kg", source + " species");
  }
  std::map<std::string, FilterStage> filters;
  if (!doc.contains("groups") || !doc.at("groups").is_object()) {
    throw SchemaError(source + ": 'groups' must be an object of filter stages");
  }
  for (const auto& [name, g] : doc.at("groups").items()) {
    const std::string where = source + " group '" + name + "'";
    filters[name] = FilterStage{get<double>(g, "R_ohm", where), get<double>(g, "C_F", where),
                                get_or<double>(g, "R_series_ohm", 0.0, where), get<double>(g, "T_K", where)};
  }
  std::vector<RectElectrode> electrodes;
  if (!doc.contains("electrodes") || !doc.at("electrodes").is_array()) {
    throw SchemaError(source + ": 'electrodes' must be an array");
  }
  for (const auto& e : doc.at("electrodes")) {
    const std::string id = get<std::string>(e, "id", source + " electrode");
    const std::string where = source + " electrode '" + id + "'";
    const auto x = get<std::vector<double>>(e, "x_um", where);
    const auto z = get<std::vector<double>>(e, "z_um", where);
    if (x.size() != 2 || z.size() != 2) throw SchemaError(where + ": x_um and z_um need two numbers");
    electrodes.push_back({id, Rect{x[0] * kMicro, x[1] * kMicro, z[0] * kMicro, z[1] * kMicro},
                          get_or<std::string>(e, "group", id, where)});
  }
  try {
    return TrapModel(std::move(electrodes), std::move(filters), b, species);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(source + ": " + e.what());
  }
}

TrapModel load_trap_layout(const std::string& path) { return parse_trap_layout(read_text_file(path), path); }

std::string trap_layout_json(const TrapModel& trap) {
  json doc;
  doc["schema"] = "penning-probe-schema v1";
  doc["magnetic_field_T"] = trap.magnetic_field();
  doc["species"] = {{"name", trap.species().name}, {"charge", trap.species().charge}, {"mass_kg", trap.species().mass}};
  json groups = json::object();
  for (const auto& [name, f] : trap.filters()) {
    groups[name] = {{"R_ohm", f.resistance}, {"C_F", f.capacitance}, {"R_series_ohm", f.series_resistance},
                    {"T_K", f.temperature}};
  }
  doc["groups"] = groups;
  json es = json::array();
  for (const auto& e : trap.electrodes()) {
    es.push_back({{"id", e.id},
                  {"x_um", {e.extent.x1 / kMicro, e.extent.x2 / kMicro}},
                  {"z_um", {e.extent.z1 / kMicro, e.extent.z2 / kMicro}},
                  {"group", e.group}});
  }
  doc["electrodes"] = es;
  return doc.dump(2) + "\n";
}

namespace {

NoiseModelParams noise_from_json(const json& j, const std::string& where) {
  NoiseModelParams p;
  p.amplitude = get_or<double>(j, "amplitude_q_per_s", 0.0, where);
  p.beta = get_or<double>(j, "beta", 4.0, where);
  p.sv_corr = get_or<double>(j, "sv_corr_V2_per_Hz", 0.0, where);
  p.n_emi = get_or<double>(j, "n_emi_q_per_s", 0.0, where);
  if (j.contains("emi_psd_V2_per_m2_Hz")) {
    throw SchemaError(where + ": give the EMI level as n_emi_q_per_s");
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(where + ": " + e.what());
  }
  return p;
}

json noise_json(const NoiseModelParams& p) {
  return {{"amplitude_q_per_s", p.amplitude}, {"beta", p.beta}, {"sv_corr_V2_per_Hz", p.sv_corr}, {"n_emi_q_per_s", p.n_emi}};
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& text, const std::string& source) {
  const json doc = parse_json(text, source);
  check_schema(doc, source);
  ScenarioSpec s;
  s.seed = get_or<std::uint64_t>(doc, "seed", s.seed, source);
  s.target = get_vec(doc, "target_um", source, kMicro, s.target);
  s.stray_gradient = get_vec(doc, "stray_gradient_V_per_m", source, 1.0, s.stray_gradient);

  if (doc.contains("dipoles")) {
    const json& d = doc.at("dipoles");
    const std::string where = source + " dipoles";
    const auto region = get_or<std::vector<double>>(d, "region_um", {-500, 500, -500, 500}, where);
    if (region.size() != 4) throw SchemaError(where + ": region_um needs [x1, x2, z1, z2]");
    DipoleGrid g;
    try {
      g = DipoleGrid::zeros(Rect{region[0] * kMicro, region[1] * kMicro, region[2] * kMicro, region[3] * kMicro},
                            get_or<int>(d, "nx", 20, where), get_or<int>(d, "nz", 20, where));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(where + ": " + e.what());
    }
    g.background = from_e_angstrom_per_um2(get_or<double>(d, "background_eA_per_um2", 0.0, where));
    if (d.contains("densities_eA_per_um2")) {
      const auto v = get<std::vector<double>>(d, "densities_eA_per_um2", where);
      if (v.size() != g.size()) throw SchemaError(where + ": densities_eA_per_um2 needs nx*nz values");
      for (std::size_t i = 0; i < v.size(); ++i) g.densities[i] = from_e_angstrom_per_um2(v[i]);
    }
    // Rectangles painted onto the grid by patch centre, in order.
    if (d.contains("paint")) {
      for (const auto& p : d.at("paint")) {
        const auto x = get<std::vector<double>>(p, "x_um", where + " paint");
        const auto z = get<std::vector<double>>(p, "z_um", where + " paint");
        const double v = from_e_angstrom_per_um2(get<double>(p, "density_eA_per_um2", where + " paint"));
        if (x.size() != 2 || z.size() != 2) throw SchemaError(where + ": paint x_um/z_um need two numbers");
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Rect r = g.patch(i);
          const double cx = r.center_x() / kMicro;
          const double cz = r.center_z() / kMicro;
          if (cx >= x[0] && cx <= x[1] && cz >= z[0] && cz <= z[1]) g.densities[i] = v;
        }
      }
    }
    if (get_or<bool>(d, "zero_mean", false, where)) {
      double mean = 0.0;
      for (double v : g.densities) mean += v;
      mean /= static_cast<double>(g.size());
      for (double& v : g.densities) v -= mean;
    }
    s.dipoles = g;
  }

  if (doc.contains("camera")) {
    const json& c = doc.at("camera");
    const std::string where = source + " camera";
    CameraModel& cam = s.camera;
    cam.imaging.pixel_size = get_or<double>(c, "pixel_um", cam.imaging.pixel_size / kMicro, where) * kMicro;
    cam.imaging.magnification = get_or<double>(c, "magnification", cam.imaging.magnification, where);
    cam.imaging.wavelength = get_or<double>(c, "wavelength_nm", cam.imaging.wavelength * 1e9, where) * 1e-9;
    cam.imaging.numerical_aperture = get_or<double>(c, "numerical_aperture", cam.imaging.numerical_aperture, where);
    cam.imaging.reference_omega =
        get_or<double>(c, "reference_MHz", cam.imaging.reference_omega / (kTwoPi * 1e6), where) * kTwoPi * 1e6;
    cam.center_px = get_or<double>(c, "center_px", cam.center_px, where);
    cam.center_pz = get_or<double>(c, "center_pz", cam.center_pz, where);
    cam.w0_px = get_or<double>(c, "w0_px", cam.w0_px, where);
    cam.rayleigh = get_or<double>(c, "rayleigh_um", cam.rayleigh / kMicro, where) * kMicro;
    cam.focus_offset = get_or<double>(c, "focus_offset_um", cam.focus_offset / kMicro, where) * kMicro;
    cam.region_radius = get_or<double>(c, "region_radius_um", cam.region_radius / kMicro, where) * kMicro;
    cam.min_height = get_or<double>(c, "min_height_um", cam.min_height / kMicro, where) * kMicro;
    cam.width_dither_px = get_or<int>(c, "width_dither_px", cam.width_dither_px, where);
    try {
      cam.imaging.validate();
    } catch (const std::invalid_argument& e) {
      throw SchemaError(where + ": " + e.what());
    }
  }

  if (doc.contains("noise")) {
    const json& n = doc.at("noise");
    if (n.contains("axial")) s.noise_axial = noise_from_json(n.at("axial"), source + " noise.axial");
    if (n.contains("plus")) s.noise_plus = noise_from_json(n.at("plus"), source + " noise.plus");
    if (n.contains("minus")) s.noise_minus = noise_from_json(n.at("minus"), source + " noise.minus");
  }
  if (doc.contains("frequencies_MHz")) {
    const json& f = doc.at("frequencies_MHz");
    const std::string where = source + " frequencies_MHz";
    s.omega_z = get_or<double>(f, "axial", s.omega_z / (kTwoPi * 1e6), where) * kTwoPi * 1e6;
    s.omega_plus = get_or<double>(f, "plus", s.omega_plus / (kTwoPi * 1e6), where) * kTwoPi * 1e6;
    s.omega_minus = get_or<double>(f, "minus", s.omega_minus / (kTwoPi * 1e6), where) * kTwoPi * 1e6;
  }
  if (doc.contains("magnetic")) {
    const json& m = doc.at("magnetic");
    const std::string where = source + " magnetic";
    const double mhz = kTwoPi * 1e6;
    const double khz_per_um = kTwoPi * 1e3 / kMicro;
    s.magnetic.omega0 = get_or<double>(m, "f0_MHz", 0.0, where) * mhz;
    s.magnetic.omega0_gradient = get_vec(m, "f0_gradient_kHz_per_um", where, khz_per_um, Vec3::Zero());
    if (m.contains("b_gradient_nT_per_um")) {
      if (m.contains("f0_gradient_kHz_per_um")) throw SchemaError(where + ": give either f0_gradient_kHz_per_um or b_gradient_nT_per_um");
      // nT/um = 1e-3 T/m, mapped through the electron-spin sensitivity.
      s.magnetic.omega0_gradient = get_vec(m, "b_gradient_nT_per_um", where, 1e-3 * default_spin_sensitivity(), Vec3::Zero());
    }
    s.magnetic.rabi = get_or<double>(m, "rabi_MHz", 0.0, where) * mhz;
    s.magnetic.rabi_gradient = get_vec(m, "rabi_gradient_kHz_per_um", where, khz_per_um, Vec3::Zero());
  }
  return s;
}

ScenarioSpec load_scenario(const std::string& path) { return parse_scenario(read_text_file(path), path); }

std::string scenario_json(const ScenarioSpec& s) {
  json doc;
  doc["schema"] = "penning-probe-schema v1";
  doc["seed"] = s.seed;
  doc["target_um"] = vec_json(s.target, kMicro);
  doc["stray_gradient_V_per_m"] = vec_json(s.stray_gradient, 1.0);
  if (s.dipoles) {
    const DipoleGrid& g = *s.dipoles;
    std::vector<double> dens;
    for (double v : g.densities) dens.push_back(to_e_angstrom_per_um2(v));
    doc["dipoles"] = {{"region_um", {g.region.x1 / kMicro, g.region.x2 / kMicro, g.region.z1 / kMicro, g.region.z2 / kMicro}},
                      {"nx", g.nx},
                      {"nz", g.nz},
                      {"background_eA_per_um2", to_e_angstrom_per_um2(g.background)},
                      {"densities_eA_per_um2", dens}};
  }
  const CameraModel& c = s.camera;
  doc["camera"] = {{"pixel_um", c.imaging.pixel_size / kMicro},
                   {"magnification", c.imaging.magnification},
                   {"wavelength_nm", c.imaging.wavelength * 1e9},
                   {"numerical_aperture", c.imaging.numerical_aperture},
                   {"reference_MHz", c.imaging.reference_omega / (kTwoPi * 1e6)},
                   {"center_px", c.center_px},
                   {"center_pz", c.center_pz},
                   {"w0_px", c.w0_px},
                   {"rayleigh_um", c.rayleigh / kMicro},
                   {"focus_offset_um", c.focus_offset / kMicro},
                   {"region_radius_um", c.region_radius / kMicro},
                   {"min_height_um", c.min_height / kMicro},
                   {"width_dither_px", c.width_dither_px}};
  doc["noise"] = {{"axial", noise_json(s.noise_axial)}, {"plus", noise_json(s.noise_plus)}, {"minus", noise_json(s.noise_minus)}};
  const double mhz = kTwoPi * 1e6;
  doc["frequencies_MHz"] = {{"axial", s.omega_z / mhz}, {"plus", s.omega_plus / mhz}, {"minus", s.omega_minus / mhz}};
  const double khz_per_um = kTwoPi * 1e3 / kMicro;
  doc["magnetic"] = {{"f0_MHz", s.magnetic.omega0 / mhz},
                     {"f0_gradient_kHz_per_um", vec_json(s.magnetic.omega0_gradient, khz_per_um)},
                     {"rabi_MHz", s.magnetic.rabi / mhz},
                     {"rabi_gradient_kHz_per_um", vec_json(s.magnetic.rabi_gradient, khz_per_um)}};
  return doc.dump(2) + "\n";
}

}  // namespace penning::io
