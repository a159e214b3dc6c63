#include "cli.hpp"
#include "commands.hpp"

#include "penning/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;
using penning::cli::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "penning_probe");
  std::ostringstream out;
  std::ostringstream err;
  const int code = penning::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("penning_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

// The synthetic dataset is shared by several tests; generate it once per process
// (ctest runs each test in its own process, possibly in parallel).
const fs::path& synth_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("penning_cli_synth_" + std::to_string(::getpid()));
    fs::remove_all(d);
    const auto r = run({"--out", d.string(), "synth"});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST_F(CliTest, ModesTableForBerylliumAt3T) {
  const auto r = run({"--out", dir_.string(), "modes"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir_ / "modes.csv");
  const auto t = penning::io::read_table(in, {"B_T", "fz_MHz", "fc_MHz", "fplus_MHz", "fminus_MHz"});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_NEAR(std::stod(t.rows[0][2]), 5.11, 0.005);
}

TEST_F(CliTest, ValidateQuotedSpectrum) {
  const auto r = run({"--out", dir_.string(), "modes", "--validate", "5.118,4.32,0.845,2.6"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("47.000 kHz"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "spectrum_check.csv"));
}

TEST_F(CliTest, EmptyInputFileIsAnInputError) {
  std::ofstream(dir_ / "empty.csv").close();
  const auto r = run({"--out", dir_.string(), "modes", "--input", (dir_ / "empty.csv").string()});
  EXPECT_EQ(r.code, penning::cli::kInputError);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, SchemaViolationsReportRows) {
  std::ofstream f(dir_ / "fields.csv");
  f << penning::io::kSchemaLine << "\nx_um,y_um,z_um,Ex,Ey,Ez,sEx,sEy,sEz\n0,75,0,1,2,3,1,1,1\n0,75,0,x,2,3,1,1,1\n";
  f.close();
  const auto r = run({"--out", dir_.string(), "dipoles", "--fields", (dir_ / "fields.csv").string()});
  EXPECT_EQ(r.code, penning::cli::kInputError);
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({"frobnicate"}).code, penning::cli::kInputError);
  EXPECT_EQ(run({}).code, penning::cli::kInputError);
  EXPECT_EQ(run({"--format", "xml", "modes"}).code, penning::cli::kInputError);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, SynthThenDipolesRecoversBackground) {
  const auto& d = synth_dir();
  const auto truth = load_json(d / "truth.json");
  const auto r = run({"--out", dir_.string(), "dipoles", "--fields", (d / "fields.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = load_json(dir_ / "dipoles.json");
  const double bg_truth = truth.at("dipole_background_eA_per_um2").get<double>();
  EXPECT_NEAR(rep.at("background_eA_per_um2").get<double>() / bg_truth, 1.0, 0.05);
  EXPECT_TRUE(rep.at("underdetermined").get<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "dipoles_map.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "dipoles_map.csv"));
}

TEST_F(CliTest, NoisefitOverlayHasComponentBreakdown) {
  const auto& d = synth_dir();
  const auto r = run({"--out", dir_.string(), "noisefit", "--records", (d / "heating.csv").string(), "--mode", "all"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* m : {"axial", "plus", "minus"}) {
    ASSERT_TRUE(fs::exists(dir_ / (std::string("noisefit_") + m + ".svg"))) << m;
    std::ifstream in(dir_ / (std::string("noisefit_") + m + ".csv"));
    const auto t = penning::io::read_table(in, {"series", "d_um", "rate", "sigma"});
    std::set<std::string> series;
    for (const auto& row : t.rows) series.insert(row[0]);
    EXPECT_TRUE(series.count("data") && series.count("total") && series.count("Johnson") && series.count("surface")) << m;
  }
  const auto fits = load_json(dir_ / "noisefit.json").at("fits");
  for (const auto& [mode, fit] : fits.items()) {
    for (const auto& b : fit.at("breakdown")) {
      const double sum = b.at("johnson").get<double>() + b.at("surface").get<double>() +
                         b.at("correlated").get<double>() + b.at("emi").get<double>();
      EXPECT_NEAR(sum, b.at("total").get<double>(), 1e-12 * sum) << mode;
    }
  }
}

TEST_F(CliTest, FrequencyScalingAndSpikes) {
  const auto& d = synth_dir();
  auto r = run({"--out", dir_.string(), "noisefit", "--frequency", (d / "frequency.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fs = load_json(dir_ / "frequency_scaling.json");
  EXPECT_NEAR(fs.at("alpha").get<double>(), 1.7, 3.0 * fs.at("sigma_alpha").get<double>());
  r = run({"--out", dir_.string(), "noisefit", "--frequency", (d / "spikes.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_json(dir_ / "frequency_scaling.json").at("spikes").size(), 3u);
}

TEST_F(CliTest, StrayfieldFromSynthReadings) {
  const auto& d = synth_dir();
  const auto r = run({"--out", dir_.string(), "strayfield", "--readings", (d / "readings.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = load_json(dir_ / "strayfield.json");
  EXPECT_EQ(rep.at("pairs").size(), 7u);
}

TEST_F(CliTest, CalibrationNonConvergenceExitsThree) {
  std::ofstream f(dir_ / "s.json");
  f << R"({"seed": 5, "stray_gradient_V_per_m": [200, -150, 450]})";
  f.close();
  const auto r = run({"--out", dir_.string(), "strayfield", "--scenario", (dir_ / "s.json").string(),
                      "--max-iterations", "1"});
  EXPECT_EQ(r.code, penning::cli::kNotConverged) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "calibration_trace.csv"));
}

TEST_F(CliTest, MagneticsRecoversGradients) {
  const auto& d = synth_dir();
  const auto r = run({"--out", dir_.string(), "magnetics", "--scans", (d / "rabi.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = load_json(dir_ / "magnetics.json").at("b_gradient");
  const auto slope = g.at("slope_nT_per_um");
  const auto sigma = g.at("sigma_nT_per_um");
  EXPECT_LE(std::abs(slope[1].get<double>() - 5.87), 3.0 * sigma[1].get<double>());
  EXPECT_LE(std::abs(slope[2].get<double>() + 5.26), 3.0 * sigma[2].get<double>());
}

TEST_F(CliTest, TransportWaveform) {
  const auto r = run({"--out", dir_.string(), "transport", "--path", "0,152,0;0,152,100", "--speed", "0.02"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(load_json(dir_ / "transport.json").at("duration_ms").get<double>(), 5.0, 1e-9);
  EXPECT_TRUE(fs::exists(dir_ / "waveform.csv"));
  const auto bad = run({"--out", dir_.string(), "transport", "--path", "0,152"});
  EXPECT_EQ(bad.code, penning::cli::kInputError);
}

TEST_F(CliTest, JsonFormatOption) {
  const auto r = run({"--out", dir_.string(), "--format", "json", "modes"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = load_json(dir_ / "modes.json");
  EXPECT_NEAR(t.at("rows")[0].at("fc_MHz").get<double>(), 5.11, 0.005);
}

TEST_F(CliTest, LayoutMatchesBundledFile) {
  const auto r = run({"--out", dir_.string(), "layout"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "trap_layout.json"), slurp(fs::path(PENNING_DATA_DIR) / "trap_layout.json"));
}

TEST_F(CliTest, ConfigFileBlocksAndTrap) {
  std::ofstream f(dir_ / "run.json");
  f << R"({"out": "cfg_out", "modes": {"fz_MHz": [1.0, 2.0]}, "trap_layout": ")" << PENNING_DATA_DIR
    << R"(/trap_layout.json"})";
  f.close();
  const auto r = run({"--config", (dir_ / "run.json").string(), "modes"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir_ / "cfg_out" / "modes.csv");
  const auto t = penning::io::read_table(in, {"B_T", "fz_MHz", "fc_MHz", "fplus_MHz", "fminus_MHz"});
  EXPECT_EQ(t.rows.size(), 2u);
}

TEST_F(CliTest, SynthIsByteIdenticalAcrossRuns) {
  const auto a = dir_ / "a";
  const auto b = dir_ / "b";
  ASSERT_EQ(run({"--out", a.string(), "synth", "--dataset", "fields,heating,rabi"}).code, 0);
  ASSERT_EQ(run({"--out", b.string(), "synth", "--dataset", "fields,heating,rabi"}).code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
    ++files;
  }
  EXPECT_GE(files, 4);
  const auto c = dir_ / "c";
  ASSERT_EQ(run({"--out", c.string(), "--seed", "7", "synth", "--dataset", "heating"}).code, 0);
  EXPECT_NE(slurp(a / "heating.csv"), slurp(c / "heating.csv"));
}
