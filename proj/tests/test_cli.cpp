#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "closedloop/cli.hpp"

namespace fs = std::filesystem;
using closedloop::io::read_csv;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("closedloop_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  static json small_scenario() {
    return json::parse(R"({
      "channel": {"d_eff": 0.005, "v_eff": 0.1, "loop_length": 6.0, "pipe_radius": 0.02,
                  "n_molecules": 2000, "truncation_order": 40},
      "damping": {"alpha": 0.05, "beta": 0.01, "x_a": 3.0, "x_b": 3.6},
      "source": {"kind": "point"},
      "receiver": {"kind": "interval", "x_rx_a": 1.5, "x_rx_b": 2.1},
      "grid": {"t_start": 0.0, "dt": 0.5, "n_samples": 41},
      "pbs": {"dt": 0.01, "t_end": 20.0, "seed": 3}
    })");
  }

  fs::path write(const std::string& name, const json& doc) {
    const fs::path p = dir / name;
    std::ofstream(p) << doc.dump(2);
    return p;
  }

  int run(std::vector<std::string> args) {
    std::vector<const char*> argv{"closedloop"};
    for (const auto& a : args) argv.push_back(a.c_str());
    log.str("");
    err.str("");
    return closedloop::cli::run(static_cast<int>(argv.size()), argv.data(), log, err);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  std::ostringstream log;
  std::ostringstream err;
};

}  // namespace

TEST_F(CliTest, SolveWritesSeriesAndSidecar) {
  const auto cfg = write("s.json", small_scenario());
  const auto out = dir / "solve.csv";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "solve"}), 0) << err.str();
  const auto t = read_csv(out);
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "c_rx"}));
  ASSERT_EQ(t.rows.size(), 41u);
  EXPECT_EQ(t.rows[2][0], 1.0);
  const json meta = json::parse(slurp(dir / "solve.csv.json"));
  EXPECT_TRUE(meta["normalized"].get<bool>());
  EXPECT_TRUE(meta["summary"].contains("predicted_first_peak_time"));
}

TEST_F(CliTest, NoDampingMassIsOne) {
  json doc = small_scenario();
  doc["damping"] = {{"alpha", 0.0}, {"beta", 0.0}, {"x_a", 0.0}, {"x_b", 6.0}};
  const auto cfg = write("s.json", doc);
  const auto out = dir / "solve.csv";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "solve", "--coefficients"}), 0) << err.str();
  const json meta = json::parse(slurp(dir / "solve.csv.json"));
  EXPECT_NEAR(meta["summary"]["mass_at_t_end"].get<double>(), 1.0, 1e-10);
  const auto coeffs = read_csv(dir / "solve.csv.coeffs.csv");
  EXPECT_EQ(coeffs.header.size(), 1u + 2u * 81u);
  EXPECT_EQ(coeffs.header[1], "re_c[-40]");
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "--raw", "solve"}), 0);
  const json raw = json::parse(slurp(dir / "solve.csv.json"));
  EXPECT_NEAR(raw["summary"]["mass_at_t_end"].get<double>(), 2000.0, 1e-6);
}

TEST_F(CliTest, PbsIsDeterministicPerSeed) {
  const auto cfg = write("s.json", small_scenario());
  const auto a = dir / "a.csv";
  const auto b = dir / "b.csv";
  const auto c = dir / "c.csv";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", a.string(), "pbs"}), 0) << err.str();
  ASSERT_EQ(run({"--config", cfg.string(), "--out", b.string(), "pbs"}), 0);
  ASSERT_EQ(run({"--config", cfg.string(), "--out", c.string(), "--seed", "4", "pbs"}), 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
  EXPECT_EQ(read_csv(a).header, (std::vector<std::string>{"t", "c_rx_pbs", "alive_fraction"}));
}

TEST_F(CliTest, CompareThresholdAndMismatch) {
  const auto cfg = write("s.json", small_scenario());
  const auto out = dir / "cmp.json";
  EXPECT_EQ(run({"--config", cfg.string(), "--out", out.string(), "--rmse-threshold", "1e-9", "compare"}), 3);
  const json rep = json::parse(slurp(out));
  EXPECT_FALSE(rep["pass"].get<bool>());
  EXPECT_GT(rep["nrmse"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir / "cmp.json.series.csv"));
  EXPECT_EQ(run({"--config", cfg.string(), "--out", out.string(), "--rmse-threshold", "0.5", "compare"}), 0);

  json other = small_scenario();
  other["receiver"]["x_rx_b"] = 2.4;
  const auto pcfg = write("p.json", other);
  EXPECT_EQ(run({"--config", cfg.string(), "--out", out.string(), "compare", "--pbs-config", pcfg.string()}), 1);
}

TEST_F(CliTest, IsiAllZerosAndColumns) {
  json doc = small_scenario();
  doc.erase("pbs");
  doc["sequence"] = {{"symbol_duration", 5.0}, {"bits", {0, 0, 0}}};
  const auto cfg = write("s.json", doc);
  const auto out = dir / "isi.csv";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "isi"}), 0) << err.str();
  const auto t = read_csv(out);
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "r", "r_d", "r_c", "r_i", "r_o"}));
  for (const auto& row : t.rows)
    for (std::size_t j = 1; j < row.size(); ++j) EXPECT_EQ(row[j], 0.0);
  const json meta = json::parse(slurp(dir / "isi.csv.json"));
  EXPECT_EQ(meta["t_i"], "not_reached");
  EXPECT_NE(log.str().find("warning"), std::string::npos);
}

TEST_F(CliTest, IsiShortHorizonHasNoRecirculation) {
  json doc = small_scenario();
  doc.erase("pbs");
  doc["grid"]["n_samples"] = 25;
  doc["sequence"] = {{"symbol_duration", 2.0}, {"length", 6}, {"seed", 1}};
  const auto cfg = write("s.json", doc);
  const auto out = dir / "isi.csv";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "isi"}), 0) << err.str();
  for (const auto& row : read_csv(out).rows) {
    EXPECT_EQ(row[4], 0.0);
    EXPECT_EQ(row[5], 0.0);
    EXPECT_NEAR(row[2] + row[3], row[1], 1e-12);
  }
}

TEST_F(CliTest, SweepSingleValueMatchesSolve) {
  const auto cfg = write("s.json", small_scenario());
  const auto solve_out = dir / "solve.csv";
  const auto sweep_out = dir / "sweep";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", solve_out.string(), "solve"}), 0);
  ASSERT_EQ(run({"--config", cfg.string(), "--out", sweep_out.string(), "sweep", "--param", "alpha", "--values", "0.05"}), 0)
      << err.str();
  const auto a = read_csv(solve_out);
  const auto b = read_csv(sweep_out / "alpha_0.csv");
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) EXPECT_EQ(a.rows[k][1], b.rows[k][1]);
  EXPECT_EQ(read_csv(sweep_out / "summary.csv").rows.size(), 1u);
}

TEST_F(CliTest, SweepSeveralValuesInParallel) {
  const auto cfg = write("s.json", small_scenario());
  const auto out = dir / "sweep";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "--workers", "2", "sweep", "--param", "alpha",
                 "--values", "0.01,0.1,0.6"}),
            0)
      << err.str();
  const auto s = read_csv(out / "summary.csv");
  ASSERT_EQ(s.rows.size(), 3u);
  EXPECT_EQ(s.rows[2][0], 0.6);
  EXPECT_EQ(run({"--config", cfg.string(), "--out", out.string(), "sweep", "--param", "gamma", "--values", "1"}), 1);
}

TEST_F(CliTest, SweepAlphaZeroMeansBackgroundOnly) {
  const json doc = small_scenario();
  const auto cfg = write("s.json", doc);
  const double beta = doc["damping"]["beta"].get<double>();
  const auto out = dir / "sweep";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "sweep", "--param", "alpha", "--values",
                 "0," + std::to_string(beta)}),
            0)
      << err.str();
  const auto a = read_csv(out / "alpha_0.csv");
  const auto b = read_csv(out / "alpha_1.csv");
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) EXPECT_EQ(a.rows[k][1], b.rows[k][1]);
}

TEST_F(CliTest, Equilibrium) {
  json doc = small_scenario();
  doc["channel"]["n_molecules"] = 1;
  doc["damping"] = {{"alpha", 0.01}, {"beta", 0.001}, {"x_a", 2.0}, {"x_b", 3.0}};
  const auto cfg = write("s.json", doc);
  const auto out = dir / "eq.json";
  ASSERT_EQ(run({"--config", cfg.string(), "--out", out.string(), "--raw", "equilibrium", "--symbol-duration", "5"}), 0)
      << err.str();
  EXPECT_NEAR(json::parse(slurp(out))["r_eq"].get<double>(), 6.666666666666667, 1e-12);
  EXPECT_EQ(run({"--config", cfg.string(), "equilibrium"}), 1);
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  json bad = small_scenario();
  bad["damping"]["alpha"] = 0.0;
  const auto cfg = write("bad.json", bad);
  EXPECT_EQ(run({"--config", cfg.string(), "--out", (dir / "x.csv").string(), "solve"}), 1);
  EXPECT_NE(err.str().find("alpha >= beta violated"), std::string::npos);
  EXPECT_EQ(run({"--config", (dir / "missing.json").string(), "--out", "x", "solve"}), 1);
  EXPECT_EQ(run({"--config", cfg.string()}), 1);
  EXPECT_EQ(run({"--config", cfg.string(), "frobnicate"}), 1);

  json horizon = small_scenario();
  horizon.erase("pbs");
  horizon["grid"]["n_samples"] = 2000;
  horizon["sequence"] = {{"symbol_duration", 5.0}, {"bits", {1}}};
  const auto hcfg = write("h.json", horizon);
  // Horizons far beyond one loop use the settled open-loop reference.
  EXPECT_EQ(run({"--config", hcfg.string(), "--out", (dir / "h.csv").string(), "isi"}), 0) << err.str();
}

TEST_F(CliTest, ShippedScenariosParse) {
  for (const auto& e : fs::directory_iterator(CLOSEDLOOP_SCENARIO_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(closedloop::load_scenario(e.path().string())) << e.path();
  }
}
