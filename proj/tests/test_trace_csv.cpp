#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "nbo/trace_csv.hpp"
#include "support.hpp"

using namespace nbo;

namespace {

RunTrace quadratic_run() {
  const auto p = make_quadratic_bilevel(3, 4, 1.0, 3.0, 11);
  SolverConfig cfg;
  cfg.K = 40;
  cfg.T = 2;
  cfg.alpha = 0.1;
  cfg.gamma = 0.3;
  cfg.trace_every = 8;
  cfg.diagnostics = true;
  return run_nbo_gd(p, p.smoothness({}), cfg, fixtures::zero_start(p));
}

// Replaces the wall_seconds field of every data row with a fixed marker.
std::string mask_wall_clock(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  std::getline(in, line);
  out << line << '\n';
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    out << line.substr(0, a + 1) << "WALL" << line.substr(b) << '\n';
  }
  return out.str();
}

std::string to_csv(const RunTrace& t) {
  std::ostringstream s;
  write_trace_csv(t, s);
  return s.str();
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  for (double v : {0.0, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, std::numeric_limits<double>::max(),
                   std::numeric_limits<double>::denorm_min()}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_THROW(parse_double("1.5x"), ConfigError);
  EXPECT_THROW(parse_double(""), ConfigError);
}

TEST(TraceCsv, RoundTripIsBitwise) {
  const auto t = quadratic_run();
  std::istringstream in(to_csv(t));
  const auto back = read_trace_csv(in);
  ASSERT_EQ(back.size(), t.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_TRUE(back[i].same_values(t.records[i]));
    EXPECT_EQ(back[i].wall_seconds, t.records[i].wall_seconds);
  }
}

TEST(TraceCsv, MissingDiagnosticsAreEmptyFields) {
  RunTrace t;
  t.records.push_back({});
  const auto csv = to_csv(t);
  EXPECT_NE(csv.find("\n0,0,0,,0,,,,,,0,0,0\n"), std::string::npos);
  std::istringstream in(csv);
  EXPECT_FALSE(read_trace_csv(in)[0].phi_value.has_value());
}

TEST(TraceCsv, ZeroIterationRunHasOneRow) {
  const auto p = fixtures::scalar_quadratic();
  SolverConfig cfg;
  cfg.K = 0;
  const auto csv = to_csv(run_nbo_gd(p, p.smoothness({}), cfg, fixtures::zero_start(p)));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(TraceCsv, WriteErrorNamesPath) {
  const std::filesystem::path bad = "/nonexistent/dir/trace.csv";
  try {
    write_trace_csv(RunTrace{}, bad);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(bad.string()), std::string::npos);
  }
}

TEST(TraceCsv, RejectsMalformedInput) {
  std::istringstream header("k,f\n");
  EXPECT_THROW(read_trace_csv(header), ConfigError);
  std::istringstream empty("");
  EXPECT_THROW(read_trace_csv(empty), ConfigError);
  std::istringstream short_row(to_csv(RunTrace{}) + "1,2,3\n");
  EXPECT_THROW(read_trace_csv(short_row), ConfigError);
}

TEST(TraceCsv, RepeatedRunsDifferOnlyInWallClock) {
  EXPECT_EQ(mask_wall_clock(to_csv(quadratic_run())), mask_wall_clock(to_csv(quadratic_run())));
}

// Set NBO_UPDATE_GOLDEN=1 to regenerate the file after an intended change.
TEST(TraceCsv, MatchesGoldenFile) {
  const std::filesystem::path golden = std::filesystem::path(NBO_TEST_DATA) / "quadratic_trace.csv";
  const auto actual = mask_wall_clock(to_csv(quadratic_run()));
  if (std::getenv("NBO_UPDATE_GOLDEN")) std::ofstream(golden, std::ios::binary) << actual;
  std::ifstream in(golden, std::ios::binary);
  ASSERT_TRUE(in) << "missing " << golden;
  std::stringstream expected;
  expected << in.rdbuf();
  EXPECT_EQ(actual, expected.str());
}
