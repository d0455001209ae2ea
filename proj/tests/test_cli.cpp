#include <cdii/app.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cdii;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cdii_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_args(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"cdii"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return main_entry(int(argv.size()), argv.data());
}

}  // namespace

TEST(ParseConfig, PhantomFlags) {
  auto p = parse_command_line({"phantom", "--preset", "disk-example", "--n", "201", "--out", "ph/"});
  EXPECT_EQ(p.config.command, "phantom");
  EXPECT_EQ(p.config.n, 201);
  EXPECT_EQ(p.config.preset, "disk-example");
  EXPECT_EQ(p.config.out, "ph/");
}

TEST(ParseConfig, GapTolOverride) {
  auto p = parse_command_line({"invert", "--pair", "ph/", "--gap-tol", "1e-7"});
  ASSERT_TRUE(p.config.gap_tol.has_value());
  EXPECT_EQ(*p.config.gap_tol, 1e-7);
  EXPECT_EQ(solver_params(p.config).gap_tol, 1e-7);
}

TEST(ParseConfig, BadNumberIsUsageErrorNamingTheFlag) {
  try {
    parse_command_line({"invert", "--gap-tol", "banana"});
    FAIL() << "no error";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("--gap-tol"), std::string::npos) << e.what();
  }
  EXPECT_EQ(run_args({"invert", "--gap-tol", "banana"}), 2);
}

TEST(ParseConfig, RangesAndUnknownFlags) {
  EXPECT_THROW(parse_command_line({"invert", "--theta", "1.5"}), UsageError);
  EXPECT_THROW(parse_command_line({"phantom", "--n", "2"}), UsageError);
  EXPECT_THROW(parse_command_line({"forward", "--K", "0.5"}), UsageError);
  EXPECT_THROW(parse_command_line({"invert", "--no-such-flag", "1"}), UsageError);
  EXPECT_THROW(parse_command_line({"frobnicate"}), UsageError);
  EXPECT_THROW(parse_command_line({"verify", "volume"}), UsageError);
  EXPECT_THROW(parse_command_line({"verify", "coarea", "--contrasts", "100,10"}), UsageError);
  EXPECT_THROW(parse_command_line({"invert", "--alpha", "0.9", "--beta", "0.1"}), UsageError);
  auto k = parse_command_line({"forward", "--K", "inf"});
  EXPECT_TRUE(std::isinf(k.config.K));
}

TEST(ParseConfig, FileValuesYieldToFlags) {
  auto dir = scratch("config");
  auto path = (dir / "run.cfg").string();
  {
    std::ofstream os(path);
    os << "# solver\n"
       << "gap_tol = 1e-5   # trailing comment\n"
       << "max-iters = 1234\n\n"
       << "levels = 50\n";
  }
  auto p = parse_command_line({"invert", "--config", path, "--levels", "80"});
  EXPECT_EQ(*p.config.gap_tol, 1e-5);
  EXPECT_EQ(*p.config.max_iters, 1234);
  EXPECT_EQ(p.config.levels, 80);
  EXPECT_EQ(p.config.lambdas, 50);  // default kept
}

TEST(ParseConfig, UnknownConfigKeyIsAnError) {
  std::istringstream bad("gap_tol = 1e-5\nspeed = 11\n");
  try {
    read_config_lines(bad, "run.cfg");
    FAIL() << "no error";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("speed"), std::string::npos);
  }
  std::istringstream no_eq("gap_tol 1e-5\n");
  EXPECT_THROW(read_config_lines(no_eq), UsageError);
}

TEST(ParseConfig, HelpIsNotAnError) {
  auto p = parse_command_line({"--help"});
  EXPECT_NE(p.help.find("pipeline"), std::string::npos);
}

TEST(Report, LineFormat) {
  Report r;
  r.check("sigma_rel_err", 0.033, "<=", 0.10, "0.10");
  r.check("u_jaccard", 0.5, ">=", 0.9);
  r.info("iterations", 12.0);
  ASSERT_EQ(r.lines().size(), 3u);
  EXPECT_EQ(r.lines()[0], "sigma_rel_err=0.033 sigma_rel_err<=0.10: PASS");
  EXPECT_EQ(r.lines()[1], "u_jaccard=0.5 u_jaccard>=0.9: FAIL");
  EXPECT_EQ(r.lines()[2], "iterations=12 INFO");
  EXPECT_FALSE(r.all_pass());
}

TEST(Presets, AllBuildAndUnknownIsRejected) {
  for (const auto& name : preset_names()) {
    auto p = make_preset(name, name == "disk-example" ? 51 : 41);
    EXPECT_NO_THROW(p.problem.validate()) << name;
  }
  EXPECT_EQ(make_preset("two-inclusions", 41).problem.geometry.u_components().size(), 1u);
  EXPECT_EQ(make_preset("two-inclusions", 41).problem.geometry.v_components().size(), 1u);
  EXPECT_THROW(make_preset("moon", 41), UsageError);
  EXPECT_THROW(make_preset("disk-example", 100), UsageError);
}

TEST(Commands, PhantomForwardSynthesizeInvertClassify) {
  auto dir = scratch("chain");
  auto ph = (dir / "ph").string(), fw = (dir / "fw").string(), pr = (dir / "pair").string();
  auto inv = (dir / "inv").string(), cl = (dir / "cl").string();
  ASSERT_EQ(run_args({"phantom", "--preset", "no-inclusion", "--n", "21", "--out", ph}), 0);
  EXPECT_TRUE(fs::exists(ph + "/geometry.cdf"));
  EXPECT_TRUE(fs::exists(ph + "/f.csv"));
  EXPECT_FALSE(fs::exists(ph + "/sigma1.cdf"));

  ASSERT_EQ(run_args({"forward", "--geometry", ph + "/geometry.cdf", "--sigma", ph + "/sigma.cdf", "--f",
                      ph + "/f.csv", "--K", "inf", "--out", fw}),
            0);
  auto u = load_cdf(fw + "/u.cdf");
  for (auto k : u.defined_mask().nodes()) EXPECT_NEAR(u[k], u.grid().x(u.grid().col(k)), 1e-9);

  ASSERT_EQ(run_args({"synthesize", "--phantom", ph, "--out", pr}), 0);
  EXPECT_NE(slurp(pr + "/admissibility.txt").find("verdict=admissible"), std::string::npos);

  ASSERT_EQ(run_args({"invert", "--pair", pr, "--gap-tol", "1e-8", "--out", inv}), 0);
  auto ui = load_cdf(inv + "/u.cdf");
  for (auto k : ui.defined_mask().nodes()) EXPECT_NEAR(ui[k], u[k], 1e-4);
  EXPECT_TRUE(fs::exists(inv + "/energy_history.csv"));

  ASSERT_EQ(run_args({"classify", "--pair", pr, "--u", inv + "/u.cdf", "--out", cl}), 0);
  EXPECT_NE(slurp(cl + "/classify.txt").find("components=0"), std::string::npos);
  auto sig = load_cdf(cl + "/sigma.cdf");
  EXPECT_TRUE(sig.defined_mask().any());
  for (auto k : sig.defined_mask().nodes()) EXPECT_NEAR(sig[k], 1.0, 1e-3);
}

TEST(Commands, VerifyCoareaWritesResidualLine) {
  auto dir = scratch("coarea");
  auto geo = build_geometry(Rect{0, 0, 1, 1}, {}, 41);
  const Grid& g = geo.grid();
  save_file((dir / "u.cdf").string(),
            ScalarField::sample(g, geo.omega(), [](double x, double y) { return x * x + y * y; }), write_cdf);
  save_file((dir / "a.cdf").string(), ScalarField::sample(g, geo.omega(), [](double x, double) { return 1 + x * x; }),
            write_cdf);
  testing::internal::CaptureStdout();
  int rc = run_args({"verify", "coarea", "--u", (dir / "u.cdf").string(), "--a", (dir / "a.cdf").string(), "--levels",
                     "200", "--out", (dir / "out").string()});
  std::string out = testing::internal::GetCapturedStdout();
  EXPECT_EQ(rc, 0);
  EXPECT_NE(out.find("coarea_residual="), std::string::npos);
  EXPECT_NE(slurp(dir / "out" / "coarea.txt").find("coarea_residual="), std::string::npos);
}

TEST(Commands, VerifyConvergenceWritesCsv) {
  auto dir = scratch("conv");
  auto ph = (dir / "ph").string();
  ASSERT_EQ(run_args({"phantom", "--preset", "two-inclusions", "--n", "41", "--out", ph}), 0);
  ASSERT_EQ(run_args({"verify", "convergence", "--phantom", ph, "--contrasts", "10,100", "--out", ph}), 0);
  auto csv = slurp(ph + "/convergence.csv");
  EXPECT_EQ(csv.rfind("K,distance,energy_gap,grad_norm_ratio\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Commands, MissingAndMalformedInputsAreUsageErrors) {
  auto dir = scratch("bad");
  EXPECT_EQ(run_args({"invert", "--pair", (dir / "nowhere").string(), "--out", dir.string()}), 2);
  {
    std::ofstream os(dir / "u.cdf");
    os << "cdf1 2 2 0.5 0 0\n1 2\nnot numbers\n";
  }
  {
    std::ofstream os(dir / "a.cdf");
    os << "garbage\n";
  }
  EXPECT_EQ(run_args({"verify", "coarea", "--u", (dir / "u.cdf").string(), "--a", (dir / "a.cdf").string(), "--out",
                      dir.string()}),
            2);
  EXPECT_EQ(run_args({"forward", "--out", dir.string()}), 2);
}

TEST(Commands, FailedInversionKeepsPartialArtifacts) {
  auto dir = scratch("partial");
  auto ph = (dir / "ph").string(), pr = (dir / "pair").string(), inv = (dir / "inv").string();
  ASSERT_EQ(run_args({"phantom", "--preset", "insulator-disc", "--n", "31", "--out", ph}), 0);
  ASSERT_EQ(run_args({"synthesize", "--phantom", ph, "--out", pr}), 0);
  EXPECT_EQ(run_args({"invert", "--pair", pr, "--gap-tol", "1e-12", "--max-iters", "50", "--out", inv}), 1);
  EXPECT_TRUE(fs::exists(inv + "/u.cdf.partial"));
  EXPECT_FALSE(fs::exists(inv + "/u.cdf"));
}

TEST(Commands, OutputsAreDeterministic) {
  auto dir = scratch("determinism");
  for (auto run : {"a", "b"}) {
    auto ph = (dir / run / "ph").string(), pr = (dir / run / "pair").string(), inv = (dir / run / "inv").string();
    ASSERT_EQ(run_args({"phantom", "--preset", "two-inclusions", "--n", "31", "--out", ph}), 0);
    ASSERT_EQ(run_args({"synthesize", "--phantom", ph, "--out", pr}), 0);
    ASSERT_EQ(run_args({"invert", "--pair", pr, "--gap-tol", "1e-5", "--out", inv}), 0);
  }
  for (auto f : {"ph/geometry.cdf", "ph/f.csv", "pair/a.cdf", "inv/u.cdf"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Pipeline, NoInclusionPassesEveryCheck) {
  auto dir = scratch("pipeline");
  testing::internal::CaptureStdout();
  int rc = run_args({"pipeline", "--preset", "no-inclusion", "--n", "41", "--perturbations", "3", "--out", dir.string()});
  testing::internal::GetCapturedStdout();
  EXPECT_EQ(rc, 0);
  auto report = slurp(dir / "report.txt");
  EXPECT_NE(report.find("sigma_rel_err<=0.02: PASS"), std::string::npos) << report;
  EXPECT_EQ(report.find("FAIL"), std::string::npos) << report;
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_NE(e.path().extension(), ".partial") << e.path();
}
