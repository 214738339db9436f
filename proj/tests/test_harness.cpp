#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vrcpi/harness.hpp"
#include "vrcpi/plot.hpp"

using namespace vrcpi;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vrcpi_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config(const fs::path& out) {
  return {{"mdp", {{"generator", "chain"}, {"length", 4}, {"gamma", 0.8}}},
          {"algo", "both"},
          {"planner", {{"mode", "manual"}, {"eta", 0.01}, {"horizon", 90}}},
          {"seeds", {1, 2}},
          {"output_dir", out.string()},
          {"checkpoint_stride", 30}};
}

}  // namespace

TEST(Generators, RandomMdpIsDeterministicInSeed) {
  EXPECT_EQ(gen_random_mdp(6, 3, 0.9, 0.5, 77), gen_random_mdp(6, 3, 0.9, 0.5, 77));
  EXPECT_FALSE(gen_random_mdp(6, 3, 0.9, 0.5, 77) == gen_random_mdp(6, 3, 0.9, 0.5, 78));
}

TEST(Generators, SparseRowsKeepOneSuccessor) {
  const auto mdp = gen_random_mdp(10, 2, 0.9, 0.1, 5);
  for (std::size_t s = 0; s < 10; ++s)
    for (std::size_t a = 0; a < 2; ++a) {
      const auto row = mdp.next_row(s, a);
      EXPECT_GE((row.array() > 0.0).count(), 1);
      EXPECT_NEAR(row.sum(), 1.0, 1e-12);
    }
}

TEST(Generators, RandomMdpRoundTripsThroughJson) {
  const auto mdp = gen_random_mdp(4, 3, 0.7, 0.5, 6);
  EXPECT_EQ(mdp_from_json(json::parse(mdp_to_json(mdp).dump())), mdp);
}

TEST(Generators, TwoStateChainOptimalValue) {
  const auto mdp = gen_chain_mdp(2, 0.5);
  const auto opt = optimal_value(mdp);
  EXPECT_NEAR(opt.state_values(0), 1.0, 1e-10);
  EXPECT_EQ(opt.policy.row(0)(1), 1.0);
}

TEST(Generators, ChainShapeAndMismatch) {
  const auto mdp = gen_chain_mdp(5, 0.9);
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(mdp.next_row(s, a).maxCoeff(), 1.0);
  EXPECT_EQ(mdp.rho()(0), 1.0);
  EXPECT_NEAR(mdp.mu()(3), 0.2, 1e-15);
  const auto mc = mismatch_coefficients(mdp, PolicyClass::all_deterministic(5, 2), 16, 1);
  EXPECT_FALSE(mc.d_inf_infinite);
  EXPECT_LE(mc.d_inf, 5.0 + 1e-12);
  EXPECT_THROW(gen_chain_mdp(1, 0.9), InvalidInput);
  EXPECT_THROW(gen_chain_mdp(4, 0.9, 0.6), InvalidInput);
}

TEST(Config, UnknownFieldRejected) {
  auto doc = small_config("x");
  doc["sedes"] = 1;
  EXPECT_THROW(parse_config(doc, "."), SchemaError);
}

TEST(Config, MissingSeedsRejected) {
  auto doc = small_config("x");
  doc.erase("seeds");
  EXPECT_THROW(parse_config(doc, "."), SchemaError);
  doc["seeds"] = json::array();
  EXPECT_THROW(parse_config(doc, "."), SchemaError);
}

TEST(Config, ManualParamsAreValidated) {
  auto doc = small_config("x");
  doc["planner"]["lambda"] = 0.001;
  const auto c = parse_config(doc, ".");
  const auto mdp = build_mdp(c);
  EXPECT_THROW(resolve_params(c, mdp, build_class(c, mdp)), InvalidInput);
}

TEST(Config, MdpFileResolvesAgainstConfigDir) {
  const auto dir = scratch("resolve");
  save_mdp(gen_chain_mdp(3, 0.5), (dir / "m.json").string());
  auto doc = small_config(dir / "out");
  doc["mdp"] = {{"file", "m.json"}};
  std::ofstream(dir / "cfg.json") << doc.dump();
  const auto c = load_config((dir / "cfg.json").string());
  EXPECT_EQ(build_mdp(c), gen_chain_mdp(3, 0.5));
}

TEST(Config, CpiHorizonMatchesBudget) {
  auto doc = small_config("x");
  doc["cpi"] = {{"batch", 9}};
  const auto c = parse_config(doc, ".");
  const auto mdp = build_mdp(c);
  const auto vr = resolve_params(c, mdp, build_class(c, mdp));
  const auto cp = resolve_cpi_params(c, vr);
  EXPECT_EQ(cp.horizon * cp.batch_per_round, 3 * vr.horizon);
}

TEST(Config, BudgetParityEnforced) {
  const auto dir = scratch("parity");
  auto doc = small_config(dir);
  doc["cpi"] = {{"batch", 3}, {"horizon", 50}};
  EXPECT_THROW(run_experiment(parse_config(doc, ".")), InvalidInput);
}

TEST(Experiment, WritesOneCsvPerCellAndReport) {
  const auto dir = scratch("cells");
  const auto out = run_experiment(parse_config(small_config(dir), "."));
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir)) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 4u);
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "vrcpi_seed2.csv"));
  const auto report = json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report["cells"].size(), 4u);
  for (const auto& cell : report["cells"]) {
    EXPECT_EQ(cell["budget"]["episodes"].get<std::uint64_t>(), 270u);
    for (const auto& row : cell["trace"]) EXPECT_EQ(row["seed"], cell["seed"]);
  }
  EXPECT_TRUE(report["aggregate"].contains("vrcpi"));
  EXPECT_TRUE(report["aggregate"].contains("cpi"));
  EXPECT_EQ(out.cells.size(), 4u);

  const std::string csv = slurp(dir / "cpi_seed1.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,episodes,a_hat,exact_gap,value,vt_norm_1inf,vt_residual");
  EXPECT_NE(csv.find("nan"), std::string::npos);
}

TEST(Experiment, RerunIsByteIdentical) {
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  run_experiment(parse_config(small_config(a), "."));
  setenv("VRCPI_THREADS", "3", 1);
  run_experiment(parse_config(small_config(b), "."));
  unsetenv("VRCPI_THREADS");
  for (const char* f : {"vrcpi_seed1.csv", "vrcpi_seed2.csv", "cpi_seed1.csv", "cpi_seed2.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  auto ra = json::parse(slurp(a / "report.json")), rb = json::parse(slurp(b / "report.json"));
  ra.erase("config");
  rb.erase("config");
  EXPECT_EQ(ra, rb);
}

TEST(Experiment, FailureLeavesPartialReport) {
  const auto dir = scratch("partial");
  // a non-empty directory where a trace should go makes that cell's write fail
  fs::create_directories(dir / "cpi_seed2.csv" / "blocker");
  EXPECT_ANY_THROW(run_experiment(parse_config(small_config(dir), ".")));
  ASSERT_TRUE(fs::exists(dir / "report.json.partial"));
  const auto report = json::parse(slurp(dir / "report.json.partial"));
  EXPECT_TRUE(report.contains("error"));
  EXPECT_EQ(report["cells"].size(), 3u);
  EXPECT_FALSE(fs::exists(dir / "report.json"));
}

TEST(Threads, EnvCapsWorkers) {
  setenv("VRCPI_THREADS", "2", 1);
  EXPECT_EQ(worker_count(10), 2u);
  EXPECT_EQ(worker_count(1), 1u);
  setenv("VRCPI_THREADS", "zero", 1);
  EXPECT_THROW(worker_count(4), InvalidInput);
  unsetenv("VRCPI_THREADS");
}

TEST(Threads, ParallelForRunsEveryJobAndRethrows) {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] = 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(5, 2, [](std::size_t i) {
                 if (i == 3) throw InvariantViolation("x");
               }),
               InvariantViolation);
}

TEST(Csv, FloatsRoundTrip) {
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(x)), x);
  EXPECT_EQ(format_double(std::nullopt), "nan");
}

TEST(Plot, RendersOneLinePerCsv) {
  const auto dir = scratch("plot");
  run_experiment(parse_config(small_config(dir), "."));
  const auto svg = dir / "gap.svg";
  EXPECT_EQ(plot_directory(dir, svg), 4u);
  const std::string text = slurp(svg);
  EXPECT_EQ(text.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (auto pos = text.find("<polyline"); pos != std::string::npos; pos = text.find("<polyline", pos + 1)) ++lines;
  EXPECT_EQ(lines, 4u);
}
