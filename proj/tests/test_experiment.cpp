#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "branchpde/experiment.hpp"

using namespace branchpde;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny(const std::string& problem, const std::filesystem::path& out) {
  RunConfig c;
  c.set("problem", problem);
  c.set("points", "30");
  c.set("samples", "10");
  c.set("epochs", "20");
  c.set("width", "8");
  c.set("layers", "2");
  c.set("phi0_points", "30");
  c.set("phi0_samples", "20");
  c.set("phi0_epochs", "20");
  c.set("delta", "0.7");
  c.set("workers", "1");
  c.set("output", out.string());
  return c;
}

}  // namespace

TEST(Config, ParseAndMerge) {
  const RunConfig c = RunConfig::parse("# comment\nproblem = abc\n  nu=0.02  # trailing\n\nT = 0.7\n");
  EXPECT_EQ(c.get("problem"), "abc");
  EXPECT_DOUBLE_EQ(c.number("nu"), 0.02);
  EXPECT_THROW(RunConfig::parse("problem abc\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("colour = red\n"), ConfigError);
  RunConfig d;
  d.set("nu", "0.5");
  RunConfig e = c;
  e.merge(d);
  EXPECT_DOUBLE_EQ(e.number("nu"), 0.5);
  RunConfig bad;
  bad.set("nu", "1x");
  EXPECT_THROW(bad.number("nu"), ConfigError);
}

TEST(Config, PresetsAndDefaults) {
  const RunConfig desk = resolve({});
  EXPECT_EQ(desk.get("problem"), "taylor-green");
  EXPECT_EQ(desk.count("points"), 2000u);
  EXPECT_EQ(desk.count("samples"), 200u);
  EXPECT_EQ(desk.count("epochs"), 2000u);
  EXPECT_NEAR(desk.number("delta"), M_PI / 10, 1e-15);
  EXPECT_DOUBLE_EQ(desk.number("nu"), 1.0);
  EXPECT_DOUBLE_EQ(desk.number("T"), 0.25);
  RunConfig p;
  p.set("scale", "paper");
  p.set("problem", "abc");
  const RunConfig paper = resolve(p);
  EXPECT_EQ(paper.count("points"), 100000u);
  EXPECT_EQ(paper.count("samples"), 1000u);
  EXPECT_EQ(paper.count("epochs"), 10000u);
  EXPECT_NEAR(paper.number("delta"), M_PI / 45, 1e-15);
  RunConfig rot;
  rot.set("problem", "rotating");
  EXPECT_EQ(resolve(rot).get("phi0_source"), "network");
}

TEST(Config, ValidationBeforeCompute) {
  auto rejects = [](const std::string& key, const std::string& value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(resolve(c), ConfigError) << key << "=" << value;
  };
  rejects("nu", "0");
  rejects("T", "-1");
  rejects("points", "0");
  rejects("samples", "0");
  rejects("problem", "burgers");
  rejects("scale", "huge");
  rejects("rho_tilde_hi", "0");
  rejects("rotating_case", "3");
  rejects("workers", "0");
  rejects("prune", "2");
  rejects("phi0_source", "magic");
  RunConfig c;
  c.set("problem", "rotating");
  c.set("phi0_source", "exact");
  EXPECT_THROW(resolve(c), ConfigError);
  RunConfig s;
  s.set("rho_tilde_lo", "7");
  EXPECT_THROW(Experiment{s}, ConfigError);
}

TEST(Config, HashIsStable) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  RunConfig a, b;
  a.set("nu", "1");
  a.set("T", "2");
  b.set("T", "2");
  b.set("nu", "1");
  EXPECT_EQ(a.canonical(), b.canonical());
}

TEST(Experiment, RunWritesArtifactsDeterministically) {
  const auto base = std::filesystem::temp_directory_path() / "branchpde_experiment_test";
  std::filesystem::remove_all(base);
  for (const char* run : {"a", "b"}) {
    Experiment exp(tiny("taylor-green", base / run));
    const auto report = exp.run();
    ASSERT_TRUE(report.has_value());
    EXPECT_EQ(report->erru.size(), 10u);
    EXPECT_TRUE(report->errp.has_value());
  }
  for (const char* name : {"errors.csv", "loss.csv", "phi0_loss.csv", "slice_u1.csv", "slice_u2.csv"}) {
    const std::string a = slurp(base / "a" / name);
    EXPECT_FALSE(a.empty()) << name;
    EXPECT_EQ(a, slurp(base / "b" / name)) << name;
  }
  const auto manifest = nlohmann::json::parse(slurp(base / "a" / "manifest.json"));
  EXPECT_EQ(manifest["config"]["problem"], "taylor-green");
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
  EXPECT_TRUE(manifest.contains("git_revision"));
  for (const char* stage : {"pretrain-phi0", "build-data", "train", "evaluate"})
    EXPECT_TRUE(manifest["stages"].contains(stage)) << stage;
  // The manifest's config reproduces the run.
  RunConfig again;
  for (const auto& [k, v] : manifest["config"].items()) again.set(k, v.get<std::string>());
  again.set("output", (base / "c").string());
  Experiment(again).run();
  EXPECT_EQ(slurp(base / "a" / "errors.csv"), slurp(base / "c" / "errors.csv"));
  std::filesystem::remove_all(base);
}

TEST(Experiment, RotatingUsesPressureNetworkAndWritesFields) {
  const auto base = std::filesystem::temp_directory_path() / "branchpde_rotating_test";
  std::filesystem::remove_all(base);
  RunConfig c = tiny("rotating", base);
  c.set("T", "1");
  Experiment exp(c);
  EXPECT_THROW(exp.build_data_stage(), StageError);  // needs phi0.ckpt first
  const auto report = exp.run();
  EXPECT_FALSE(report.has_value());
  for (int k = 0; k < 10; ++k)
    EXPECT_TRUE(std::filesystem::exists(base / ("field_k" + std::to_string(k) + ".csv"))) << k;
  std::filesystem::remove_all(base);
}

TEST(Experiment, SemilinearSkipsPressure) {
  const auto base = std::filesystem::temp_directory_path() / "branchpde_semilinear_test";
  std::filesystem::remove_all(base);
  Experiment exp(tiny("semilinear-linear", base));
  EXPECT_FALSE(exp.needs_phi0());
  const auto report = exp.run();
  ASSERT_TRUE(report.has_value());
  EXPECT_FALSE(report->errp.has_value());
  EXPECT_FALSE(std::filesystem::exists(base / "phi0.ckpt"));
  std::filesystem::remove_all(base);
}
