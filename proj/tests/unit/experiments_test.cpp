#include <gtest/gtest.h>

#include <string>

#include "flowjac/experiments.hpp"
#include "test_util.hpp"

namespace flowjac {
namespace {

using testing::read_file;
using testing::scratch_dir;

json load_json(const fs::path& p) { return json::parse(read_file(p)); }

TEST(Config, DefaultsWhenEmpty) {
  const Mixture2dConfig c = parse_mixture2d(json::object());
  EXPECT_EQ(c.times, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 0.99}));
  EXPECT_EQ(c.target.size(), 3u);
  EXPECT_EQ(c.common.experiment, "mixture2d");
}

TEST(Config, UnknownTopLevelFieldRejected) {
  EXPECT_THROW(parse_mixture2d(json{{"samples", 3}}), ConfigError);
}

TEST(Config, UnknownNestedFieldRejected) {
  EXPECT_THROW(parse_gaussian1d(json{{"training", {{"stepz", 3}}}}), ConfigError);
  EXPECT_THROW(parse_diffeo(json{{"solver", {{"order", 4}}}}), ConfigError);
  EXPECT_THROW(parse_causal_bench(json{{"scenarios", {{{"name", "a"}, {"kind", "fork"}, {"extra", 1}}}}}),
               ConfigError);
}

TEST(Config, WrongTypesRejected) {
  EXPECT_THROW(parse_mixture2d(json{{"seed", -1}}), ConfigError);
  EXPECT_THROW(parse_mixture2d(json{{"seed", "1"}}), ConfigError);
  EXPECT_THROW(parse_mixture2d(json{{"times", {0.0, "x"}}}), ConfigError);
  EXPECT_THROW(parse_diffeo(json{{"solver", {{"scheme", "midpoint"}}}}), ConfigError);
  EXPECT_THROW(parse_jvp_sweep(json{{"mode", "backward"}}), ConfigError);
}

TEST(Config, ExperimentNameMustMatch) {
  EXPECT_THROW(parse_mixture2d(json{{"experiment", "gaussian1d"}}), ConfigError);
  EXPECT_NO_THROW(parse_mixture2d(json{{"experiment", "mixture2d"}}));
}

TEST(Config, OutOfRangeValuesRejected) {
  EXPECT_THROW(parse_mixture2d(json{{"times", {0.5, 1.5}}}), ConfigError);
  EXPECT_THROW(parse_gaussian1d(json{{"training", {{"learning_rate", 0.0}}}}), ConfigError);
  EXPECT_THROW(parse_jvp_sweep(json{{"epsilon", {{"min", 1e-1}, {"max", 1e-3}}}}), ConfigError);
  EXPECT_THROW(parse_causal_bench(json{{"conditioning", {{"value", 1.5}}}}), ConfigError);
  EXPECT_THROW(parse_causal_bench(json{{"scenarios", {{{"name", "../x"}, {"kind", "fork"}}}}}), ConfigError);
  EXPECT_THROW(parse_causal_bench(json{{"scenarios", {{{"name", "a"}, {"kind", "chain"}}}}}), ConfigError);
}

TEST(Config, ShapeErrorsAreConfigErrors) {
  const json ragged{{"target", {{"mean", {0.0, 0.0}}, {"cov", {{1.0, 0.0}, {0.0}}}}}};
  EXPECT_THROW(parse_diffeo(ragged), ConfigError);
  const json wrong_dim{{"target", {{"mean", {0.0}}, {"cov", {{1.0, 0.0}, {0.0, 1.0}}}}}};
  EXPECT_THROW(parse_diffeo(wrong_dim), ConfigError);
  const json mixed_mixture{
      {"target",
       {{"weights", {0.5, 0.5}},
        {"components",
         {{{"mean", {0.0, 0.0}}, {"cov", {{1.0, 0.0}, {0.0, 1.0}}}}, {{"mean", {0.0}}, {"cov", {{1.0}}}}}}}}};
  EXPECT_THROW(prepare_experiment("mixture2d", mixed_mixture, std::nullopt, std::nullopt), ConfigError);
}

TEST(Config, NonSpdCovarianceIsNumerical) {
  const json bad{{"target", {{"mean", {0.0, 0.0}}, {"cov", {{1.0, 2.0}, {2.0, 1.0}}}}}};
  EXPECT_THROW(parse_diffeo(bad), NotSpd);
}

TEST(Config, EffectiveConfigIsAFixedPoint) {
  const json once = to_json(parse_causal_bench(json{{"seed", 5u}, {"base_points", 500u}}));
  const json twice = to_json(parse_causal_bench(once));
  EXPECT_EQ(once.dump(), twice.dump());
  EXPECT_EQ(to_json(parse_jvp_sweep(to_json(parse_jvp_sweep(json::object())))).dump(),
            to_json(parse_jvp_sweep(json::object())).dump());
}

TEST(Config, UnknownExperiment) {
  EXPECT_THROW(prepare_experiment("mnist", json::object(), std::nullopt, std::nullopt), ConfigError);
}

TEST(Config, OutputDirResolution) {
  EXPECT_EQ(prepare_experiment("mixture2d", json::object(), std::nullopt, std::nullopt).out_dir,
            fs::path("out/mixture2d"));
  EXPECT_EQ(prepare_experiment("mixture2d", json{{"output_dir", "x/y"}}, std::nullopt, std::nullopt).out_dir,
            fs::path("x/y"));
  EXPECT_EQ(prepare_experiment("mixture2d", json{{"output_dir", "x/y"}}, std::nullopt, fs::path("z")).out_dir,
            fs::path("z"));
}

json small_mixture_config() {
  return {{"samples_per_time", 50u}};
}

TEST(Mixture2d, SeedOverrideChangesHashAndOutput) {
  const auto a = scratch_dir("mix_seed_a");
  const auto b = scratch_dir("mix_seed_b");
  run_experiment("mixture2d", small_mixture_config(), std::nullopt, a, 1);
  run_experiment("mixture2d", small_mixture_config(), 9u, b, 1);
  EXPECT_EQ(load_json(a / "config.effective.json")["seed"], 0);
  EXPECT_EQ(load_json(b / "config.effective.json")["seed"], 9);
  EXPECT_NE(read_file(a / "table.csv"), read_file(b / "table.csv"));
}

TEST(Mixture2d, CsvCarriesProvenance) {
  const auto dir = scratch_dir("mix_prov");
  run_experiment("mixture2d", small_mixture_config(), std::nullopt, dir, 1);
  const std::string csv = read_file(dir / "table.csv");
  const std::string hash = hex64(fnv1a64(load_json(dir / "config.effective.json").dump()));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "# tool=flowjac version=0.1.0 config_hash=" + hash + " seed=0");
  EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(Mixture2d, SingleComponentHasNoDiscrepancy) {
  const json component{{"mean", {1.0, -2.0}}, {"cov", {{0.5, 0.1}, {0.1, 0.3}}}};
  json target;
  target["weights"] = {1.0};
  target["components"] = json::array({component});
  const json cfg{{"samples_per_time", 100u}, {"target", target}};
  const auto dir = scratch_dir("mix_single");
  run_experiment("mixture2d", cfg, std::nullopt, dir, 1);
  for (const auto& row : load_json(dir / "summary.json")["rows"]) {
    EXPECT_LT(row["interventional_vs_analytical"].get<double>(), 1e-6);
    EXPECT_LT(row["numerical_vs_analytical"].get<double>(), 1e-6);
  }
}

TEST(DiffeoCheck, IdentityFlowHasZeroResiduals) {
  const json g{{"mean", {0.0, 0.0}}, {"cov", {{1.0, 0.0}, {0.0, 1.0}}}};
  const auto dir = scratch_dir("diffeo_identity");
  const CommandResult r =
      run_experiment("diffeo-check", json{{"source", g}, {"target", g}, {"probes", 500u}}, std::nullopt, dir, 1);
  EXPECT_TRUE(r.check_passed());
  const json report = load_json(dir / "diffeo_check.json");
  for (const auto& c : report["checks"]) {
    if (c["name"] == "wiggle_population_relative") continue;  // sampling error of Ĉov(z) vs I
    EXPECT_LE(c["value"].get<double>(), 1e-12) << c["name"];
  }
  EXPECT_EQ(report["L"], json({{0.0, 0.0}, {0.0, 0.0}}));
}

TEST(DiffeoCheck, DefaultConfigPasses) {
  const auto dir = scratch_dir("diffeo_default");
  const CommandResult r = run_experiment("diffeo-check", json{{"probes", 2000u}}, std::nullopt, dir, 1);
  EXPECT_TRUE(r.check_passed());
  EXPECT_TRUE(load_json(dir / "diffeo_check.json")["pass"].get<bool>());
}

TEST(Gaussian1d, ZeroStepsWarnsButSucceeds) {
  const json cfg{{"training", {{"steps", 0u}}}, {"hidden", {8}}, {"train_samples", 100u}, {"trajectories", 2u}};
  const auto dir = scratch_dir("g1_zero");
  const CommandResult r = run_experiment("gaussian1d", cfg, std::nullopt, dir, 1);
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_FALSE(r.check_passed());
  const json s = load_json(dir / "summary.json");
  EXPECT_TRUE(s["warning"].get<bool>());
  EXPECT_GT(s["rms_drift"].get<double>(), 0.05);
  EXPECT_TRUE(s["final_loss"].is_null());
  EXPECT_TRUE(fs::exists(dir / "model.bin"));
  EXPECT_EQ(load_model((dir / "model.bin").string()).widths(), (std::vector<std::size_t>{2, 8, 1}));
}

TEST(Gaussian1d, AnalyticTrajectoryColumnMatchesClosedForm) {
  const json cfg{{"training", {{"steps", 5u}}}, {"hidden", {4}}, {"train_samples", 100u}, {"trajectories", 1u},
                 {"target", {{"mean", {2.0}}, {"cov", {{4.0}}}}}};
  const auto dir = scratch_dir("g1_path");
  run_experiment("gaussian1d", cfg, std::nullopt, dir, 1);
  // Column 3 is m(t) + sqrt(v(t)) x0 with m(t) = 2t, v(t) = (1-t)^2 + 4t^2.
  std::istringstream in(read_file(dir / "trajectories.csv"));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  double x0 = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    double traj, t, xa, xl;
    ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &traj, &t, &xa, &xl), 4);
    if (rows++ == 0) x0 = xa;
    EXPECT_NEAR(xa, 2.0 * t + std::sqrt((1 - t) * (1 - t) + 4 * t * t) * x0, 1e-12);
  }
  EXPECT_EQ(rows, 101);
}

TEST(JvpSweep, LinearRowExactAndCurvesInterior) {
  const json cfg{{"mlp_hidden", {8}}, {"mlp_training", {{"steps", 50u}}}, {"solver", {{"steps", 20u}}}};
  const auto dir = scratch_dir("jvp_sweep");
  const CommandResult r = run_experiment("jvp-sweep", cfg, std::nullopt, dir, 1);
  EXPECT_TRUE(r.check_passed()) << (r.failures.empty() ? "" : r.failures.front());
  for (const auto& c : load_json(dir / "summary.json")["cases"]) {
    if (c["case"] == "linear") {
      EXPECT_LT(c["max_error"].get<double>(), 1e-12);
    } else {
      EXPECT_TRUE(c["interior_minimum"].get<bool>()) << c["case"];
    }
  }
}

TEST(Determinism, SmokeRunsAreByteIdentical) {
  const json cfg{{"samples_per_time", 40u}};
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  const auto ra = run_experiment("mixture2d", cfg, 3u, a, 1);
  const auto rb = run_experiment("mixture2d", cfg, 3u, b, 4);
  ASSERT_EQ(ra.files.size(), rb.files.size());
  for (std::size_t i = 0; i < ra.files.size(); ++i) {
    EXPECT_EQ(read_file(ra.files[i]), read_file(rb.files[i])) << ra.files[i];
  }
}

}  // namespace
}  // namespace flowjac
