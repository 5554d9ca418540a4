// flowjac: run one experiment from a JSON config and write CSV/JSON reports.
//
//   flowjac <experiment> [--config FILE] [--out DIR] [--seed N] [--threads N] [--check]
//
// Exit codes: 0 success, 2 invalid config, 3 numerical failure,
// 4 acceptance-property violation (only with --check).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "flowjac/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitCheck = 4;

struct Options {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool check = false;
};

int run(const std::string& experiment, const Options& opt, const CLI::App& sub) {
  flowjac::PreparedExperiment prepared;
  try {
    const flowjac::json root = opt.config.empty() ? flowjac::json::object() : flowjac::read_json_file(opt.config);
    std::optional<std::uint64_t> seed;
    if (sub.count("--seed") > 0) seed = opt.seed;
    std::optional<flowjac::fs::path> out;
    if (!opt.out.empty()) out = opt.out;
    prepared = flowjac::prepare_experiment(experiment, root, seed, out);
  } catch (const flowjac::NotSpd& e) {
    std::cerr << "flowjac: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const flowjac::Error& e) {
    std::cerr << "flowjac: invalid config: " << e.what() << "\n";
    return kExitConfig;
  }

  flowjac::CommandResult result;
  try {
    result = prepared.run(opt.threads);
  } catch (const flowjac::ConfigError& e) {
    std::cerr << "flowjac: invalid config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const flowjac::Error& e) {
    std::cerr << "flowjac: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }

  std::cout << result.table;
  for (const auto& w : result.warnings) std::cerr << "flowjac: warning: " << w << "\n";
  std::cout << "wrote " << result.files.size() << " files to " << prepared.out_dir.string() << "\n";
  if (!result.check_passed()) {
    for (const auto& f : result.failures) std::cerr << "flowjac: check failed: " << f << "\n";
    if (opt.check) return kExitCheck;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching Jacobian experiments"};
  app.require_subcommand(1);
  Options opt;

  std::string chosen;
  for (const auto& name : flowjac::experiment_names()) {
    CLI::App* sub = app.add_subcommand(name, "Run the " + name + " experiment");
    sub->add_option("--config", opt.config, "JSON experiment config (defaults apply when omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory (overrides config output_dir)");
    sub->add_option("--seed", opt.seed, "Seed (overrides config seed)");
    sub->add_option("--threads", opt.threads, "Worker cap; 0 = all cores");
    sub->add_flag("--check", opt.check, "Exit 4 when an acceptance property is violated");
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  CLI::App* sub = app.get_subcommand(chosen);
  return run(chosen, opt, *sub);
}
