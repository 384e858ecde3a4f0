#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "branchpde/experiment.hpp"
#include "branchpde/selftest.hpp"

namespace {

using namespace branchpde;

constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_numerical = 2;
constexpr int exit_threshold = 3;

/// Config file, repeated --set key=value, and one flag per config key.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::vector<std::string>& skip = {}) {
    app->add_option("--config", file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override as key=value (repeatable)");
    for (const auto& key : RunConfig::known_keys()) {
      if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
      app->add_option("--" + key, values[key], "config key " + key);
    }
  }

  RunConfig build() const {
    RunConfig cfg = file.empty() ? RunConfig{} : RunConfig::load(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : values)
      if (!v.empty()) cfg.set(k, v);
    return cfg;
  }
};

struct Thresholds {
  double erru = -1.0;
  double errgu = -1.0;
  double errp = -1.0;

  void attach(CLI::App* app) {
    app->add_option("--max-erru", erru, "fail (exit 3) if any erru(t_k) exceeds this");
    app->add_option("--max-errgu", errgu, "fail (exit 3) if any errgu(t_k) exceeds this");
    app->add_option("--max-errp", errp, "fail (exit 3) if errp exceeds this");
  }

  bool check(const ErrorReport& r) const {
    bool ok = true;
    for (int k = 0; k < 10; ++k) {
      if (erru >= 0.0 && !(r.erru[k] <= erru)) ok = false;
      if (errgu >= 0.0 && !(r.errgu[k] <= errgu)) ok = false;
    }
    if (errp >= 0.0 && !(r.errp && *r.errp <= errp)) ok = false;
    return ok;
  }
};

void print_report(const ErrorReport& r) {
  std::printf("%-3s %-12s %-12s %-12s %-12s\n", "k", "e", "erru", "errgu", "errdivu");
  for (int k = 0; k < 10; ++k)
    std::printf("%-3d %-12.4e %-12.4e %-12.4e %-12.4e\n", k, r.e[k], r.erru[k], r.errgu[k], r.errdivu[k]);
  if (r.errp) std::printf("errp(T) %.4e\n", *r.errp);
}

std::vector<double> parse_point(const std::string& text) {
  std::vector<double> x;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--x expects comma-separated numbers, got '" + text + "'");
    x.push_back(v);
  }
  return x;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coded branching trees and neural regression for nonlinear PDE systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version));
  int workers = 0;
  app.add_option("--workers", workers, "worker threads (default: logical cores)")->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "identity, oracle, divergence and gradient checks");
  double perturb = 0.0;
  selftest->add_option("--perturb-fdb", perturb, "test hook: perturb the first fdb coefficient");

  ConfigFlags stage_flags;
  Thresholds thresholds;
  auto* pretrain = app.add_subcommand("pretrain-phi0", "fit the terminal pressure network");
  auto* build = app.add_subcommand("build-data", "sample the branching training set");
  auto* train = app.add_subcommand("train", "fit the velocity network");
  auto* evaluate = app.add_subcommand("evaluate", "grid error report and CSV artifacts");
  auto* run = app.add_subcommand("run", "all stages in order");
  for (auto* sub : {pretrain, build, train, evaluate, run}) stage_flags.attach(sub);
  thresholds.attach(evaluate);
  thresholds.attach(run);

  ConfigFlags sample_flags;
  auto* sample = app.add_subcommand("sample", "Monte Carlo estimate of u_i(t, x)");
  sample_flags.attach(sample, {"samples"});
  double t = 0.0;
  std::string x_text;
  int component = 1;
  std::size_t samples = 10000;
  sample->add_option("--t", t, "time")->required();
  sample->add_option("--x", x_text, "comma-separated point")->required();
  sample->add_option("--i", component, "solution component (0 = pressure)");
  sample->add_option("--samples", samples, "tree samples")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_validation;
  }

  try {
    if (selftest->parsed()) {
      SelftestOptions opts;
      opts.fdb.perturb = perturb;
      bool ok = true;
      for (const auto& r : run_selftest(opts)) {
        std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        ok = ok && r.passed;
      }
      return ok ? exit_ok : exit_threshold;
    }

    const bool is_sample = sample->parsed();
    RunConfig cfg = (is_sample ? sample_flags : stage_flags).build();
    if (workers > 0) cfg.set("workers", std::to_string(workers));
    Experiment exp(cfg);

    if (is_sample) {
      const std::vector<double> x = parse_point(x_text);
      if (static_cast<int>(x.size()) != exp.problem().d)
        throw ConfigError("--x has " + std::to_string(x.size()) + " coordinates, problem needs " +
                          std::to_string(exp.problem().d));
      if (!(t >= 0.0 && t <= exp.problem().T)) throw ConfigError("--t must lie in [0, T]");
      const PDESystem model = exp.tree_model();
      TreeSampler sampler(model, exp.sampler());
      const EstimateStats s =
          sampler.estimate(t, x, component, samples, static_cast<int>(exp.config().integer("workers")));
      nlohmann::json out = {{"mean", s.mean},
                            {"stderr", s.has_std_error() ? nlohmann::json(s.std_error) : nlohmann::json(nullptr)},
                            {"samples", s.samples},
                            {"aborted", s.aborted}};
      std::cout << out.dump() << "\n";
      return exit_ok;
    }

    std::optional<ErrorReport> report;
    if (pretrain->parsed()) {
      if (!exp.needs_phi0()) throw ConfigError("problem '" + exp.problem().name + "' has no pressure to pre-train");
      exp.pretrain_phi0_stage();
    } else if (build->parsed()) {
      exp.build_data_stage();
    } else if (train->parsed()) {
      exp.train_stage();
    } else if (evaluate->parsed()) {
      report = exp.evaluate_stage();
    } else if (run->parsed()) {
      report = exp.run();
    }
    exp.write_manifest();
    std::printf("artifacts in %s\n", exp.config().get("output").c_str());
    if (report) {
      print_report(*report);
      if (!thresholds.check(*report)) {
        std::fprintf(stderr, "error thresholds exceeded\n");
        return exit_threshold;
      }
    }
    return exit_ok;
  } catch (const StageError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.numerical() ? exit_numerical : exit_validation;
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return exit_numerical;
  } catch (const SampleAborted& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return exit_numerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return exit_validation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_validation;
  }
}
