#pragma once

// Run configuration (flat key=value), scale presets and the end-to-end
// pipeline writing checkpoints, CSVs and a manifest.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchpde/flows.hpp"
#include "branchpde/metrics.hpp"
#include "branchpde/model.hpp"
#include "branchpde/parallel.hpp"
#include "branchpde/sampler.hpp"
#include "branchpde/training.hpp"

#ifndef BRANCHPDE_GIT_REVISION
#define BRANCHPDE_GIT_REVISION "unknown"
#endif

namespace branchpde {

inline constexpr const char* version = "0.1.0";

/// Bad configuration values; reported before any sampling.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered key=value settings. Unset keys take problem and scale defaults
/// when resolved.
class RunConfig {
 public:
  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "problem",      "nu",           "T",           "A",           "B",          "C",
        "a",            "rotating_case", "scale",      "points",      "samples",    "epochs",
        "lr",           "width",        "layers",      "batch_size",  "x_min",      "x_max",
        "delta",        "phi0_points",  "phi0_samples", "phi0_epochs", "phi0_source", "rho_rate",
        "rho_tilde_lo", "rho_tilde_hi", "max_depth",   "branch_order", "prune",     "seed",
        "workers",      "output",       "max_variance_ratio"};
    return keys;
  }

  void set(const std::string& key, const std::string& value) {
    if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end())
      throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config key '" + key + "' is not set");
    return it->second;
  }

  double number(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || !std::isfinite(v)) throw ConfigError("config key '" + key + "' is not a number: " + s);
    return v;
  }

  long integer(const std::string& key) const {
    const double v = number(key);
    if (v != std::floor(v)) throw ConfigError("config key '" + key + "' must be an integer");
    return static_cast<long>(v);
  }

  std::size_t count(const std::string& key) const {
    const long v = integer(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }

  /// Lines "key = value"; '#' starts a comment.
  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Values from `other` override this config.
  void merge(const RunConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  /// Sorted "key = value" lines.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void fill(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (!cfg.has(key)) cfg.set(key, value);
}

inline int problem_dim(const std::string& problem) {
  if (problem == "taylor-green" || problem == "rotating") return 2;
  if (problem == "abc") return 3;
  if (problem == "semilinear-linear") return 1;
  throw ConfigError("unknown problem '" + problem + "' (taylor-green, abc, rotating, semilinear-linear)");
}

}  // namespace detail

/// Fills every unset key from the problem and scale defaults, then validates.
inline RunConfig resolve(RunConfig cfg) {
  using detail::fill;
  using detail::num;
  fill(cfg, "problem", "taylor-green");
  const std::string problem = cfg.get("problem");
  const int d = detail::problem_dim(problem);
  fill(cfg, "scale", "desk");
  const std::string scale = cfg.get("scale");
  if (scale != "desk" && scale != "paper") throw ConfigError("scale must be desk or paper");

  if (problem == "taylor-green") {
    fill(cfg, "nu", "1");
    fill(cfg, "T", "0.25");
  } else if (problem == "abc") {
    fill(cfg, "nu", "0.01");
    fill(cfg, "T", "0.7");
    fill(cfg, "A", "0.5");
    fill(cfg, "B", "0.5");
    fill(cfg, "C", "0.5");
  } else if (problem == "rotating") {
    fill(cfg, "nu", "0.1");
    fill(cfg, "T", "100");
    fill(cfg, "rotating_case", "1");
    fill(cfg, "x_min", num(-3.0));
    fill(cfg, "x_max", num(3.0));
  } else {
    fill(cfg, "nu", "0.5");
    fill(cfg, "T", "0.5");
    fill(cfg, "a", "0.5");
  }
  fill(cfg, "x_min", "0");
  fill(cfg, "x_max", num(2.0 * M_PI));

  if (scale == "desk") {
    fill(cfg, "points", "2000");
    fill(cfg, "samples", "200");
    fill(cfg, "epochs", "2000");
    fill(cfg, "delta", num(M_PI / 10.0));
    fill(cfg, "phi0_points", "4000");
    fill(cfg, "phi0_samples", "10000");
    fill(cfg, "phi0_epochs", "2000");
  } else {
    fill(cfg, "points", "100000");
    fill(cfg, "samples", "1000");
    fill(cfg, "epochs", "10000");
    fill(cfg, "delta", num(d == 3 ? M_PI / 45.0 : M_PI / 126.0));
    fill(cfg, "phi0_points", "100000");
    fill(cfg, "phi0_samples", "1000");
    fill(cfg, "phi0_epochs", "10000");
  }
  fill(cfg, "phi0_source", problem == "rotating" ? "network" : "exact");
  fill(cfg, "lr", "0.01");
  fill(cfg, "width", "100");
  fill(cfg, "layers", "3");
  fill(cfg, "batch_size", "0");
  fill(cfg, "max_variance_ratio", "100");
  fill(cfg, "rho_rate", "0");
  fill(cfg, "rho_tilde_lo", "1e-05");
  fill(cfg, "rho_tilde_hi", "6");
  fill(cfg, "max_depth", "1000");
  fill(cfg, "branch_order", "proof");
  fill(cfg, "prune", "0");
  fill(cfg, "seed", "0");
  fill(cfg, "workers", std::to_string(default_workers()));
  fill(cfg, "output", "runs/" + problem);

  if (!(cfg.number("nu") > 0.0)) throw ConfigError("nu must be > 0");
  if (!(cfg.number("T") > 0.0)) throw ConfigError("T must be > 0");
  if (!(cfg.number("x_max") > cfg.number("x_min"))) throw ConfigError("x_min must be < x_max");
  if (!(cfg.number("delta") > 0.0)) throw ConfigError("delta must be > 0");
  for (const char* k : {"points", "samples", "epochs", "phi0_points", "phi0_samples", "phi0_epochs", "width", "layers"})
    if (cfg.count(k) < 1) throw ConfigError(std::string(k) + " must be >= 1");
  if (!(cfg.number("lr") > 0.0)) throw ConfigError("lr must be > 0");
  (void)cfg.count("batch_size");
  if (cfg.number("max_variance_ratio") < 0.0) throw ConfigError("max_variance_ratio must be >= 0");
  (void)cfg.count("seed");
  if (cfg.integer("workers") < 1) throw ConfigError("workers must be >= 1");
  const std::string source = cfg.get("phi0_source");
  if (source != "exact" && source != "network") throw ConfigError("phi0_source must be exact or network");
  if (problem == "rotating" && source == "exact") throw ConfigError("rotating flows have no closed-form pressure");
  if (cfg.has("rotating_case")) {
    const long c = cfg.integer("rotating_case");
    if (c != 1 && c != 2) throw ConfigError("rotating_case must be 1 or 2");
  }
  if (!(cfg.number("rho_tilde_lo") > 0.0 && cfg.number("rho_tilde_hi") > cfg.number("rho_tilde_lo")))
    throw ConfigError("need 0 < rho_tilde_lo < rho_tilde_hi");
  if (cfg.number("rho_rate") < 0.0) throw ConfigError("rho_rate must be >= 0");
  (void)cfg.count("max_depth");
  const std::string order = cfg.get("branch_order");
  if (order != "proof" && order != "paper") throw ConfigError("branch_order must be proof or paper");
  const long prune = cfg.integer("prune");
  if (prune != 0 && prune != 1) throw ConfigError("prune must be 0 or 1");
  return cfg;
}

inline SamplerConfig sampler_config(const RunConfig& cfg) {
  SamplerConfig s;
  s.rho_rate = cfg.number("rho_rate");
  s.rho_tilde_lo = cfg.number("rho_tilde_lo");
  s.rho_tilde_hi = cfg.number("rho_tilde_hi");
  s.max_depth = static_cast<int>(cfg.integer("max_depth"));
  s.seed = cfg.count("seed");
  s.order = cfg.get("branch_order") == "paper" ? BranchOrder::paper_literal : BranchOrder::proof;
  s.prune_vanishing = cfg.integer("prune") == 1;
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

inline TrainConfig train_config(const RunConfig& cfg, bool phi0 = false) {
  TrainConfig t;
  t.points = cfg.count(phi0 ? "phi0_points" : "points");
  t.inner_samples = cfg.count(phi0 ? "phi0_samples" : "samples");
  t.epochs = static_cast<int>(cfg.count(phi0 ? "phi0_epochs" : "epochs"));
  t.learning_rate = cfg.number("lr");
  t.x_min = cfg.number("x_min");
  t.x_max = cfg.number("x_max");
  t.width = static_cast<int>(cfg.count("width"));
  t.layers = static_cast<int>(cfg.count("layers"));
  t.batch_size = cfg.count("batch_size");
  t.seed = cfg.count("seed");
  t.workers = static_cast<int>(cfg.integer("workers"));
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

/// The model, its exact solution when known, and how the terminal pressure
/// is obtained.
struct Problem {
  std::string name;
  int d = 0;
  std::optional<ExactFlow> exact;
  /// Terminal data with closed-form pressure, or velocity-only data.
  TerminalCondition base_terminal;
  bool has_pressure = true;
  double nu = 0.0;
  double T = 0.0;

  PDESystem model(const TerminalCondition& terminal) const {
    if (name == "semilinear-linear") return semilinear_linear_model(a, T);
    return navier_stokes_model(d, nu, T, terminal);
  }

  double a = 0.0;
};

inline Problem make_problem(const RunConfig& cfg) {
  Problem p;
  p.name = cfg.get("problem");
  p.d = detail::problem_dim(p.name);
  p.nu = cfg.number("nu");
  p.T = cfg.number("T");
  if (p.name == "taylor-green") {
    p.exact = taylor_green(p.nu, p.T);
  } else if (p.name == "abc") {
    p.exact = abc_flow(p.nu, cfg.number("A"), cfg.number("B"), cfg.number("C"), p.T);
  } else if (p.name == "rotating") {
    p.base_terminal = cfg.integer("rotating_case") == 1 ? rotating_case_1() : rotating_case_2();
    return p;
  } else {
    p.a = cfg.number("a");
    if (p.nu != 0.5) throw ConfigError("the semilinear model has nu = 0.5");
    p.exact = semilinear_linear_flow(p.a, p.T);
    p.has_pressure = false;
  }
  p.base_terminal = p.exact->terminal();
  return p;
}

/// Wall-clock timer for manifest entries.
class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// A failure inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, bool numerical)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), numerical_(numerical) {}
  const std::string& stage() const noexcept { return stage_; }
  bool numerical() const noexcept { return numerical_; }

 private:
  std::string stage_;
  bool numerical_;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& traj) {
  std::string out = "epoch,loss,lr\n";
  char buf[96];
  for (const auto& r : traj) {
    std::snprintf(buf, sizeof buf, "%d,%.10e,%.10e\n", r.epoch, r.loss, r.lr);
    out += buf;
  }
  write_text(path, out);
}

/// Pipeline over an output directory; each stage reads the artifacts of the
/// previous one so stages can also run separately.
class Experiment {
 public:
  explicit Experiment(RunConfig cfg) : cfg_(resolve(std::move(cfg))), problem_(make_problem(cfg_)) {
    sampler_ = sampler_config(cfg_);
    train_ = train_config(cfg_);
    phi0_train_ = train_config(cfg_, true);
    dir_ = cfg_.get("output");
    if (std::ifstream in(path("manifest.json")); in) {
      try {
        manifest_ = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception&) {
        manifest_ = nlohmann::json::object();
      }
    }
  }

  const RunConfig& config() const { return cfg_; }
  const Problem& problem() const { return problem_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  bool needs_phi0() const { return problem_.d >= 2 && problem_.has_pressure; }

  void pretrain_phi0_stage() {
    run_stage("pretrain-phi0", [&] {
      const PDESystem model = problem_.model(problem_.base_terminal);
      TrainResult r = pretrain_phi0(model, phi0_train_, sampler_);
      r.net.save(path("phi0.ckpt").string());
      write_loss_csv(path("phi0_loss.csv").string(), r.trajectory);
    });
  }

  void build_data_stage() {
    run_stage("build-data", [&] {
      const PDESystem model = tree_model();
      const TrainingSet set = build_training_set(model, train_, sampler_);
      set.save(path("training_set.bin").string());
      manifest_["training_set"] = {{"points", set.size()}, {"aborted_samples", set.aborted}};
    });
  }

  void train_stage() {
    run_stage("train", [&] {
      TrainingSet set = TrainingSet::load(path("training_set.bin").string());
      const std::size_t dropped = drop_high_variance(set, cfg_.number("max_variance_ratio"));
      manifest_["train"] = {{"points_used", set.size()}, {"points_dropped", dropped}};
      TrainResult r = train_deep_branching(set, train_);
      r.net.save(path("velocity.ckpt").string());
      write_loss_csv(path("loss.csv").string(), r.trajectory);
    });
  }

  /// Writes errors.csv / errors.json and slice CSVs (exact problems), or
  /// velocity fields at t_k (rotating flows).
  std::optional<ErrorReport> evaluate_stage() {
    std::optional<ErrorReport> report;
    run_stage("evaluate", [&] {
      const Network net = Network::load(path("velocity.ckpt").string());
      const NetworkVelocity velocity(net);
      const Grid grid(problem_.d, cfg_.number("delta"), cfg_.number("x_min"), cfg_.number("x_max"));
      if (!problem_.exact) {
        for (int k = 0; k < 10; ++k)
          write_text(path("field_k" + std::to_string(k) + ".csv").string(),
                     field_csv(velocity, grid, k * problem_.T / 10.0));
        return;
      }
      std::optional<Network> phi0;
      if (needs_phi0() && std::filesystem::exists(path("phi0.ckpt"))) phi0 = Network::load(path("phi0.ckpt").string());
      std::optional<NetworkPressure> pressure;
      if (phi0) pressure.emplace(*phi0);
      report = error_report(velocity, *problem_.exact, grid, pressure ? &*pressure : nullptr);
      write_text(path("errors.csv").string(), report->to_csv());
      write_text(path("errors.json").string(), report->to_json().dump(2) + "\n");
      const double level = 0.5 * (cfg_.number("x_min") + cfg_.number("x_max"));
      for (int i = 1; i <= problem_.d; ++i)
        write_text(path("slice_u" + std::to_string(i) + ".csv").string(),
                   slice_csv(velocity, *problem_.exact, grid, problem_.T / 2.0, i, 0, level));
    });
    return report;
  }

  /// All stages in order, then the manifest.
  std::optional<ErrorReport> run() {
    if (needs_phi0()) pretrain_phi0_stage();
    build_data_stage();
    train_stage();
    auto report = evaluate_stage();
    write_manifest();
    return report;
  }

  const SamplerConfig& sampler() const { return sampler_; }

  /// Model whose terminal data is used inside trees.
  PDESystem tree_model() const { return problem_.model(tree_terminal()); }

  void write_manifest() {
    std::filesystem::create_directories(dir_);
    manifest_["version"] = version;
    manifest_["git_revision"] = BRANCHPDE_GIT_REVISION;
    manifest_["config"] = cfg_.values();
    manifest_["config_hash"] = hex64(fnv1a(cfg_.canonical()));
    manifest_["seed"] = cfg_.count("seed");
    write_text(path("config.txt").string(), cfg_.canonical());
    write_text(path("manifest.json").string(), manifest_.dump(2) + "\n");
  }

 private:
  /// Terminal data used inside trees: closed-form pressure, or the
  /// pre-trained network when requested or required.
  TerminalCondition tree_terminal() const {
    if (cfg_.get("phi0_source") == "exact") return problem_.base_terminal;
    if (!std::filesystem::exists(path("phi0.ckpt")))
      throw std::runtime_error("phi0_source = network requires phi0.ckpt; run pretrain-phi0 first");
    return with_network_pressure(problem_.base_terminal, PressureNetwork(Network::load(path("phi0.ckpt").string())));
  }

  template <class Fn>
  void run_stage(const std::string& name, Fn&& fn) {
    std::filesystem::create_directories(dir_);
    const StageTimer timer;
    try {
      fn();
    } catch (const NumericalFailure& e) {
      throw StageError(name, e.what(), true);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what(), false);
    }
    manifest_["stages"][name] = {{"wall_seconds", timer.seconds()}};
  }

  RunConfig cfg_;
  Problem problem_;
  SamplerConfig sampler_;
  TrainConfig train_;
  TrainConfig phi0_train_;
  std::filesystem::path dir_;
  nlohmann::json manifest_;
};

}  // namespace branchpde
