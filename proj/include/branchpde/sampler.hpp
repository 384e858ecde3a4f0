#pragma once

// Coding-tree Monte Carlo: one draw of H(t, x, c) per call, and point
// estimates with standard errors over independent draws.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchpde/codes.hpp"
#include "branchpde/model.hpp"
#include "branchpde/parallel.hpp"

namespace branchpde {

using Rng = std::mt19937_64;

/// Independent stream for (seed, keys...). Keys identify the draw (point,
/// component, sample index) so results do not depend on evaluation order.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * keys.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Where Poisson codes are resolved relative to the terminal check.
enum class BranchOrder {
  /// Poisson codes always take the Poisson branch.
  proof,
  /// Terminal check first for every code, Poisson codes included.
  paper_literal,
};

struct SamplerConfig {
  /// Rate of the exponential branching time; <= 0 selects -ln(0.95)/T.
  double rho_rate = 0.0;
  /// Support of the uniform density used by the Poisson branch.
  double rho_tilde_lo = 1e-5;
  double rho_tilde_hi = 6.0;
  int max_depth = 1000;
  std::uint64_t seed = 0;
  BranchOrder order = BranchOrder::proof;
  bool prune_vanishing = false;

  double rate_for(double T) const { return rho_rate > 0.0 ? rho_rate : -std::log(0.95) / T; }

  void validate() const {
    if (!std::isfinite(rho_rate) || rho_rate < 0.0)
      throw std::invalid_argument("sampler: rho_rate must be positive (or 0 for the default)");
    if (!(rho_tilde_lo > 0.0) || !(rho_tilde_hi > rho_tilde_lo))
      throw std::invalid_argument("sampler: requires 0 < rho_tilde_lo < rho_tilde_hi");
    if (max_depth < 1) throw std::invalid_argument("sampler: max_depth must be >= 1");
  }
};

struct EstimateStats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  /// sqrt(Var / samples); NaN when fewer than two samples survived.
  double std_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t samples = 0;
  std::size_t aborted = 0;

  bool has_std_error() const noexcept { return samples >= 2; }
};

/// A draw that hit the depth cap, produced a non-finite weight, or needed a
/// derivative the terminal data cannot supply.
class SampleAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weight of the Poisson integral: |y|^2 log|y| for d = 2 and |y|^2 / (2 - d)
/// for d >= 3, with the Euclidean norm. Both vanish at y = 0.
inline double poisson_kernel(std::span<const double> y, int d) {
  if (d < 2) throw std::invalid_argument("poisson_kernel: requires d >= 2");
  if (static_cast<int>(y.size()) != d) throw std::invalid_argument("poisson_kernel: size mismatch");
  double r2 = 0.0;
  for (double v : y) r2 += v * v;
  if (r2 == 0.0) return 0.0;
  if (d == 2) return 0.5 * r2 * std::log(r2);
  return r2 / static_cast<double>(2 - d);
}

/// Compensated (Neumaier) running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mean and standard error of the finite entries of `values`; `aborted`
/// entries are NaN.
inline EstimateStats summarize(std::span<const double> values) {
  EstimateStats s;
  CompensatedSum sum;
  for (double v : values) {
    if (std::isnan(v)) {
      ++s.aborted;
      continue;
    }
    sum.add(v);
    ++s.samples;
  }
  if (s.samples == 0) return s;
  s.mean = sum.value() / static_cast<double>(s.samples);
  if (s.samples >= 2) {
    CompensatedSum sq;
    for (double v : values)
      if (!std::isnan(v)) sq.add((v - s.mean) * (v - s.mean));
    const double var = sq.value() / static_cast<double>(s.samples - 1);
    s.std_error = std::sqrt(var / static_cast<double>(s.samples));
  }
  return s;
}

/// Draws H(t, x, c) along random coding trees. Thread safe: every call uses
/// only its own random stream, and the mechanism table is internally locked.
class TreeSampler {
 public:
  TreeSampler(const PDESystem& model, SamplerConfig cfg)
      : model_(&model),
        cfg_(cfg),
        table_(model, MechanismOptions{cfg.prune_vanishing}),
        terminal_(model.terminal),
        rate_(cfg.rate_for(model.T)) {
    model.validate();
    cfg_.validate();
  }

  const PDESystem& model() const noexcept { return *model_; }
  const SamplerConfig& config() const noexcept { return cfg_; }
  double rate() const noexcept { return rate_; }
  MechanismTable& table() noexcept { return table_; }

  /// Survival function of the branching time.
  double survival(double s) const { return std::exp(-rate_ * s); }

  /// One draw of H(t, x, c). Throws SampleAborted on a failed draw.
  double sample(double t, std::span<const double> x, const Code& c, Rng& rng) {
    check_code(c, *model_);
    return sample(t, x, table_.intern(c), rng);
  }

  double sample(double t, std::span<const double> x, CodeId id, Rng& rng) {
    if (!(t >= 0.0 && t <= model_->T)) throw std::invalid_argument("tree_sample: t outside [0, T]");
    if (static_cast<int>(x.size()) != model_->d)
      throw std::invalid_argument("tree_sample: point has wrong dimension");
    try {
      return node(t, x, id, 0, rng);
    } catch (const OracleError& e) {
      throw SampleAborted(e.what());
    }
  }

  /// Mean and standard error of m draws of H(t, x, Id_i). Draw k uses the
  /// stream (seed, stream_key, k), so serial and parallel runs agree bit for bit.
  EstimateStats estimate(double t, std::span<const double> x, int i, std::size_t m,
                         int workers = 1, std::uint64_t stream_key = 0) {
    if (m < 1) throw std::invalid_argument("mc_estimate: requires m >= 1");
    const CodeId root = table_.intern(Identity{i});
    check_code(Identity{i}, *model_);
    std::vector<double> values(m);
    const std::vector<double> point(x.begin(), x.end());
    parallel_for(m, workers, [&](std::size_t k) {
      Rng rng = make_stream(cfg_.seed, {stream_key, static_cast<std::uint64_t>(k)});
      try {
        values[k] = sample(t, point, root, rng);
      } catch (const SampleAborted&) {
        values[k] = std::numeric_limits<double>::quiet_NaN();
        ++aborts_;
      }
    });
    EstimateStats s = summarize(values);
    if (s.samples == 0) throw std::runtime_error("mc_estimate: all samples aborted");
    return s;
  }

  std::size_t abort_count() const noexcept { return aborts_.load(); }
  std::size_t kernel_underflows() const noexcept { return underflows_.load(); }

 private:
  double node(double t, std::span<const double> x, CodeId id, int depth, Rng& rng) {
    if (depth > cfg_.max_depth)
      throw SampleAborted("coding tree exceeded max_depth " + std::to_string(cfg_.max_depth));
    const Code& c = table_.code(id);
    const bool poisson = is_poisson_code(c);
    if (poisson && cfg_.order == BranchOrder::proof) return poisson_branch(t, x, id, depth, rng);

    std::exponential_distribution<double> branch_time(rate_);
    const double tau = branch_time(rng);
    const std::size_t d = x.size();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> y(d);

    if (t + tau > model_->T) {
      const double sd = std::sqrt(2.0 * model_->nu * (model_->T - t));
      for (std::size_t k = 0; k < d; ++k) y[k] = x[k] + sd * normal(rng);
      const double value =
          eval_code(c, *model_, terminal_, model_->T, y) / survival(model_->T - t);
      if (!std::isfinite(value)) throw SampleAborted("non-finite terminal value");
      return value;
    }
    if (poisson) return poisson_branch(t, x, id, depth, rng);

    const auto& kids = table_.children(id);
    if (kids.empty()) return 0.0;
    const double sd = std::sqrt(2.0 * model_->nu * tau);
    for (std::size_t k = 0; k < d; ++k) y[k] = x[k] + sd * normal(rng);
    std::uniform_int_distribution<std::size_t> pick(0, kids.size() - 1);
    const auto& chosen = kids[pick(rng)];
    const double density = rate_ * std::exp(-rate_ * tau);
    double h = static_cast<double>(kids.size()) / density;
    for (CodeId child : chosen) {
      h *= node(t + tau, y, child, depth + 1, rng);
      if (h == 0.0) break;
    }
    if (!std::isfinite(h)) throw SampleAborted("non-finite tree weight");
    return h;
  }

  double poisson_branch(double t, std::span<const double> x, CodeId id, int depth, Rng& rng) {
    const std::size_t d = x.size();
    std::uniform_real_distribution<double> spread(cfg_.rho_tilde_lo, cfg_.rho_tilde_hi);
    const double tau = spread(rng);
    const auto& kids = table_.children(id);
    if (kids.empty()) return 0.0;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> y(d), w(d);
    const double sd = std::sqrt(tau);
    for (std::size_t k = 0; k < d; ++k) {
      w[k] = sd * normal(rng);
      y[k] = x[k] + w[k];
    }
    const double kernel = poisson_kernel(w, static_cast<int>(d));
    if (kernel == 0.0) {
      if (d >= 3) ++underflows_;
      return 0.0;
    }
    std::uniform_int_distribution<std::size_t> pick(0, kids.size() - 1);
    const auto& chosen = kids[pick(rng)];
    const double density = 1.0 / (cfg_.rho_tilde_hi - cfg_.rho_tilde_lo);
    double h = kernel * static_cast<double>(kids.size()) / (2.0 * tau * density);
    for (CodeId child : chosen) {
      h *= node(t, y, child, depth + 1, rng);
      if (h == 0.0) break;
    }
    if (!std::isfinite(h)) throw SampleAborted("non-finite tree weight");
    return h;
  }

  const PDESystem* model_;
  SamplerConfig cfg_;
  MechanismTable table_;
  TerminalOracle terminal_;
  double rate_;
  std::atomic<std::size_t> aborts_{0};
  std::atomic<std::size_t> underflows_{0};
};

}  // namespace branchpde
