#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchpde/flows.hpp"
#include "branchpde/model.hpp"
#include "branchpde/network.hpp"
#include "branchpde/parallel.hpp"
#include "branchpde/sampler.hpp"

namespace branchpde {

/// Non-finite loss, excessive aborts and similar numerical breakdowns.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t points = 2000;          // N
  std::size_t inner_samples = 200;    // M
  int epochs = 2000;                  // P
  double learning_rate = 0.01;
  std::vector<int> lr_drop_epochs{1000, 2000};
  double lr_drop_factor = 10.0;
  double x_min = 0.0;
  double x_max = 2.0 * M_PI;
  int width = 100;
  int layers = 3;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  int workers = 1;
  double max_abort_fraction = 0.01;

  void validate() const {
    if (points < 1) throw std::invalid_argument("train: N must be >= 1");
    if (inner_samples < 1) throw std::invalid_argument("train: M must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train: P must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (!(lr_drop_factor > 0.0)) throw std::invalid_argument("train: lr drop factor must be > 0");
    if (!(x_max > x_min)) throw std::invalid_argument("train: requires x_min < x_max");
    if (width < 1 || layers < 1) throw std::invalid_argument("train: width and layers must be >= 1");
  }

  double learning_rate_at(int epoch) const {
    double lr = learning_rate;
    for (int e : lr_drop_epochs)
      if (epoch >= e) lr /= lr_drop_factor;
    return lr;
  }
};

/// Regression data: inputs (columns), Monte Carlo means and their sample
/// variances.
struct TrainingSet {
  Matrix inputs;     // input_dim x N
  Matrix targets;    // output_dim x N
  Matrix variances;  // output_dim x N
  std::size_t aborted = 0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("training set: cannot write " + path);
    out.write("BPDEDATA", 8);
    const double header[] = {1.0, static_cast<double>(inputs.rows()), static_cast<double>(targets.rows()),
                             static_cast<double>(inputs.cols()), static_cast<double>(aborted)};
    write(out, header);
    write(out, std::span<const double>(inputs.data(), static_cast<std::size_t>(inputs.size())));
    write(out, std::span<const double>(targets.data(), static_cast<std::size_t>(targets.size())));
    write(out, std::span<const double>(variances.data(), static_cast<std::size_t>(variances.size())));
    if (!out) throw std::runtime_error("training set: write failed for " + path);
  }

  static TrainingSet load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("training set: cannot read " + path);
    char tag[8];
    in.read(tag, 8);
    if (!in || std::memcmp(tag, "BPDEDATA", 8) != 0)
      throw std::runtime_error("training set: bad header in " + path);
    double header[5];
    read(in, header);
    if (header[0] != 1.0) throw std::runtime_error("training set: unsupported version");
    TrainingSet s;
    const auto rows_in = static_cast<Eigen::Index>(header[1]);
    const auto rows_out = static_cast<Eigen::Index>(header[2]);
    const auto n = static_cast<Eigen::Index>(header[3]);
    s.aborted = static_cast<std::size_t>(header[4]);
    s.inputs.resize(rows_in, n);
    s.targets.resize(rows_out, n);
    s.variances.resize(rows_out, n);
    read(in, std::span<double>(s.inputs.data(), static_cast<std::size_t>(s.inputs.size())));
    read(in, std::span<double>(s.targets.data(), static_cast<std::size_t>(s.targets.size())));
    read(in, std::span<double>(s.variances.data(), static_cast<std::size_t>(s.variances.size())));
    if (!in) throw std::runtime_error("training set: truncated file " + path);
    return s;
  }

 private:
  static void write(std::ostream& out, std::span<const double> v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  static void read(std::istream& in, std::span<double> v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
};

/// Stream tags keeping the random draws of different stages apart.
enum StreamTag : std::uint64_t {
  tag_points = 1,
  tag_trees = 2,
  tag_init = 3,
  tag_shuffle = 4,
  tag_phi0_points = 5,
  tag_phi0_samples = 6,
};

/// N uniform points on [0, T] x [x_min, x_max]^d with M tree samples per
/// point and component.
inline TrainingSet build_training_set(const PDESystem& model, const TrainConfig& cfg,
                                      const SamplerConfig& sampler_cfg) {
  cfg.validate();
  const int d = model.d;
  TrainingSet set;
  set.inputs.resize(d + 1, static_cast<Eigen::Index>(cfg.points));
  set.targets.resize(d, static_cast<Eigen::Index>(cfg.points));
  set.variances.resize(d, static_cast<Eigen::Index>(cfg.points));
  Rng rng = make_stream(cfg.seed, {tag_points});
  std::uniform_real_distribution<double> ut(0.0, model.T);
  std::uniform_real_distribution<double> ux(cfg.x_min, cfg.x_max);
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j) {
    set.inputs(0, j) = ut(rng);
    for (int a = 0; a < d; ++a) set.inputs(1 + a, j) = ux(rng);
  }
  SamplerConfig sc = sampler_cfg;
  sc.seed = cfg.seed;
  TreeSampler sampler(model, sc);
  std::vector<std::size_t> aborted(cfg.points, 0);
  parallel_for(cfg.points, cfg.workers, [&](std::size_t j) {
    const auto jj = static_cast<Eigen::Index>(j);
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) x[static_cast<std::size_t>(a)] = set.inputs(1 + a, jj);
    for (int i = 1; i <= d; ++i) {
      const std::uint64_t key = (tag_trees << 56) | (static_cast<std::uint64_t>(j) << 8) | static_cast<std::uint64_t>(i);
      EstimateStats s;
      try {
        s = sampler.estimate(set.inputs(0, jj), x, i, cfg.inner_samples, 1, key);
      } catch (const std::runtime_error&) {
        s.aborted = cfg.inner_samples;
      }
      aborted[j] += s.aborted;
      if (static_cast<double>(s.aborted) > cfg.max_abort_fraction * static_cast<double>(cfg.inner_samples))
        throw NumericalFailure("build_training_set: " + std::to_string(s.aborted) + " of " +
                               std::to_string(cfg.inner_samples) + " samples aborted at point " +
                               std::to_string(j) + ", component " + std::to_string(i));
      set.targets(i - 1, jj) = s.mean;
      set.variances(i - 1, jj) = s.has_std_error() ? s.std_error * s.std_error * static_cast<double>(s.samples) : 0.0;
    }
  });
  set.aborted = std::accumulate(aborted.begin(), aborted.end(), std::size_t{0});
  return set;
}

struct LossRecord {
  int epoch;
  double loss;
  double lr;
};

struct TrainResult {
  Network net;
  std::vector<LossRecord> trajectory;
};

class Adam {
 public:
  explicit Adam(Eigen::Index size) : m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& grad, double lr) {
    ++t_;
    m_ = beta1 * m_ + (1.0 - beta1) * grad;
    v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, t_);
    const double c2 = 1.0 - std::pow(beta2, t_);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

 private:
  Vector m_, v_;
  int t_ = 0;
};

/// Minimizes sum_i N^-1 sum_j (Y_ij - v_i(X_j))^2 with Adam. Records the
/// loss of every epoch before its update, plus a final row at epoch P.
inline TrainResult fit_network(const Matrix& X, const Matrix& Y, const TrainConfig& cfg) {
  cfg.validate();
  if (X.cols() != Y.cols() || X.cols() == 0) throw std::invalid_argument("fit: empty or mismatched data");
  if (!Y.allFinite()) throw NumericalFailure("fit: non-finite regression targets");
  const NetworkShape shape{static_cast<int>(X.rows()), static_cast<int>(Y.rows()), cfg.width, cfg.layers};
  Rng init = make_stream(cfg.seed, {tag_init});
  TrainResult result{Network::random(shape, init), {}};
  Network& net = result.net;
  Adam adam(net.parameters().size());
  const auto N = static_cast<std::size_t>(X.cols());
  const std::size_t batch = cfg.batch_size == 0 || cfg.batch_size >= N ? N : cfg.batch_size;
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Network::TrainCache cache;
  result.trajectory.reserve(static_cast<std::size_t>(cfg.epochs) + 1);

  auto batch_loss = [&](Network& model, const Matrix& xb, const Matrix& yb, bool update, double lr) {
    const Matrix out = model.forward_train(xb, cache);
    const Matrix diff = out - yb;
    const double n = static_cast<double>(xb.cols());
    const double loss = diff.squaredNorm() / n;
    if (!std::isfinite(loss)) return loss;
    if (update) adam.step(model.parameters(), model.backward(cache, (2.0 / n) * diff), lr);
    return loss;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    double loss = 0.0;
    if (batch == N) {
      loss = batch_loss(net, X, Y, true, lr);
    } else {
      Rng shuffle = make_stream(cfg.seed, {tag_shuffle, static_cast<std::uint64_t>(epoch)});
      std::shuffle(order.begin(), order.end(), shuffle);
      std::size_t batches = 0;
      for (std::size_t start = 0; start + batch <= N; start += batch, ++batches) {
        Matrix xb(X.rows(), static_cast<Eigen::Index>(batch));
        Matrix yb(Y.rows(), static_cast<Eigen::Index>(batch));
        for (std::size_t k = 0; k < batch; ++k) {
          xb.col(static_cast<Eigen::Index>(k)) = X.col(order[start + k]);
          yb.col(static_cast<Eigen::Index>(k)) = Y.col(order[start + k]);
        }
        loss += batch_loss(net, xb, yb, true, lr);
      }
      loss /= static_cast<double>(batches);
    }
    if (!std::isfinite(loss))
      throw NumericalFailure("training: non-finite loss at epoch " + std::to_string(epoch) + " (lr " +
                             std::to_string(lr) + ")");
    result.trajectory.push_back({epoch, loss, lr});
  }
  Network probe = net;
  const double final_loss = batch_loss(probe, X, Y, false, 0.0);
  if (!std::isfinite(final_loss)) throw NumericalFailure("training: non-finite final loss");
  result.trajectory.push_back({cfg.epochs, final_loss, cfg.learning_rate_at(cfg.epochs)});
  return result;
}

inline TrainResult train_deep_branching(const TrainingSet& data, const TrainConfig& cfg) {
  return fit_network(data.inputs, data.targets, cfg);
}

/// Removes points whose largest per-component sample variance exceeds
/// `ratio` times the median of that quantity; ratio <= 0 keeps everything.
/// Rare deep trees carry huge weights, and a single one can dominate an
/// L2 fit. Returns the number of points removed.
inline std::size_t drop_high_variance(TrainingSet& set, double ratio) {
  const Eigen::Index n = set.inputs.cols();
  if (!(ratio > 0.0) || n == 0) return 0;
  std::vector<double> worst(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) worst[static_cast<std::size_t>(j)] = set.variances.col(j).maxCoeff();
  std::vector<double> sorted = worst;
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double limit = ratio * *mid;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < n; ++j)
    if (worst[static_cast<std::size_t>(j)] <= limit) keep.push_back(j);
  if (keep.empty()) throw NumericalFailure("variance filter removed every training point");
  const auto k = static_cast<Eigen::Index>(keep.size());
  TrainingSet out;
  out.aborted = set.aborted;
  out.inputs.resize(set.inputs.rows(), k);
  out.targets.resize(set.targets.rows(), k);
  out.variances.resize(set.variances.rows(), k);
  for (Eigen::Index r = 0; r < k; ++r) {
    out.inputs.col(r) = set.inputs.col(keep[static_cast<std::size_t>(r)]);
    out.targets.col(r) = set.targets.col(keep[static_cast<std::size_t>(r)]);
    out.variances.col(r) = set.variances.col(keep[static_cast<std::size_t>(r)]);
  }
  const std::size_t dropped = set.size() - out.size();
  set = std::move(out);
  return dropped;
}

/// Sampling box for the pressure pre-training: the domain widened by half
/// its length on each side.
inline std::pair<double, double> phi0_box(double x_min, double x_max) {
  const double half = 0.5 * (x_max - x_min);
  return {x_min - half, x_max + half};
}

/// Poisson-kernel targets N(Y) f_0(...)(X + Y) / (2 tau rho(tau)) averaged over
/// M draws at N uniform points of the widened box.
inline TrainingSet build_phi0_set(const PDESystem& model, const TrainConfig& cfg, const SamplerConfig& sampler_cfg) {
  cfg.validate();
  sampler_cfg.validate();
  if (model.d < 2) throw std::invalid_argument("pretrain_phi0: requires d >= 2");
  const int d = model.d;
  const auto [lo, hi] = phi0_box(cfg.x_min, cfg.x_max);
  TrainingSet set;
  set.inputs.resize(d, static_cast<Eigen::Index>(cfg.points));
  set.targets.resize(1, static_cast<Eigen::Index>(cfg.points));
  set.variances.resize(1, static_cast<Eigen::Index>(cfg.points));
  Rng rng = make_stream(cfg.seed, {tag_phi0_points});
  std::uniform_real_distribution<double> ux(lo, hi);
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j)
    for (int a = 0; a < d; ++a) set.inputs(a, j) = ux(rng);
  const double density = 1.0 / (sampler_cfg.rho_tilde_hi - sampler_cfg.rho_tilde_lo);
  parallel_for(cfg.points, cfg.workers, [&](std::size_t j) {
    const auto jj = static_cast<Eigen::Index>(j);
    Rng r = make_stream(cfg.seed, {tag_phi0_samples, static_cast<std::uint64_t>(j)});
    std::uniform_real_distribution<double> spread(sampler_cfg.rho_tilde_lo, sampler_cfg.rho_tilde_hi);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    std::vector<double> args(static_cast<std::size_t>(model.n), 0.0);
    std::vector<double> values(cfg.inner_samples);
    const MultiIndex zero(static_cast<std::size_t>(model.n));
    for (std::size_t k = 0; k < cfg.inner_samples; ++k) {
      const double tau = spread(r);
      for (int a = 0; a < d; ++a) {
        w[static_cast<std::size_t>(a)] = std::sqrt(tau) * normal(r);
        y[static_cast<std::size_t>(a)] = set.inputs(a, jj) + w[static_cast<std::size_t>(a)];
      }
      for (int s = model.q; s < model.n; ++s)
        args[static_cast<std::size_t>(s)] = eval_terminal_derivative(
            model.terminal, model.beta[static_cast<std::size_t>(s)], model.alpha[static_cast<std::size_t>(s)], y);
      values[k] = poisson_kernel(w, d) / (2.0 * tau * density) * model.f_deriv(0, zero, args);
    }
    const EstimateStats s = summarize(values);
    set.targets(0, jj) = s.mean;
    set.variances(0, jj) = s.has_std_error() ? s.std_error * s.std_error * static_cast<double>(s.samples) : 0.0;
  });
  return set;
}

inline TrainResult pretrain_phi0(const PDESystem& model, const TrainConfig& cfg, const SamplerConfig& sampler_cfg) {
  return train_deep_branching(build_phi0_set(model, cfg, sampler_cfg), cfg);
}

/// Derivatives of a scalar network phi_0 of order <= 2, for terminal data.
/// Keeps the last point's jet per thread, since the argument tuple asks for
/// several derivatives at the same point.
class PressureNetwork {
 public:
  explicit PressureNetwork(Network net)
      : net_(std::make_shared<const Network>(std::move(net))), id_(next_id()) {
    if (net_->shape().output_dim != 1) throw std::invalid_argument("pressure network must have one output");
  }

  const Network& network() const { return *net_; }

  double derivative(const MultiIndex& mu, std::span<const double> x) const {
    const int order = mu.norm();
    if (order > 2) throw OracleError("pressure network supplies derivatives up to order 2 only");
    if (order == 0) return net_->forward(x)(0);
    thread_local std::uint64_t cached_id = 0;
    thread_local std::vector<double> cached_x;
    thread_local SecondOrderJet cached;
    if (cached_id != id_ || !std::equal(x.begin(), x.end(), cached_x.begin(), cached_x.end())) {
      cached = net_->second_order(x);
      cached_id = id_;
      cached_x.assign(x.begin(), x.end());
    }
    int idx[2] = {0, 0};
    int found = 0;
    for (std::size_t a = 0; a < mu.size(); ++a)
      for (int r = 0; r < mu[a]; ++r) idx[found++] = static_cast<int>(a);
    if (order == 1) return cached.gradient(0, idx[0]);
    return cached.hessian[0](idx[0], idx[1]);
  }

  PressureDerivative as_function() const {
    return [self = *this](const MultiIndex& mu, std::span<const double> x) { return self.derivative(mu, x); };
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::shared_ptr<const Network> net_;
  std::uint64_t id_;
};

/// Terminal data whose pressure comes from a pre-trained network.
inline TerminalCondition with_network_pressure(TerminalCondition base, const PressureNetwork& pressure) {
  return attach_pressure(std::move(base), pressure.as_function(), 2);
}

}  // namespace branchpde
