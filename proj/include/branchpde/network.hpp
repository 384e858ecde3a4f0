#pragma once

// Residual tanh network with a batch-normalization layer in front of every
// affine map:
//   h_1     = tanh(W_0 BN_0(x) + b_0)
//   h_{k+1} = h_k + tanh(W_k BN_k(h_k) + b_k),   k = 1..l-1
//   v       = W_l BN_l(h_l) + b_l
// Weights and biases (theta) come first in one flat vector, followed by the
// normalization scales and shifts.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace branchpde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetworkShape {
  int input_dim = 1;
  int output_dim = 1;
  int width = 100;
  /// Number of hidden layers l (one input layer plus l - 1 residual layers).
  int layers = 3;

  void validate() const {
    if (input_dim < 1 || output_dim < 1 || width < 1 || layers < 1)
      throw std::invalid_argument("network: dimensions, width and layers must be >= 1");
  }
  int in(int k) const { return k == 0 ? input_dim : width; }
  int out(int k) const { return k == layers ? output_dim : width; }

  /// (d1 + 1) m + (l - 1)(m + 1) m + (m + 1) d2.
  std::size_t theta_count() const {
    const auto m = static_cast<std::size_t>(width);
    return (static_cast<std::size_t>(input_dim) + 1) * m +
           static_cast<std::size_t>(layers - 1) * (m + 1) * m +
           (m + 1) * static_cast<std::size_t>(output_dim);
  }

  std::size_t norm_count() const {
    return 2 * (static_cast<std::size_t>(input_dim) +
                static_cast<std::size_t>(layers) * static_cast<std::size_t>(width));
  }

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

/// Value, gradient and Hessian of every output at one point.
struct SecondOrderJet {
  Vector value;                  // output_dim
  Matrix gradient;               // output_dim x input_dim
  std::vector<Matrix> hessian;   // output_dim entries of input_dim x input_dim
};

class Network {
 public:
  static constexpr double momentum = 0.1;
  static constexpr double epsilon = 1e-5;

  /// Zero weights, identity normalization.
  explicit Network(NetworkShape shape) : shape_(shape) {
    shape_.validate();
    std::size_t offset = 0;
    for (int k = 0; k <= shape_.layers; ++k) {
      w_off_.push_back(offset);
      offset += static_cast<std::size_t>(shape_.out(k) * shape_.in(k));
      b_off_.push_back(offset);
      offset += static_cast<std::size_t>(shape_.out(k));
    }
    for (int k = 0; k <= shape_.layers; ++k) {
      g_off_.push_back(offset);
      offset += static_cast<std::size_t>(shape_.in(k));
      s_off_.push_back(offset);
      offset += static_cast<std::size_t>(shape_.in(k));
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
    for (int k = 0; k <= shape_.layers; ++k) {
      gamma(k).setOnes();
      running_mean_.push_back(Vector::Zero(shape_.in(k)));
      running_var_.push_back(Vector::Ones(shape_.in(k)));
    }
  }

  /// Weights and biases uniform in +-1/sqrt(fan_in).
  template <class Rng>
  static Network random(NetworkShape shape, Rng& rng) {
    Network net(shape);
    for (int k = 0; k <= shape.layers; ++k) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.in(k)));
      std::uniform_real_distribution<double> u(-bound, bound);
      auto w = net.weight(k);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
      auto b = net.bias(k);
      for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = u(rng);
    }
    return net;
  }

  const NetworkShape& shape() const noexcept { return shape_; }
  std::size_t parameter_count() const { return shape_.theta_count(); }

  Vector& parameters() noexcept { return params_; }
  const Vector& parameters() const noexcept { return params_; }

  Eigen::Map<RowMatrix> weight(int k) {
    return {params_.data() + w_off_[k], shape_.out(k), shape_.in(k)};
  }
  Eigen::Map<const RowMatrix> weight(int k) const {
    return {params_.data() + w_off_[k], shape_.out(k), shape_.in(k)};
  }
  Eigen::Map<Vector> bias(int k) { return {params_.data() + b_off_[k], shape_.out(k)}; }
  Eigen::Map<const Vector> bias(int k) const { return {params_.data() + b_off_[k], shape_.out(k)}; }
  Eigen::Map<Vector> gamma(int k) { return {params_.data() + g_off_[k], shape_.in(k)}; }
  Eigen::Map<const Vector> gamma(int k) const { return {params_.data() + g_off_[k], shape_.in(k)}; }
  Eigen::Map<Vector> beta(int k) { return {params_.data() + s_off_[k], shape_.in(k)}; }
  Eigen::Map<const Vector> beta(int k) const { return {params_.data() + s_off_[k], shape_.in(k)}; }
  Vector& running_mean(int k) { return running_mean_[static_cast<std::size_t>(k)]; }
  const Vector& running_mean(int k) const { return running_mean_[static_cast<std::size_t>(k)]; }
  Vector& running_var(int k) { return running_var_[static_cast<std::size_t>(k)]; }
  const Vector& running_var(int k) const { return running_var_[static_cast<std::size_t>(k)]; }

  /// Inference forward pass; columns of X are inputs.
  Matrix forward(const Matrix& X) const {
    check_input(X.rows());
    Matrix h = X;
    for (int k = 0; k <= shape_.layers; ++k) {
      const auto [scale, shift] = inference_affine(k);
      Matrix a = (h.array().colwise() * scale.array()).colwise() + shift.array();
      Matrix z = (weight(k) * a).colwise() + bias(k);
      if (k == shape_.layers) return z;
      if (k == 0)
        h = z.array().tanh();
      else
        h.array() += z.array().tanh();
    }
    return h;
  }

  Vector forward(std::span<const double> x) const {
    const Eigen::Map<const Vector> col(x.data(), static_cast<Eigen::Index>(x.size()));
    return forward(Matrix(col)).col(0);
  }

  struct TrainCache {
    std::vector<Matrix> xhat;    // normalized inputs of each BN layer
    std::vector<Vector> inv_std;
    std::vector<Matrix> act;     // tanh outputs of hidden layers
    std::vector<Matrix> bn_out;  // inputs of each affine layer
  };

  /// Training forward pass with batch statistics; updates running averages.
  Matrix forward_train(const Matrix& X, TrainCache& cache) {
    check_input(X.rows());
    const auto L = static_cast<std::size_t>(shape_.layers) + 1;
    cache.xhat.resize(L);
    cache.inv_std.resize(L);
    cache.act.resize(L);
    cache.bn_out.resize(L);
    const Eigen::Index B = X.cols();
    Matrix h = X;
    for (int k = 0; k <= shape_.layers; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const Vector mean = h.rowwise().mean();
      Matrix centered = h.colwise() - mean;
      const Vector var = centered.array().square().rowwise().mean();
      cache.inv_std[ku] = (var.array() + epsilon).rsqrt();
      cache.xhat[ku] = centered.array().colwise() * cache.inv_std[ku].array();
      const double unbias = B > 1 ? static_cast<double>(B) / static_cast<double>(B - 1) : 1.0;
      running_mean_[ku] = (1.0 - momentum) * running_mean_[ku] + momentum * mean;
      running_var_[ku] = (1.0 - momentum) * running_var_[ku] + momentum * unbias * var;
      cache.bn_out[ku] =
          (cache.xhat[ku].array().colwise() * gamma(k).array()).colwise() + beta(k).array();
      Matrix z = (weight(k) * cache.bn_out[ku]).colwise() + bias(k);
      if (k == shape_.layers) return z;
      cache.act[ku] = z.array().tanh();
      if (k == 0)
        h = cache.act[ku];
      else
        h += cache.act[ku];
    }
    return h;
  }

  /// Gradient of sum(dY .* Y) with respect to all parameters, for the batch
  /// cached by forward_train.
  Vector backward(const TrainCache& cache, const Matrix& dY) const {
    Vector grad = Vector::Zero(params_.size());
    Matrix dz = dY;
    Matrix dh;
    for (int k = shape_.layers; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      if (k < shape_.layers) dz = dh.array() * (1.0 - cache.act[ku].array().square());
      Eigen::Map<RowMatrix>(grad.data() + w_off_[ku], shape_.out(k), shape_.in(k)) =
          dz * cache.bn_out[ku].transpose();
      grad.segment(static_cast<Eigen::Index>(b_off_[ku]), shape_.out(k)) = dz.rowwise().sum();
      const Matrix da = weight(k).transpose() * dz;
      grad.segment(static_cast<Eigen::Index>(g_off_[ku]), shape_.in(k)) =
          (da.array() * cache.xhat[ku].array()).rowwise().sum();
      grad.segment(static_cast<Eigen::Index>(s_off_[ku]), shape_.in(k)) = da.rowwise().sum();
      if (k == 0) break;
      const Matrix dxhat = da.array().colwise() * gamma(k).array();
      const Vector mean_d = dxhat.rowwise().mean();
      const Vector mean_dx = (dxhat.array() * cache.xhat[ku].array()).rowwise().mean();
      Matrix dbn = dxhat.colwise() - mean_d;
      dbn -= (cache.xhat[ku].array().colwise() * mean_dx.array()).matrix();
      dbn = dbn.array().colwise() * cache.inv_std[ku].array();
      // Residual layers pass dh through unchanged.
      if (k == shape_.layers)
        dh = dbn;
      else
        dh += dbn;
    }
    return grad;
  }

  /// d v_output / d x for every column of X (inference mode); input_dim x B.
  Matrix input_gradient(const Matrix& X, int output) const {
    check_input(X.rows());
    if (output < 0 || output >= shape_.output_dim)
      throw std::out_of_range("network: output index out of range");
    std::vector<Matrix> act(static_cast<std::size_t>(shape_.layers));
    Matrix h = X;
    for (int k = 0; k < shape_.layers; ++k) {
      const auto [scale, shift] = inference_affine(k);
      Matrix a = (h.array().colwise() * scale.array()).colwise() + shift.array();
      Matrix z = (weight(k) * a).colwise() + bias(k);
      act[static_cast<std::size_t>(k)] = z.array().tanh();
      if (k == 0)
        h = act[0];
      else
        h += act[static_cast<std::size_t>(k)];
    }
    const Eigen::Index B = X.cols();
    auto scale_of = [this](int k) { return std::get<0>(inference_affine(k)); };
    // Output layer: dv/dh_l = (W_l row) .* scale_l, identical for every column.
    Vector row = weight(shape_.layers).row(output).transpose().array() * scale_of(shape_.layers).array();
    Matrix dh = row.replicate(1, B);
    for (int k = shape_.layers - 1; k >= 0; --k) {
      const Matrix dz = dh.array() * (1.0 - act[static_cast<std::size_t>(k)].array().square());
      const Matrix da = weight(k).transpose() * dz;
      const Matrix dbn = da.array().colwise() * scale_of(k).array();
      if (k == 0) return dbn;
      dh += dbn;
    }
    return dh;
  }

  /// Jacobian (output_dim x input_dim) at one point.
  Matrix input_gradient(std::span<const double> x) const {
    const Eigen::Map<const Vector> col(x.data(), static_cast<Eigen::Index>(x.size()));
    const Matrix X = col;
    Matrix J(shape_.output_dim, shape_.input_dim);
    for (int o = 0; o < shape_.output_dim; ++o) J.row(o) = input_gradient(X, o).col(0).transpose();
    return J;
  }

  /// Forward-mode value, gradient and Hessian at one point (inference mode).
  SecondOrderJet second_order(std::span<const double> x) const {
    check_input(static_cast<Eigen::Index>(x.size()));
    const int n = shape_.input_dim;
    Vector h = Eigen::Map<const Vector>(x.data(), n);
    Matrix h1 = Matrix::Identity(n, n);     // dim x n
    Matrix h2 = Matrix::Zero(n, n * n);     // dim x (n*n)
    for (int k = 0; k <= shape_.layers; ++k) {
      const auto [scale, shift] = inference_affine(k);
      const RowMatrix ws = weight(k) * scale.asDiagonal();
      const Vector z = ws * h + weight(k) * shift + bias(k);
      const Matrix z1 = ws * h1;
      const Matrix z2 = ws * h2;
      if (k == shape_.layers) {
        SecondOrderJet jet;
        jet.value = z;
        jet.gradient = z1;
        for (int o = 0; o < shape_.output_dim; ++o)
          jet.hessian.push_back(Eigen::Map<const RowMatrix>(Eigen::RowVectorXd(z2.row(o)).data(), n, n));
        return jet;
      }
      const Vector u = z.array().tanh();
      const Vector du = 1.0 - u.array().square();
      const Vector ddu = -2.0 * u.array() * du.array();
      Matrix u1 = z1.array().colwise() * du.array();
      Matrix u2 = z2.array().colwise() * du.array();
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          u2.col(a * n + b).array() += ddu.array() * z1.col(a).array() * z1.col(b).array();
      if (k == 0) {
        h = u;
        h1 = u1;
        h2 = u2;
      } else {
        h += u;
        h1 += u1;
        h2 += u2;
      }
    }
    throw std::logic_error("network: unreachable");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("network: cannot write " + path);
    out.write(magic, 8);
    std::vector<double> header = {1.0,
                                  static_cast<double>(shape_.input_dim),
                                  static_cast<double>(shape_.output_dim),
                                  static_cast<double>(shape_.width),
                                  static_cast<double>(shape_.layers),
                                  momentum,
                                  epsilon};
    write_doubles(out, header);
    write_doubles(out, std::span<const double>(params_.data(), static_cast<std::size_t>(params_.size())));
    for (int k = 0; k <= shape_.layers; ++k) {
      write_doubles(out, std::span<const double>(running_mean(k).data(), static_cast<std::size_t>(shape_.in(k))));
      write_doubles(out, std::span<const double>(running_var(k).data(), static_cast<std::size_t>(shape_.in(k))));
    }
    if (!out) throw std::runtime_error("network: write failed for " + path);
  }

  static Network load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("network: cannot read " + path);
    char tag[8];
    in.read(tag, 8);
    if (!in || std::memcmp(tag, magic, 8) != 0) throw std::runtime_error("network: bad checkpoint header in " + path);
    std::vector<double> header(7);
    read_doubles(in, header);
    if (header[0] != 1.0) throw std::runtime_error("network: unsupported checkpoint version");
    NetworkShape shape{static_cast<int>(header[1]), static_cast<int>(header[2]), static_cast<int>(header[3]),
                       static_cast<int>(header[4])};
    Network net(shape);
    read_doubles(in, std::span<double>(net.params_.data(), static_cast<std::size_t>(net.params_.size())));
    for (int k = 0; k <= shape.layers; ++k) {
      read_doubles(in, std::span<double>(net.running_mean(k).data(), static_cast<std::size_t>(shape.in(k))));
      read_doubles(in, std::span<double>(net.running_var(k).data(), static_cast<std::size_t>(shape.in(k))));
    }
    if (!in) throw std::runtime_error("network: truncated checkpoint " + path);
    return net;
  }

 private:
  static constexpr char magic[8] = {'B', 'P', 'D', 'E', 'N', 'E', 'T', '1'};

  static std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }

  static void write_doubles(std::ostream& out, std::span<const double> values) {
    for (double v : values) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), 8);
    }
  }

  static void read_doubles(std::istream& in, std::span<double> values) {
    for (double& v : values) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 8);
      v = std::bit_cast<double>(to_little(bits));
    }
  }

  void check_input(Eigen::Index rows) const {
    if (rows != shape_.input_dim)
      throw std::invalid_argument("network: input has dimension " + std::to_string(rows) + ", expected " +
                                  std::to_string(shape_.input_dim));
  }

  /// BN in inference mode as x -> scale .* x + shift.
  std::tuple<Vector, Vector> inference_affine(int k) const {
    const Vector scale = gamma(k).array() * (running_var(k).array() + epsilon).rsqrt();
    const Vector shift = beta(k).array() - scale.array() * running_mean(k).array();
    return {scale, shift};
  }

  NetworkShape shape_;
  Vector params_;
  std::vector<std::size_t> w_off_, b_off_, g_off_, s_off_;
  std::vector<Vector> running_mean_;
  std::vector<Vector> running_var_;
};

}  // namespace branchpde
