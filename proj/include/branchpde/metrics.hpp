#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchpde/flows.hpp"
#include "branchpde/network.hpp"

namespace branchpde {

/// Omega ∩ delta Z^d for the cube [x_min, x_max]^d, endpoints included.
class Grid {
 public:
  Grid(int d, double delta, double x_min, double x_max) : d_(d), delta_(delta), x_min_(x_min), x_max_(x_max) {
    if (d < 1) throw std::invalid_argument("grid: dimension must be >= 1");
    if (!(delta > 0.0)) throw std::invalid_argument("grid: delta must be > 0");
    if (!(x_max >= x_min)) throw std::invalid_argument("grid: requires x_min <= x_max");
    const double tol = 1e-9 * delta;
    for (auto k = static_cast<long>(std::ceil((x_min - tol) / delta)); k * delta <= x_max + tol; ++k)
      axis_.push_back(static_cast<double>(k) * delta);
    if (axis_.empty()) throw std::invalid_argument("grid: no lattice point inside the domain");
  }

  int dim() const noexcept { return d_; }
  double delta() const noexcept { return delta_; }
  double x_min() const noexcept { return x_min_; }
  double x_max() const noexcept { return x_max_; }
  const std::vector<double>& axis() const noexcept { return axis_; }

  std::size_t size() const {
    std::size_t n = 1;
    for (int a = 0; a < d_; ++a) n *= axis_.size();
    return n;
  }

  /// d x size(); the first coordinate varies slowest.
  Matrix points() const {
    Matrix X(d_, static_cast<Eigen::Index>(size()));
    const std::size_t n = axis_.size();
    for (std::size_t p = 0; p < size(); ++p) {
      std::size_t rest = p;
      for (int a = d_ - 1; a >= 0; --a) {
        X(a, static_cast<Eigen::Index>(p)) = axis_[rest % n];
        rest /= n;
      }
    }
    return X;
  }

 private:
  int d_;
  double delta_, x_min_, x_max_;
  std::vector<double> axis_;
};

/// A velocity estimate v(t, x) with spatial derivatives.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual int dim() const = 0;
  /// d x P values at the columns of X.
  virtual Matrix velocity(double t, const Matrix& X) const = 0;
  /// d x P; row j holds d_j v_i.
  virtual Matrix gradient(double t, const Matrix& X, int i) const = 0;
};

/// A pressure estimate at the terminal time.
class PressureField {
 public:
  virtual ~PressureField() = default;
  virtual Vector pressure(const Matrix& X) const = 0;
};

namespace detail {

inline Matrix with_time(double t, const Matrix& X) {
  Matrix in(X.rows() + 1, X.cols());
  in.row(0).setConstant(t);
  in.bottomRows(X.rows()) = X;
  return in;
}

}  // namespace detail

/// Network with inputs (t, x) and outputs (v_1, ..., v_d).
class NetworkVelocity final : public VelocityField {
 public:
  explicit NetworkVelocity(const Network& net) : net_(&net) {
    if (net.shape().input_dim != net.shape().output_dim + 1)
      throw std::invalid_argument("velocity network must map (t, x) to a d-vector");
  }
  int dim() const override { return net_->shape().output_dim; }
  Matrix velocity(double t, const Matrix& X) const override { return net_->forward(detail::with_time(t, X)); }
  Matrix gradient(double t, const Matrix& X, int i) const override {
    return net_->input_gradient(detail::with_time(t, X), i).bottomRows(X.rows());
  }

 private:
  const Network* net_;
};

class NetworkPressure final : public PressureField {
 public:
  explicit NetworkPressure(const Network& net) : net_(&net) {
    if (net.shape().output_dim != 1) throw std::invalid_argument("pressure network must have one output");
  }
  Vector pressure(const Matrix& X) const override { return net_->forward(X).row(0).transpose(); }

 private:
  const Network* net_;
};

/// The exact flow seen as an estimate; optional scale and pressure shift
/// support the invariance checks.
class ExactVelocity final : public VelocityField, public PressureField {
 public:
  explicit ExactVelocity(const ExactFlow& flow, double scale = 1.0, double pressure_shift = 0.0)
      : flow_(&flow), scale_(scale), shift_(pressure_shift) {}
  int dim() const override { return flow_->dim(); }
  Matrix velocity(double t, const Matrix& X) const override {
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index p = 0; p < X.cols(); ++p) {
      const Vector x = X.col(p);
      for (int i = 0; i < dim(); ++i) out(i, p) = scale_ * flow_->value(i + 1, t, {x.data(), static_cast<std::size_t>(x.size())});
    }
    return out;
  }
  Matrix gradient(double t, const Matrix& X, int i) const override {
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index p = 0; p < X.cols(); ++p) {
      const Vector x = X.col(p);
      for (int j = 0; j < dim(); ++j)
        out(j, p) = scale_ * flow_->derivative(i + 1, MultiIndex::unit(static_cast<std::size_t>(dim()), static_cast<std::size_t>(j)), t,
                                               {x.data(), static_cast<std::size_t>(x.size())});
    }
    return out;
  }
  Vector pressure(const Matrix& X) const override {
    Vector out(X.cols());
    for (Eigen::Index p = 0; p < X.cols(); ++p) {
      const Vector x = X.col(p);
      out(p) = scale_ * flow_->value(0, flow_->horizon(), {x.data(), static_cast<std::size_t>(x.size())}) + shift_;
    }
    return out;
  }

 private:
  const ExactFlow* flow_;
  double scale_;
  double shift_;
};

struct ErrorReport {
  int d = 0;
  double delta = 0.0;
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t grid_points = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> e_i;  // [k][i]
  std::vector<double> e, erru, errgu, errdivu;
  std::optional<double> errp;

  std::string to_csv() const {
    std::string out = "metric,k,value\n";
    char buf[96];
    auto row = [&](const std::string& name, std::size_t k, double v) {
      std::snprintf(buf, sizeof buf, ",%zu,%.10e\n", k, v);
      out += name + buf;
    };
    for (int i = 0; i < d; ++i)
      for (std::size_t k = 0; k < times.size(); ++k) row("e_" + std::to_string(i + 1), k, e_i[k][static_cast<std::size_t>(i)]);
    for (std::size_t k = 0; k < times.size(); ++k) row("e", k, e[k]);
    for (std::size_t k = 0; k < times.size(); ++k) row("erru", k, erru[k]);
    for (std::size_t k = 0; k < times.size(); ++k) row("errgu", k, errgu[k]);
    for (std::size_t k = 0; k < times.size(); ++k) row("errdivu", k, errdivu[k]);
    if (errp) row("errp", times.size(), *errp);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["grid"] = {{"delta", delta}, {"x_min", x_min}, {"x_max", x_max}, {"points", grid_points}, {"d", d}};
    j["t"] = times;
    j["e_i"] = e_i;
    j["e"] = e;
    j["erru"] = erru;
    j["errgu"] = errgu;
    j["errdivu"] = errdivu;
    if (errp) j["errp"] = *errp;
    return j;
  }
};

/// Mean-centered relative pressure error on the grid.
inline double pressure_error(const Vector& exact, const Vector& estimate) {
  if (exact.size() == 0 || exact.size() != estimate.size()) throw std::invalid_argument("errp: empty or mismatched grid");
  const Vector p = exact.array() - exact.mean();
  const Vector v = estimate.array() - estimate.mean();
  const double den = p.squaredNorm();
  if (den == 0.0) throw std::invalid_argument("errp: exact pressure vanishes on the grid");
  return std::sqrt((p - v).squaredNorm() / den);
}

/// All metrics at t_k = k T / 10, k = 0..9, and errp at T when a pressure
/// estimate is given.
inline ErrorReport error_report(const VelocityField& estimate, const ExactFlow& exact, const Grid& grid,
                                const PressureField* pressure = nullptr) {
  const int d = exact.dim();
  if (estimate.dim() != d || grid.dim() != d) throw std::invalid_argument("error_report: dimension mismatch");
  const Matrix X = grid.points();
  const auto P = static_cast<double>(X.cols());
  const ExactVelocity truth(exact);
  ErrorReport r;
  r.d = d;
  r.delta = grid.delta();
  r.x_min = grid.x_min();
  r.x_max = grid.x_max();
  r.grid_points = grid.size();
  for (int k = 0; k < 10; ++k) {
    const double t = k * exact.horizon() / 10.0;
    r.times.push_back(t);
    const Matrix u = truth.velocity(t, X);
    const Matrix v = estimate.velocity(t, X);
    const Matrix diff2 = (u - v).array().square();
    std::vector<double> ei(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) ei[static_cast<std::size_t>(i)] = diff2.row(i).maxCoeff();
    r.e_i.push_back(ei);
    r.e.push_back(diff2.colwise().sum().maxCoeff());
    r.erru.push_back(std::sqrt(diff2.sum() / u.squaredNorm()));
    double num = 0.0, den = 0.0;
    Vector div = Vector::Zero(X.cols());
    for (int i = 0; i < d; ++i) {
      const Matrix gu = truth.gradient(t, X, i);
      const Matrix gv = estimate.gradient(t, X, i);
      num += (gu - gv).squaredNorm();
      den += gu.squaredNorm();
      div += gv.row(i).transpose();
    }
    r.errgu.push_back(std::sqrt(num / den));
    r.errdivu.push_back(std::sqrt(std::pow(grid.x_max() - grid.x_min(), d) / P * div.squaredNorm()));
  }
  if (pressure) r.errp = pressure_error(truth.pressure(X), pressure->pressure(X));
  return r;
}

/// Rows (x, exact, estimated) of component i along coordinate `axis`, with the
/// other coordinates fixed at `level`.
inline std::string slice_csv(const VelocityField& estimate, const ExactFlow& exact, const Grid& grid, double t,
                             int i, int axis, double level) {
  const int d = exact.dim();
  Matrix X(d, static_cast<Eigen::Index>(grid.axis().size()));
  X.setConstant(level);
  for (std::size_t p = 0; p < grid.axis().size(); ++p) X(axis, static_cast<Eigen::Index>(p)) = grid.axis()[p];
  const Matrix u = ExactVelocity(exact).velocity(t, X);
  const Matrix v = estimate.velocity(t, X);
  std::string out = "x,exact,estimated\n";
  char buf[128];
  for (Eigen::Index p = 0; p < X.cols(); ++p) {
    std::snprintf(buf, sizeof buf, "%.10e,%.10e,%.10e\n", X(axis, p), u(i - 1, p), v(i - 1, p));
    out += buf;
  }
  return out;
}

/// Rows (x_1..x_d, v_1..v_d) of an estimate on the grid; used when no exact
/// solution exists.
inline std::string field_csv(const VelocityField& estimate, const Grid& grid, double t) {
  const Matrix X = grid.points();
  const Matrix v = estimate.velocity(t, X);
  std::string out;
  for (int a = 0; a < grid.dim(); ++a) out += "x" + std::to_string(a + 1) + ",";
  for (int a = 0; a < grid.dim(); ++a) out += "v" + std::to_string(a + 1) + (a + 1 < grid.dim() ? "," : "\n");
  char buf[32];
  for (Eigen::Index p = 0; p < X.cols(); ++p) {
    for (int a = 0; a < grid.dim(); ++a) {
      std::snprintf(buf, sizeof buf, "%.10e,", X(a, p));
      out += buf;
    }
    for (int a = 0; a < grid.dim(); ++a) {
      std::snprintf(buf, sizeof buf, a + 1 < grid.dim() ? "%.10e," : "%.10e\n", v(a, p));
      out += buf;
    }
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace branchpde
