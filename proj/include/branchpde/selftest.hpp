#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "branchpde/codes.hpp"
#include "branchpde/flows.hpp"
#include "branchpde/network.hpp"
#include "branchpde/sampler.hpp"
#include "branchpde/testing/poly_oracle.hpp"

namespace branchpde {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

class PolyOracle final : public DerivativeOracle {
 public:
  explicit PolyOracle(const std::vector<testing::Poly>& u) : u_(&u) {}
  double derivative(int i, const MultiIndex& mu, double, std::span<const double> x) const override {
    return (*u_)[static_cast<std::size_t>(i - 1)].derivative(mu).eval(x);
  }

 private:
  const std::vector<testing::Poly>* u_;
};

}  // namespace detail

struct FdbSuiteOptions {
  int cases = 200;
  std::uint64_t seed = 20240611;
  double tolerance = 1e-6;
  /// Test hook: relative perturbation applied to the first enumerated
  /// coefficient of every case.
  double perturb = 0.0;
};

/// fdb_enumerate-assembled d^mu (f o v) against exact polynomial composition
/// for random d <= 2, n <= 2, 1 <= |mu| <= 3.
inline CheckResult fdb_oracle_suite(const FdbSuiteOptions& opts = {}) {
  CheckResult res{"fdb-oracle", true, ""};
  Rng rng = make_stream(opts.seed, {0x66646221});
  std::uniform_int_distribution<int> pick12(1, 2), pick13(1, 3), pick01(0, 1);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < opts.cases; ++c) {
    const int d = pick12(rng);
    const int n = pick12(rng);
    const int order = pick13(rng);
    PDESystem model;
    model.name = "poly";
    model.d = d;
    model.n = n;
    model.q = 0;
    model.nu = 1.0;
    model.T = 1.0;
    for (int r = 0; r < n; ++r) {
      std::vector<int> a(static_cast<std::size_t>(d));
      for (auto& e : a) e = pick01(rng);
      model.alpha.emplace_back(a);
      model.beta.push_back(std::uniform_int_distribution<int>(1, d)(rng));
    }
    std::vector<testing::Poly> u;
    for (int i = 0; i < d; ++i) u.push_back(testing::Poly::random(d, 3, rng));
    const testing::Poly f = testing::Poly::random(n, 3, rng);
    model.f_deriv = [&f](int, const MultiIndex& lambda, std::span<const double> args) {
      return f.derivative(lambda).eval(args);
    };
    model.validate();
    // Random mu of the chosen order.
    std::vector<int> m(static_cast<std::size_t>(d), 0);
    for (int k = 0; k < order; ++k) ++m[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, d - 1)(rng))];
    const MultiIndex mu(m);
    std::vector<double> x(static_cast<std::size_t>(d));
    for (auto& v : x) v = ux(rng);

    const detail::PolyOracle oracle(u);
    double assembled = 0.0;
    bool first = true;
    for (const auto& seq : fdb_enumerate(mu, 1, {}, model)) {
      double prod = 1.0;
      for (const auto& code : seq) prod *= eval_code(code, model, oracle, 0.0, x);
      if (first) prod *= 1.0 + opts.perturb;
      first = false;
      assembled += prod;
    }
    const double expected = testing::composed_derivative(f, u, model.alpha, model.beta, mu, x);
    const double err = std::abs(assembled - expected) / std::max(std::abs(expected), 1e-12);
    worst = std::max(worst, err);
    if (!(err <= opts.tolerance) && res.passed) {
      res.passed = false;
      res.detail = "case " + std::to_string(c) + " mu=" + mu.to_string() + " n=" + std::to_string(n) +
                   " d=" + std::to_string(d) + ": relative error " + detail::fmt("%.3e", err);
    }
  }
  if (res.passed) res.detail = std::to_string(opts.cases) + " cases, worst relative error " + detail::fmt("%.3e", worst);
  return res;
}

/// int_0^inf (2 pi s)^{-d/2} e^{-r^2 / (2 s)} / (2 s) ds = Gamma(d/2) / (2 pi^{d/2} r^d).
inline double kernel_integral(int d, double r) {
  boost::math::quadrature::exp_sinh<double> integrator;
  auto f = [d, r](double s) {
    if (s <= 0.0) return 0.0;
    return std::pow(2.0 * M_PI * s, -0.5 * d) * std::exp(-r * r / (2.0 * s)) / (2.0 * s);
  };
  return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}

inline double kernel_closed_form(int d, double r) {
  return std::tgamma(0.5 * d) / (2.0 * std::pow(M_PI, 0.5 * d) * std::pow(r, d));
}

inline CheckResult kernel_identity_check() {
  CheckResult res{"poisson-kernel-identity", true, ""};
  double worst = 0.0;
  for (int d : {2, 3})
    for (double r : {0.5, 1.0, 2.0}) {
      const double q = kernel_integral(d, r);
      const double err = std::abs(q - kernel_closed_form(d, r)) / kernel_closed_form(d, r);
      worst = std::max(worst, err);
      if (!(err <= 1e-6)) {
        res.passed = false;
        res.detail = "d=" + std::to_string(d) + " r=" + detail::fmt("%g", r) + ": relative error " + detail::fmt("%.3e", err);
        return res;
      }
    }
  res.detail = "d=2 r=1 value " + detail::fmt("%.7f", kernel_integral(2, 1.0)) + ", worst relative error " +
               detail::fmt("%.3e", worst);
  return res;
}

/// Largest |div| of an exact flow over random space-time points.
inline double max_divergence(const ExactFlow& flow, int points, std::uint64_t seed) {
  Rng rng = make_stream(seed, {0x646976});
  std::uniform_real_distribution<double> ux(0.0, 2.0 * M_PI), ut(0.0, flow.horizon());
  double worst = 0.0;
  std::vector<double> x(static_cast<std::size_t>(flow.dim()));
  for (int p = 0; p < points; ++p) {
    for (auto& v : x) v = ux(rng);
    worst = std::max(worst, std::abs(flow.divergence(ut(rng), x)));
  }
  return worst;
}

/// Largest |div phi| of a d = 2 terminal condition on an n x n grid of [lo, hi]^2.
inline double max_terminal_divergence(const TerminalCondition& tc, int n, double lo, double hi) {
  double worst = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double x[2] = {lo + (hi - lo) * a / (n - 1), lo + (hi - lo) * b / (n - 1)};
      const double div = tc.phi_deriv(1, MultiIndex{1, 0}, x) + tc.phi_deriv(2, MultiIndex{0, 1}, x);
      worst = std::max(worst, std::abs(div));
    }
  return worst;
}

inline CheckResult divergence_checks() {
  CheckResult res{"divergence-free", true, ""};
  const double tg = max_divergence(taylor_green(1.0, 0.25), 200, 1);
  const double abc = max_divergence(abc_flow(0.01, 0.5, 0.5, 0.5, 0.7), 200, 2);
  const double r1 = max_terminal_divergence(rotating_case_1(), 50, -M_PI, M_PI);
  const double r2 = max_terminal_divergence(rotating_case_2(), 50, -M_PI, M_PI);
  res.passed = tg <= 1e-8 && abc <= 1e-8 && r1 <= 1e-8 && r2 <= 1e-8;
  res.detail = "taylor-green " + detail::fmt("%.2e", tg) + ", abc " + detail::fmt("%.2e", abc) + ", rotating-1 " +
               detail::fmt("%.2e", r1) + ", rotating-2 " + detail::fmt("%.2e", r2);
  return res;
}

/// Largest residual of the momentum and pressure-Poisson equations for an
/// exact flow, evaluated through the model's f_i.
inline double navier_stokes_residual(const ExactFlow& flow, const PDESystem& model, int points, std::uint64_t seed) {
  Rng rng = make_stream(seed, {0x726573});
  std::uniform_real_distribution<double> ux(0.0, 2.0 * M_PI), ut(0.0, flow.horizon());
  const int d = flow.dim();
  const MultiIndex zero_n(static_cast<std::size_t>(model.n));
  double worst = 0.0;
  std::vector<double> x(static_cast<std::size_t>(d));
  for (int p = 0; p < points; ++p) {
    for (auto& v : x) v = ux(rng);
    const double t = ut(rng);
    const auto args = argument_tuple(model, flow, t, x);
    double lap0 = 0.0;
    for (int a = 0; a < d; ++a) lap0 += flow.derivative(0, 2 * MultiIndex::unit(d, a), t, x);
    worst = std::max(worst, std::abs(lap0 - model.f_deriv(0, zero_n, args)));
    for (int i = 1; i <= d; ++i) {
      double lap = 0.0;
      for (int a = 0; a < d; ++a) lap += flow.derivative(i, 2 * MultiIndex::unit(d, a), t, x);
      const double r = flow.time_derivative(i, MultiIndex(static_cast<std::size_t>(d)), t, x) + model.nu * lap +
                       model.f_deriv(i, zero_n, args);
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

inline CheckResult residual_checks() {
  CheckResult res{"navier-stokes-residual", true, ""};
  const auto tg = taylor_green(1.0, 0.25);
  const auto abc = abc_flow(0.01, 0.5, 0.5, 0.5, 0.7);
  const double r_tg = navier_stokes_residual(tg, navier_stokes_model(2, 1.0, 0.25, tg.terminal()), 100, 3);
  const double r_abc = navier_stokes_residual(abc, navier_stokes_model(3, 0.01, 0.7, abc.terminal()), 100, 4);
  res.passed = r_tg <= 1e-8 && r_abc <= 1e-8;
  res.detail = "taylor-green " + detail::fmt("%.2e", r_tg) + ", abc " + detail::fmt("%.2e", r_abc);
  return res;
}

/// Worst norm-wise relative error of input_gradient against central finite
/// differences (step 1e-4) over random inputs of a random network.
inline double gradient_check_error(int inputs, std::uint64_t seed) {
  Rng rng = make_stream(seed, {0x67726164});
  Network net = Network::random({3, 2, 16, 3}, rng);
  std::uniform_real_distribution<double> u(0.5, 1.5), c(-1.0, 1.0), ux(-2.0, 2.0);
  for (int k = 0; k <= net.shape().layers; ++k) {
    for (Eigen::Index r = 0; r < net.gamma(k).size(); ++r) {
      net.gamma(k)(r) = u(rng);
      net.beta(k)(r) = 0.1 * c(rng);
      net.running_mean(k)(r) = 0.1 * c(rng);
      net.running_var(k)(r) = u(rng);
    }
  }
  const double h = 1e-4;
  double worst = 0.0;
  for (int p = 0; p < inputs; ++p) {
    std::vector<double> x(3);
    for (auto& v : x) v = ux(rng);
    const Matrix J = net.input_gradient(x);
    Matrix fd(2, 3);
    for (int j = 0; j < 3; ++j) {
      auto xp = x, xm = x;
      xp[static_cast<std::size_t>(j)] += h;
      xm[static_cast<std::size_t>(j)] -= h;
      fd.col(j) = (net.forward(xp) - net.forward(xm)) / (2.0 * h);
    }
    worst = std::max(worst, (J - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  return worst;
}

inline CheckResult gradient_check() {
  const double err = gradient_check_error(100, 5);
  return {"network-input-gradient", err <= 1e-4, "100 inputs, worst relative error " + detail::fmt("%.3e", err)};
}

struct SelftestOptions {
  FdbSuiteOptions fdb;
};

inline std::vector<CheckResult> run_selftest(const SelftestOptions& opts = {}) {
  return {fdb_oracle_suite(opts.fdb), kernel_identity_check(), divergence_checks(), residual_checks(),
          gradient_check()};
}

}  // namespace branchpde
