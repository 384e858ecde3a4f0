#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchpde/codes.hpp"
#include "branchpde/model.hpp"
#include "branchpde/taylor.hpp"

namespace branchpde {

/// One factor of a separable term: 1, sin(w x_k) or cos(w x_k).
struct TrigFactor {
  enum Kind { one, sine, cosine } kind = one;
  double freq = 0.0;
};

/// coef * prod_k factor_k(x_k) * exp(-decay (T - t)).
struct TrigTerm {
  double coef = 0.0;
  std::vector<TrigFactor> factors;
  double decay = 0.0;
};

/// A closed-form solution (u_0, u_1, ..., u_d) built from separable
/// trigonometric terms; derivatives of any order come from phase shifts.
class ExactFlow final : public DerivativeOracle {
 public:
  ExactFlow(std::string name, int d, double nu, double T, std::vector<std::vector<TrigTerm>> components)
      : name_(std::move(name)), d_(d), nu_(nu), T_(T), comps_(std::move(components)) {
    if (static_cast<int>(comps_.size()) != d + 1)
      throw std::invalid_argument("ExactFlow: expected d + 1 components");
    for (const auto& comp : comps_)
      for (const auto& term : comp)
        if (static_cast<int>(term.factors.size()) != d)
          throw std::invalid_argument("ExactFlow: term has wrong number of factors");
  }

  const std::string& name() const noexcept { return name_; }
  int dim() const noexcept { return d_; }
  double nu() const noexcept { return nu_; }
  double horizon() const noexcept { return T_; }

  double derivative(int i, const MultiIndex& mu, double t, std::span<const double> x) const override {
    return combine(i, mu, t, x, [](const TrigTerm&) { return 1.0; });
  }

  double heat_pressure(const MultiIndex& mu, double t, std::span<const double> x) const override {
    return combine(0, mu, t, x, [this](const TrigTerm& term) { return heat_factor(term); });
  }

  /// d_t d^mu u_i.
  double time_derivative(int i, const MultiIndex& mu, double t, std::span<const double> x) const {
    return combine(i, mu, t, x, [](const TrigTerm& term) { return term.decay; });
  }

  double value(int i, double t, std::span<const double> x) const {
    return derivative(i, MultiIndex(static_cast<std::size_t>(d_)), t, x);
  }

  double divergence(double t, std::span<const double> x) const {
    double s = 0.0;
    for (int a = 0; a < d_; ++a) s += derivative(a + 1, MultiIndex::unit(d_, a), t, x);
    return s;
  }

  /// Terminal data at t = T with closed-form pressure.
  TerminalCondition terminal() const {
    auto self = std::make_shared<ExactFlow>(*this);
    TerminalCondition tc;
    tc.phi_deriv = [self](int i, const MultiIndex& mu, std::span<const double> x) {
      return self->derivative(i, mu, self->T_, x);
    };
    tc.heat_pressure = [self](const MultiIndex& mu, std::span<const double> x) {
      return self->heat_pressure(mu, self->T_, x);
    };
    return tc;
  }

 private:
  double heat_factor(const TrigTerm& term) const {
    double w2 = 0.0;
    for (const auto& f : term.factors)
      if (f.kind != TrigFactor::one) w2 += f.freq * f.freq;
    return term.decay - nu_ * w2;
  }

  template <class Scale>
  double combine(int i, const MultiIndex& mu, double t, std::span<const double> x, Scale&& scale) const {
    if (i < 0 || i > d_) throw std::out_of_range("ExactFlow: component out of range");
    if (static_cast<int>(mu.size()) != d_ || static_cast<int>(x.size()) != d_)
      throw std::invalid_argument("ExactFlow: dimension mismatch");
    double total = 0.0;
    for (const auto& term : comps_[static_cast<std::size_t>(i)]) {
      double v = term.coef * std::exp(-term.decay * (T_ - t));
      for (int k = 0; k < d_ && v != 0.0; ++k) {
        const auto& f = term.factors[static_cast<std::size_t>(k)];
        const int n = mu[static_cast<std::size_t>(k)];
        const double xk = x[static_cast<std::size_t>(k)];
        switch (f.kind) {
          case TrigFactor::one:
            if (n > 0) v = 0.0;
            break;
          case TrigFactor::sine:
            v *= std::pow(f.freq, n) * std::sin(f.freq * xk + 0.5 * M_PI * n);
            break;
          case TrigFactor::cosine:
            v *= std::pow(f.freq, n) * std::cos(f.freq * xk + 0.5 * M_PI * n);
            break;
        }
      }
      total += v * scale(term);
    }
    return total;
  }

  std::string name_;
  int d_;
  double nu_;
  double T_;
  std::vector<std::vector<TrigTerm>> comps_;
};

namespace detail {

inline TrigFactor one() { return {TrigFactor::one, 0.0}; }
inline TrigFactor s(double w) { return {TrigFactor::sine, w}; }
inline TrigFactor c(double w) { return {TrigFactor::cosine, w}; }

}  // namespace detail

/// Two-dimensional Taylor-Green vortex.
inline ExactFlow taylor_green(double nu, double T) {
  if (!(nu > 0.0)) throw std::invalid_argument("taylor_green: nu must be > 0");
  using namespace detail;
  std::vector<std::vector<TrigTerm>> comps(3);
  comps[0] = {{-0.25, {c(2), one()}, 4 * nu}, {-0.25, {one(), c(2)}, 4 * nu}};
  comps[1] = {{-1.0, {c(1), s(1)}, 2 * nu}};
  comps[2] = {{1.0, {s(1), c(1)}, 2 * nu}};
  return ExactFlow("taylor-green", 2, nu, T, std::move(comps));
}

/// Three-dimensional Arnold-Beltrami-Childress flow, pressure constant 0.
inline ExactFlow abc_flow(double nu, double A, double B, double C, double T) {
  if (!(nu > 0.0)) throw std::invalid_argument("abc_flow: nu must be > 0");
  using namespace detail;
  std::vector<std::vector<TrigTerm>> comps(4);
  comps[1] = {{A, {one(), one(), s(1)}, nu}, {C, {one(), c(1), one()}, nu}};
  comps[2] = {{B, {s(1), one(), one()}, nu}, {A, {one(), one(), c(1)}, nu}};
  comps[3] = {{C, {one(), s(1), one()}, nu}, {B, {c(1), one(), one()}, nu}};
  comps[0] = {{-A * C, {one(), c(1), s(1)}, 2 * nu},
              {-B * A, {s(1), one(), c(1)}, 2 * nu},
              {-C * B, {c(1), s(1), one()}, 2 * nu}};
  return ExactFlow("abc", 3, nu, T, std::move(comps));
}

/// The one-dimensional semilinear test model's exact solution
/// e^{(a - 1/2)(T - t)} cos x as a flow without pressure.
inline ExactFlow semilinear_linear_flow(double a, double T) {
  std::vector<std::vector<TrigTerm>> comps(2);
  comps[1] = {{1.0, {detail::c(1)}, 0.5 - a}};
  return ExactFlow("semilinear-linear", 1, 0.5, T, std::move(comps));
}

/// A scalar profile evaluated on truncated Taylor series.
using Profile = std::function<Series(const Series&)>;

/// Highest derivative order the rotating terminal condition supplies.
inline constexpr int rotating_max_order = 8;

/// phi_1 = (f'(x2)/f(x2)) E and phi_2 = (g'(x1)/g(x1)) E with
/// E = exp(-g(x1)/f(x2)). Supplies velocity derivatives only; attach a
/// pressure with attach_pressure.
inline TerminalCondition rotating_terminal(Profile f, Profile g) {
  if (!f || !g) throw std::invalid_argument("rotating_terminal: missing profile");
  TerminalCondition tc;
  tc.phi_deriv = [f = std::move(f), g = std::move(g)](int i, const MultiIndex& mu,
                                                      std::span<const double> x) -> double {
    if (i == 0) throw OracleError("rotating terminal condition has no closed-form pressure");
    if (i < 0 || i > 2) throw std::out_of_range("rotating_terminal: component out of range");
    if (mu.size() != 2 || x.size() != 2) throw std::invalid_argument("rotating_terminal: requires d = 2");
    const int K = mu.norm();
    if (K > rotating_max_order)
      throw OracleError("rotating terminal derivative order " + std::to_string(K) + " exceeds cap");
    const Series F1 = f(Series::variable(K + 1, x[1]));
    const Series G1 = g(Series::variable(K + 1, x[0]));
    const Series F = F1.truncate(K);
    const Series G = G1.truncate(K);
    if (F.value() == 0.0 || G.value() == 0.0)
      throw std::domain_error("rotating_terminal: profile vanishes at evaluation point");
    const Jet2 E = exp(Jet2::lift(G, 0) * reciprocal(Jet2::lift(F, 1)) * -1.0);
    const Jet2 phi = i == 1 ? Jet2::lift(F1.differentiate() / F, 1) * E
                            : Jet2::lift(G1.differentiate() / G, 0) * E;
    return phi.derivative(mu[0], mu[1]);
  };
  return tc;
}

/// f = 1 + x^2, g = 1 / (1 + x^2).
inline TerminalCondition rotating_case_1() {
  return rotating_terminal([](const Series& x) { return 1.0 + x * x; },
                           [](const Series& x) { return 1.0 / (1.0 + x * x); });
}

/// f = (2 + sin x) / (1 + x^2), g = e^{x^2} / (2 + x^3 + x^4).
inline TerminalCondition rotating_case_2() {
  return rotating_terminal(
      [](const Series& x) { return (2.0 + sin(x)) / (1.0 + x * x); },
      [](const Series& x) { return exp(x * x) / (2.0 + pow(x, 3) + pow(x, 4)); });
}

/// (mu, x) -> d^mu phi_0(x), usable up to `max_order`.
using PressureDerivative = std::function<double(const MultiIndex& mu, std::span<const double> x)>;

/// Replaces the terminal pressure with a learned one.
inline TerminalCondition attach_pressure(TerminalCondition base, PressureDerivative pressure,
                                         int max_order) {
  TerminalCondition tc;
  tc.pressure_kind = TerminalKind::network_backed;
  tc.pressure_max_order = max_order;
  tc.phi_deriv = [base = std::move(base), pressure = std::move(pressure)](
                     int i, const MultiIndex& mu, std::span<const double> x) -> double {
    if (i == 0) return pressure(mu, x);
    return base.phi_deriv(i, mu, x);
  };
  return tc;
}

}  // namespace branchpde
