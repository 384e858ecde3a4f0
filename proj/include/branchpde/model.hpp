#pragma once

// Problem descriptions: the generic coupled parabolic/Poisson system, its
// Navier-Stokes instance and the one-dimensional semilinear test model.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchpde/multiindex.hpp"

namespace branchpde {

/// A derivative that an oracle or terminal condition cannot supply.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (fidx, lambda, args) -> d^lambda f_fidx(args), fidx in 0..d.
using FDerivEvaluator =
    std::function<double(int fidx, const MultiIndex& lambda, std::span<const double> args)>;

/// True when d^lambda f_fidx vanishes identically (structural zero).
using VanishPredicate = std::function<bool(int fidx, const MultiIndex& lambda)>;

enum class TerminalKind { closed_form, network_backed };

/// Terminal data u_i(T, .) = phi_i for i = 1..d, plus the terminal pressure phi_0.
struct TerminalCondition {
  /// (i, mu, x) -> d^mu phi_i(x) for i in 0..d.
  std::function<double(int i, const MultiIndex& mu, std::span<const double> x)> phi_deriv;
  /// How phi_0 is obtained. A network-backed pressure only supplies orders
  /// up to pressure_max_order.
  TerminalKind pressure_kind = TerminalKind::closed_form;
  int pressure_max_order = -1;
  /// Optional d^mu (d_t + nu Lap) u_0 at t = T; only exact flows provide it.
  std::function<double(const MultiIndex& mu, std::span<const double> x)> heat_pressure;
};

inline double eval_terminal_derivative(const TerminalCondition& terminal, int i,
                                       const MultiIndex& mu, std::span<const double> x) {
  if (!terminal.phi_deriv) throw OracleError("terminal condition has no derivative evaluator");
  if (i == 0 && terminal.pressure_kind == TerminalKind::network_backed &&
      terminal.pressure_max_order >= 0 && mu.norm() > terminal.pressure_max_order)
    throw OracleError("network-backed terminal pressure cannot supply derivative of order " +
                      std::to_string(mu.norm()));
  return terminal.phi_deriv(i, mu, x);
}

/// The system
///   d_t u_i + nu Lap u_i + f_i(d^{alpha_1} u_{beta_1}, ..., d^{alpha_n} u_{beta_n}) = 0,
///   Lap u_0 = f_0(d^{alpha_{q+1}} u_{beta_{q+1}}, ...),  u_i(T, .) = phi_i,
/// with beta_1 = ... = beta_q = 0. Slots are 0-based in code: slot j < q is a
/// pressure-derivative argument.
struct PDESystem {
  std::string name;
  int d = 0;
  int n = 0;
  int q = 0;
  std::vector<MultiIndex> alpha;
  std::vector<int> beta;
  double nu = 0.0;
  double T = 0.0;
  FDerivEvaluator f_deriv;
  VanishPredicate f_vanishes;
  /// Upper bound on the total polynomial degree of every f_i, or -1.
  int f_degree = -1;
  TerminalCondition terminal;

  bool vanishes(int fidx, const MultiIndex& lambda) const {
    if (f_degree >= 0 && lambda.norm() > f_degree) return true;
    return f_vanishes ? f_vanishes(fidx, lambda) : false;
  }

  void validate() const {
    if (d < 1) throw std::invalid_argument("model: dimension must be >= 1");
    if (n < 1) throw std::invalid_argument("model: n must be >= 1");
    if (q < 0 || q > n) throw std::invalid_argument("model: q must lie in [0, n]");
    if (static_cast<int>(alpha.size()) != n || static_cast<int>(beta.size()) != n)
      throw std::invalid_argument("model: alpha/beta tables must have n entries");
    for (int j = 0; j < n; ++j) {
      if (static_cast<int>(alpha[j].size()) != d)
        throw std::invalid_argument("model: alpha entries must have length d");
      if (j < q && beta[j] != 0)
        throw std::invalid_argument("model: pressure slots must have beta = 0");
      if (j >= q && (beta[j] < 1 || beta[j] > d))
        throw std::invalid_argument("model: beta out of range 1..d");
    }
    if (!(nu > 0.0) || !std::isfinite(nu)) throw std::invalid_argument("model: nu must be > 0");
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("model: T must be > 0");
    if (!f_deriv) throw std::invalid_argument("model: missing f derivative evaluator");
  }
};

namespace detail {

// Navier-Stokes argument layout (0-based, a, b in 0..d-1):
//   x_a = d_a u_0            at slot a
//   y_a = u_{a+1}            at slot d + a
//   z_a^(b) = d_b u_{a+1}    at slot 2d + b d + a
struct NsLayout {
  int d;
  int x(int a) const { return a; }
  int y(int a) const { return d + a; }
  int z(int a, int b) const { return 2 * d + b * d + a; }
  bool is_z(int slot) const { return slot >= 2 * d; }
  int z_component(int slot) const { return (slot - 2 * d) % d; }
  int z_direction(int slot) const { return (slot - 2 * d) / d; }
};

// Nonzero slots of lambda, at most `limit` of them; returns count found.
inline int nonzero_slots(const MultiIndex& lambda, int* slots, int limit) {
  int found = 0;
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    for (int r = 0; r < lambda[j]; ++r) {
      if (found == limit) return limit + 1;
      slots[found++] = static_cast<int>(j);
    }
  }
  return found;
}

// f_0 = -sum_{a,b} z_a^(b) z_b^(a);  f_i = -x_i - sum_b y_b z_i^(b).
inline double navier_stokes_f_deriv(int d, int fidx, const MultiIndex& lambda,
                                    std::span<const double> args) {
  const NsLayout L{d};
  int slots[3];
  const int order = nonzero_slots(lambda, slots, 2);
  if (order > 2) return 0.0;
  if (fidx == 0) {
    if (order == 0) {
      double s = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) s += args[L.z(a, b)] * args[L.z(b, a)];
      return -s;
    }
    if (!L.is_z(slots[0])) return 0.0;
    const int a = L.z_component(slots[0]);
    const int b = L.z_direction(slots[0]);
    if (order == 1) return -2.0 * args[L.z(b, a)];
    return slots[1] == L.z(b, a) ? -2.0 : 0.0;
  }
  const int i = fidx - 1;
  if (order == 0) {
    double s = args[L.x(i)];
    for (int b = 0; b < d; ++b) s += args[L.y(b)] * args[L.z(i, b)];
    return -s;
  }
  if (order == 1) {
    const int s = slots[0];
    if (s == L.x(i)) return -1.0;
    if (s >= d && s < 2 * d) return -args[L.z(i, s - d)];
    if (L.is_z(s) && L.z_component(s) == i) return -args[L.y(L.z_direction(s))];
    return 0.0;
  }
  // order 2: only d^2 / dy_b dz_i^(b) survives; slots are sorted.
  const int s0 = slots[0];
  const int s1 = slots[1];
  if (s0 >= d && s0 < 2 * d && s1 == L.z(i, s0 - d)) return -1.0;
  return 0.0;
}

inline bool navier_stokes_vanishes(int d, int fidx, const MultiIndex& lambda) {
  const NsLayout L{d};
  int slots[3];
  const int order = nonzero_slots(lambda, slots, 2);
  if (order == 0) return false;
  if (order > 2) return true;
  if (fidx == 0) {
    if (!L.is_z(slots[0])) return true;
    if (order == 1) return false;
    const int a = L.z_component(slots[0]);
    const int b = L.z_direction(slots[0]);
    return slots[1] != L.z(b, a);
  }
  const int i = fidx - 1;
  if (order == 1) {
    const int s = slots[0];
    return !(s == L.x(i) || (s >= d && s < 2 * d) || (L.is_z(s) && L.z_component(s) == i));
  }
  const int s0 = slots[0];
  return !(s0 >= d && s0 < 2 * d && slots[1] == L.z(i, s0 - d));
}

}  // namespace detail

/// Incompressible Navier-Stokes with pressure u_0: n = d(d+2), q = d.
inline PDESystem navier_stokes_model(int d, double nu, double T, TerminalCondition terminal) {
  if (d < 2) throw std::invalid_argument("navier_stokes_model: requires d >= 2");
  PDESystem m;
  m.name = "navier-stokes";
  m.d = d;
  m.n = d * (d + 2);
  m.q = d;
  m.nu = nu;
  m.T = T;
  m.alpha.assign(m.n, MultiIndex(static_cast<std::size_t>(d)));
  m.beta.assign(m.n, 0);
  const detail::NsLayout L{d};
  for (int a = 0; a < d; ++a) {
    m.alpha[L.x(a)] = MultiIndex::unit(d, a);
    m.beta[L.x(a)] = 0;
    m.beta[L.y(a)] = a + 1;
    for (int b = 0; b < d; ++b) {
      m.alpha[L.z(a, b)] = MultiIndex::unit(d, b);
      m.beta[L.z(a, b)] = a + 1;
    }
  }
  m.f_deriv = [d](int fidx, const MultiIndex& lambda, std::span<const double> args) {
    return detail::navier_stokes_f_deriv(d, fidx, lambda, args);
  };
  m.f_vanishes = [d](int fidx, const MultiIndex& lambda) {
    return detail::navier_stokes_vanishes(d, fidx, lambda);
  };
  m.f_degree = 2;
  m.terminal = std::move(terminal);
  m.validate();
  return m;
}

/// (k, u) -> f^{(k)}(u) for a scalar nonlinearity.
using ScalarDerivative = std::function<double(int k, double u)>;

/// d_t u + (1/2) d_xx u + f(u) = 0 on R, written as the d = 1, n = 1, q = 0
/// system with alpha = (0), beta = 1, nu = 1/2. `degree` bounds the
/// polynomial degree of f when known (-1 otherwise).
inline PDESystem semilinear_model(ScalarDerivative f, TerminalCondition phi, double T,
                                  int degree = -1) {
  if (!f) throw std::invalid_argument("semilinear_model: missing nonlinearity");
  PDESystem m;
  m.name = "semilinear";
  m.d = 1;
  m.n = 1;
  m.q = 0;
  m.nu = 0.5;
  m.T = T;
  m.alpha = {MultiIndex{0}};
  m.beta = {1};
  m.f_deriv = [f = std::move(f)](int fidx, const MultiIndex& lambda,
                                 std::span<const double> args) -> double {
    if (fidx == 0) return 0.0;
    return f(lambda[0], args[0]);
  };
  m.f_vanishes = [](int fidx, const MultiIndex&) { return fidx == 0; };
  m.f_degree = degree;
  m.terminal = std::move(phi);
  m.validate();
  return m;
}

/// f(u) = a u with terminal phi(x) = cos x; exact solution e^{(a - 1/2)(T - t)} cos x.
inline PDESystem semilinear_linear_model(double a, double T) {
  TerminalCondition phi;
  phi.phi_deriv = [](int i, const MultiIndex& mu, std::span<const double> x) -> double {
    if (i != 1) throw OracleError("semilinear model has a single solution component");
    return std::cos(x[0] + 0.5 * M_PI * mu[0]);
  };
  return semilinear_model(
      [a](int k, double u) -> double {
        if (k == 0) return a * u;
        return k == 1 ? a : 0.0;
      },
      std::move(phi), T, 1);
}

}  // namespace branchpde
