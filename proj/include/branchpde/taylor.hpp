#pragma once

// Truncated Taylor expansions in one and two variables, used to take
// arbitrary-order derivatives of the rotating-flow terminal data.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace branchpde {

/// Coefficients c_k of sum_k c_k h^k, truncated at a fixed order.
class Series {
 public:
  explicit Series(int order) : c_(static_cast<std::size_t>(order) + 1, 0.0) {
    if (order < 0) throw std::invalid_argument("Series: negative order");
  }

  static Series constant(int order, double value) {
    Series s(order);
    s.c_[0] = value;
    return s;
  }

  /// The expansion of x -> x around `at`.
  static Series variable(int order, double at) {
    Series s = constant(order, at);
    if (order >= 1) s.c_[1] = 1.0;
    return s;
  }

  int order() const noexcept { return static_cast<int>(c_.size()) - 1; }
  double operator[](int k) const { return c_[static_cast<std::size_t>(k)]; }
  double& operator[](int k) { return c_[static_cast<std::size_t>(k)]; }
  double value() const { return c_[0]; }

  /// k-th derivative at the expansion point.
  double derivative(int k) const {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return c_[static_cast<std::size_t>(k)] * f;
  }

  /// Expansion of the derivative; one order lower.
  Series differentiate() const {
    if (order() == 0) throw std::invalid_argument("Series: cannot differentiate order 0");
    Series out(order() - 1);
    for (int k = 0; k <= out.order(); ++k) out[k] = (k + 1) * c_[static_cast<std::size_t>(k) + 1];
    return out;
  }

  Series truncate(int order) const {
    Series out(order);
    for (int k = 0; k <= std::min(order, this->order()); ++k) out[k] = (*this)[k];
    return out;
  }

  friend Series operator+(Series a, const Series& b) {
    a.check(b);
    for (std::size_t k = 0; k < a.c_.size(); ++k) a.c_[k] += b.c_[k];
    return a;
  }
  friend Series operator-(Series a, const Series& b) {
    a.check(b);
    for (std::size_t k = 0; k < a.c_.size(); ++k) a.c_[k] -= b.c_[k];
    return a;
  }
  friend Series operator-(Series a) {
    for (auto& v : a.c_) v = -v;
    return a;
  }
  friend Series operator+(Series a, double s) {
    a.c_[0] += s;
    return a;
  }
  friend Series operator+(double s, Series a) { return std::move(a) + s; }
  friend Series operator-(Series a, double s) {
    a.c_[0] -= s;
    return a;
  }
  friend Series operator-(double s, const Series& a) { return -a + s; }
  friend Series operator*(Series a, double s) {
    for (auto& v : a.c_) v *= s;
    return a;
  }
  friend Series operator*(double s, Series a) { return std::move(a) * s; }

  friend Series operator*(const Series& a, const Series& b) {
    a.check(b);
    Series out(a.order());
    for (int i = 0; i <= a.order(); ++i)
      for (int j = 0; i + j <= a.order(); ++j) out[i + j] += a[i] * b[j];
    return out;
  }

  friend Series operator/(const Series& a, const Series& b) {
    a.check(b);
    if (b[0] == 0.0) throw std::domain_error("Series: division by a vanishing series");
    Series out(a.order());
    for (int k = 0; k <= a.order(); ++k) {
      double s = a[k];
      for (int j = 1; j <= k; ++j) s -= b[j] * out[k - j];
      out[k] = s / b[0];
    }
    return out;
  }
  friend Series operator/(double s, const Series& b) { return constant(b.order(), s) / b; }
  friend Series operator/(Series a, double s) { return std::move(a) * (1.0 / s); }

 private:
  void check(const Series& other) const {
    if (other.c_.size() != c_.size()) throw std::invalid_argument("Series: order mismatch");
  }

  std::vector<double> c_;
};

inline Series exp(const Series& a) {
  Series out(a.order());
  out[0] = std::exp(a[0]);
  for (int k = 1; k <= a.order(); ++k) {
    double s = 0.0;
    for (int j = 1; j <= k; ++j) s += j * a[j] * out[k - j];
    out[k] = s / k;
  }
  return out;
}

inline void sin_cos(const Series& a, Series& s, Series& c) {
  s = Series(a.order());
  c = Series(a.order());
  s[0] = std::sin(a[0]);
  c[0] = std::cos(a[0]);
  for (int k = 1; k <= a.order(); ++k) {
    double ss = 0.0, cc = 0.0;
    for (int j = 1; j <= k; ++j) {
      ss += j * a[j] * c[k - j];
      cc -= j * a[j] * s[k - j];
    }
    s[k] = ss / k;
    c[k] = cc / k;
  }
}

inline Series sin(const Series& a) {
  Series s(0), c(0);
  sin_cos(a, s, c);
  return s;
}

inline Series cos(const Series& a) {
  Series s(0), c(0);
  sin_cos(a, s, c);
  return c;
}

/// Integer power by repeated multiplication.
inline Series pow(const Series& a, int p) {
  if (p < 0) return 1.0 / pow(a, -p);
  Series out = Series::constant(a.order(), 1.0);
  for (int i = 0; i < p; ++i) out = out * a;
  return out;
}

/// Bivariate expansion sum_{i+j<=K} c_ij h1^i h2^j.
class Jet2 {
 public:
  explicit Jet2(int order)
      : order_(order), c_(static_cast<std::size_t>((order + 1) * (order + 1)), 0.0) {}

  /// Lifts a series in the first (axis 0) or second (axis 1) variable.
  static Jet2 lift(const Series& s, int axis) {
    Jet2 out(s.order());
    for (int k = 0; k <= s.order(); ++k) {
      if (axis == 0)
        out.at(k, 0) = s[k];
      else
        out.at(0, k) = s[k];
    }
    return out;
  }

  int order() const noexcept { return order_; }
  double& at(int i, int j) { return c_[static_cast<std::size_t>(i * (order_ + 1) + j)]; }
  double at(int i, int j) const { return c_[static_cast<std::size_t>(i * (order_ + 1) + j)]; }

  /// d^{i+j} / dx1^i dx2^j at the expansion point.
  double derivative(int i, int j) const {
    if (i + j > order_) throw std::out_of_range("Jet2: derivative order exceeds jet order");
    double f = 1.0;
    for (int k = 2; k <= i; ++k) f *= k;
    for (int k = 2; k <= j; ++k) f *= k;
    return at(i, j) * f;
  }

  friend Jet2 operator+(Jet2 a, const Jet2& b) {
    for (std::size_t k = 0; k < a.c_.size(); ++k) a.c_[k] += b.c_[k];
    return a;
  }
  friend Jet2 operator-(Jet2 a, const Jet2& b) {
    for (std::size_t k = 0; k < a.c_.size(); ++k) a.c_[k] -= b.c_[k];
    return a;
  }
  friend Jet2 operator*(Jet2 a, double s) {
    for (auto& v : a.c_) v *= s;
    return a;
  }

  friend Jet2 operator*(const Jet2& a, const Jet2& b) {
    Jet2 out(a.order_);
    const int K = a.order_;
    for (int i1 = 0; i1 <= K; ++i1)
      for (int j1 = 0; i1 + j1 <= K; ++j1) {
        const double av = a.at(i1, j1);
        if (av == 0.0) continue;
        for (int i2 = 0; i1 + j1 + i2 <= K; ++i2)
          for (int j2 = 0; i1 + j1 + i2 + j2 <= K; ++j2) out.at(i1 + i2, j1 + j2) += av * b.at(i2, j2);
      }
    return out;
  }

  /// Composition g(a) given the derivatives g^(k)(a_00), k = 0..K.
  template <class Derivs>
  static Jet2 compose(const Jet2& a, Derivs&& derivs) {
    Jet2 delta = a;
    delta.at(0, 0) = 0.0;
    Jet2 out(a.order_);
    Jet2 power(a.order_);
    power.at(0, 0) = 1.0;
    double fact = 1.0;
    for (int k = 0; k <= a.order_; ++k) {
      if (k > 0) {
        power = power * delta;
        fact *= k;
      }
      out = out + power * (derivs(k) / fact);
    }
    return out;
  }

 private:
  int order_;
  std::vector<double> c_;
};

inline Jet2 exp(const Jet2& a) {
  const double e = std::exp(a.at(0, 0));
  return Jet2::compose(a, [e](int) { return e; });
}

inline Jet2 reciprocal(const Jet2& a) {
  const double v = a.at(0, 0);
  if (v == 0.0) throw std::domain_error("Jet2: division by a vanishing jet");
  // d^k/dv^k (1/v) = (-1)^k k! / v^{k+1}
  return Jet2::compose(a, [v](int k) {
    double r = 1.0 / v;
    for (int i = 1; i <= k; ++i) r *= -static_cast<double>(i) / v;
    return r;
  });
}

}  // namespace branchpde
