#pragma once

// Multi-indices of derivative orders and the graded order used by the
// multivariate Faa di Bruno enumeration.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace branchpde {

/// Vector of natural numbers indexing a partial derivative. The length is a
/// runtime value: d for spatial indices, n for function-argument indices.
class MultiIndex {
 public:
  MultiIndex() = default;

  explicit MultiIndex(std::size_t length) : entries_(length, 0) {}

  MultiIndex(std::initializer_list<int> entries) : entries_(entries) { check_natural(); }

  explicit MultiIndex(std::vector<int> entries) : entries_(std::move(entries)) { check_natural(); }

  static MultiIndex unit(std::size_t length, std::size_t position) {
    if (position >= length) throw std::out_of_range("MultiIndex::unit: position out of range");
    MultiIndex out(length);
    out.entries_[position] = 1;
    return out;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  int operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<int>& entries() const noexcept { return entries_; }

  void set(std::size_t i, int value) {
    if (value < 0) throw std::invalid_argument("MultiIndex: negative entry");
    entries_.at(i) = value;
  }

  /// |k| = sum of entries.
  int norm() const noexcept { return std::accumulate(entries_.begin(), entries_.end(), 0); }

  bool is_zero() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(), [](int e) { return e == 0; });
  }

  /// Componentwise k <= other.
  bool fits_within(const MultiIndex& other) const {
    check_same_length(other);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i] > other.entries_[i]) return false;
    return true;
  }

  MultiIndex& operator+=(const MultiIndex& other) {
    check_same_length(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] += other.entries_[i];
    return *this;
  }

  /// Componentwise difference; throws if any coordinate would go negative.
  MultiIndex& operator-=(const MultiIndex& other) {
    check_same_length(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (other.entries_[i] > entries_[i])
        throw std::invalid_argument("MultiIndex: subtraction leaves a negative entry");
      entries_[i] -= other.entries_[i];
    }
    return *this;
  }

  MultiIndex& operator*=(int factor) {
    if (factor < 0) throw std::invalid_argument("MultiIndex: negative scale");
    for (auto& e : entries_) e *= factor;
    return *this;
  }

  friend MultiIndex operator+(MultiIndex a, const MultiIndex& b) { return a += b; }
  friend MultiIndex operator-(MultiIndex a, const MultiIndex& b) { return a -= b; }
  friend MultiIndex operator*(int factor, MultiIndex a) { return a *= factor; }

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;

  std::string to_string() const {
    std::string out = "(";
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(entries_[i]);
    }
    return out + ")";
  }

  void check_same_length(const MultiIndex& other) const {
    if (other.size() != size()) throw std::invalid_argument("MultiIndex: length mismatch");
  }

 private:
  void check_natural() const {
    for (int e : entries_)
      if (e < 0) throw std::invalid_argument("MultiIndex: negative entry");
  }

  std::vector<int> entries_;
};

/// Graded order: k precedes l if |k| < |l|, or |k| == |l| and k is
/// lexicographically smaller. Strict and total on distinct indices.
inline bool precedes(const MultiIndex& k, const MultiIndex& l) {
  k.check_same_length(l);
  const int nk = k.norm();
  const int nl = l.norm();
  if (nk != nl) return nk < nl;
  return k.entries() < l.entries();
}

struct GradedLess {
  bool operator()(const MultiIndex& a, const MultiIndex& b) const { return precedes(a, b); }
};

inline std::uint64_t factorial(int n) {
  if (n < 0) throw std::invalid_argument("factorial: negative argument");
  std::uint64_t out = 1;
  for (int i = 2; i <= n; ++i) {
    if (out > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(i))
      throw std::overflow_error("factorial: 64-bit overflow");
    out *= static_cast<std::uint64_t>(i);
  }
  return out;
}

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) throw std::invalid_argument("binomial: requires 0 <= k <= n");
  k = std::min(k, n - k);
  std::uint64_t out = 1;
  for (int i = 1; i <= k; ++i) {
    const auto num = static_cast<std::uint64_t>(n - k + i);
    if (out > std::numeric_limits<std::uint64_t>::max() / num)
      throw std::overflow_error("binomial: 64-bit overflow");
    out = out * num / static_cast<std::uint64_t>(i);
  }
  return out;
}

/// prod_r mu_r!
inline std::uint64_t multi_factorial(const MultiIndex& mu) {
  std::uint64_t out = 1;
  for (int e : mu.entries()) {
    const std::uint64_t f = factorial(e);
    if (out > std::numeric_limits<std::uint64_t>::max() / f)
      throw std::overflow_error("multi_factorial: 64-bit overflow");
    out *= f;
  }
  return out;
}

/// prod_r C(mu_r, ell_r); requires ell <= mu componentwise.
inline std::uint64_t multi_binomial(const MultiIndex& mu, const MultiIndex& ell) {
  if (!ell.fits_within(mu)) throw std::invalid_argument("multi_binomial: ell exceeds mu");
  std::uint64_t out = 1;
  for (std::size_t r = 0; r < mu.size(); ++r) {
    const std::uint64_t b = binomial(mu[r], ell[r]);
    if (out > std::numeric_limits<std::uint64_t>::max() / b)
      throw std::overflow_error("multi_binomial: 64-bit overflow");
    out *= b;
  }
  return out;
}

/// All multi-indices of the given length and norm, in graded order.
inline std::vector<MultiIndex> multi_indices_of_norm(std::size_t length, int norm) {
  std::vector<MultiIndex> out;
  if (norm < 0) return out;
  if (length == 0) {
    if (norm == 0) out.emplace_back(0);
    return out;
  }
  std::vector<int> current(length, 0);
  // Lexicographically increasing: the first coordinate grows slowest.
  std::function<void(std::size_t, int)> fill = [&](std::size_t pos, int remaining) {
    if (pos + 1 == length) {
      current[pos] = remaining;
      out.emplace_back(current);
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      current[pos] = v;
      fill(pos + 1, remaining - v);
    }
  };
  fill(0, norm);
  return out;
}

/// All ell with 0 <= ell <= mu componentwise, in graded order.
inline std::vector<MultiIndex> multi_indices_below(const MultiIndex& mu) {
  std::vector<MultiIndex> out;
  std::vector<int> current(mu.size(), 0);
  std::function<void(std::size_t)> fill = [&](std::size_t pos) {
    if (pos == mu.size()) {
      out.emplace_back(current);
      return;
    }
    for (int v = 0; v <= mu[pos]; ++v) {
      current[pos] = v;
      fill(pos + 1);
    }
  };
  fill(0);
  std::sort(out.begin(), out.end(), GradedLess{});
  return out;
}

struct MultiIndexHash {
  std::size_t operator()(const MultiIndex& k) const noexcept {
    std::size_t h = 0xcbf29ce484222325ull ^ k.size();
    for (int e : k.entries()) h = (h ^ static_cast<std::size_t>(e)) * 0x100000001b3ull;
    return h;
  }
};

}  // namespace branchpde
