#pragma once

// Codes, the multivariate Faa di Bruno enumeration of code sequences, and the
// branching mechanism that maps a code to the sequences a tree node may
// branch into.

#include <bit>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchpde/model.hpp"
#include "branchpde/multiindex.hpp"

namespace branchpde {

/// u_i.
struct Identity {
  int index = 0;
  friend bool operator==(const Identity&, const Identity&) = default;
};

/// (a d^lambda f_function)^*: a times d^lambda f evaluated on the argument tuple.
struct FDeriv {
  double coef = 1.0;
  MultiIndex lambda;
  int function = 0;
  friend bool operator==(const FDeriv&, const FDeriv&) = default;
};

/// (a d^mu, i): a times d^mu u_i.
struct UDeriv {
  double coef = 1.0;
  MultiIndex mu;
  int index = 0;
  friend bool operator==(const UDeriv&, const UDeriv&) = default;
};

/// (d^mu, -1): d^mu (d_t + nu Lap) u_0.
struct HeatOp {
  MultiIndex mu;
  friend bool operator==(const HeatOp&, const HeatOp&) = default;
};

using Code = std::variant<Identity, FDeriv, UDeriv, HeatOp>;
using CodeSeq = std::vector<Code>;

/// Codes resolved by the Poisson branch: derivatives of u_0 and heat codes.
inline bool is_poisson_code(const Code& c) {
  if (const auto* id = std::get_if<Identity>(&c)) return id->index == 0;
  if (const auto* ud = std::get_if<UDeriv>(&c)) return ud->index == 0;
  return std::holds_alternative<HeatOp>(c);
}

struct CodeHash {
  std::size_t operator()(const Code& c) const noexcept {
    std::size_t h = c.index() * 0x9e3779b97f4a7c15ull;
    auto mix = [&h](std::size_t v) { h = (h ^ v) * 0x100000001b3ull; };
    const MultiIndexHash mh;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Identity>) {
            mix(static_cast<std::size_t>(v.index));
          } else if constexpr (std::is_same_v<T, FDeriv>) {
            mix(std::bit_cast<std::uint64_t>(v.coef));
            mix(mh(v.lambda));
            mix(static_cast<std::size_t>(v.function));
          } else if constexpr (std::is_same_v<T, UDeriv>) {
            mix(std::bit_cast<std::uint64_t>(v.coef));
            mix(mh(v.mu));
            mix(static_cast<std::size_t>(v.index));
          } else {
            mix(mh(v.mu));
          }
        },
        c);
    return h;
  }
};

inline std::string to_string(const Code& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return "Id_" + std::to_string(v.index);
        } else if constexpr (std::is_same_v<T, FDeriv>) {
          return "(" + std::to_string(v.coef) + " d" + v.lambda.to_string() + " f_" +
                 std::to_string(v.function) + ")*";
        } else if constexpr (std::is_same_v<T, UDeriv>) {
          return "(" + std::to_string(v.coef) + " d" + v.mu.to_string() + ", " +
                 std::to_string(v.index) + ")";
        } else {
          return "(d" + v.mu.to_string() + ", -1)";
        }
      },
      c);
}

inline nlohmann::json to_json(const Code& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return {{"kind", "identity"}, {"index", v.index}};
        } else if constexpr (std::is_same_v<T, FDeriv>) {
          return {{"kind", "f_deriv"},
                  {"coef", v.coef},
                  {"lambda", v.lambda.entries()},
                  {"function", v.function}};
        } else if constexpr (std::is_same_v<T, UDeriv>) {
          return {{"kind", "u_deriv"}, {"coef", v.coef}, {"mu", v.mu.entries()}, {"index", v.index}};
        } else {
          return {{"kind", "heat"}, {"mu", v.mu.entries()}};
        }
      },
      c);
}

inline nlohmann::json to_json(const std::vector<CodeSeq>& seqs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : seqs) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& c : s) row.push_back(to_json(c));
    out.push_back(std::move(row));
  }
  return out;
}

/// Throws unless c has the right index lengths and ranges for the model.
inline void check_code(const Code& c, const PDESystem& model) {
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Identity>) {
          if (v.index < 0 || v.index > model.d) throw std::invalid_argument("code: bad solution index");
        } else if constexpr (std::is_same_v<T, FDeriv>) {
          if (static_cast<int>(v.lambda.size()) != model.n)
            throw std::invalid_argument("code: lambda must have length n");
          if (v.function < 0 || v.function > model.d)
            throw std::invalid_argument("code: bad function index");
          if (!std::isfinite(v.coef)) throw std::invalid_argument("code: non-finite coefficient");
        } else if constexpr (std::is_same_v<T, UDeriv>) {
          if (static_cast<int>(v.mu.size()) != model.d)
            throw std::invalid_argument("code: mu must have length d");
          if (v.index < 0 || v.index > model.d) throw std::invalid_argument("code: bad solution index");
          if (!std::isfinite(v.coef)) throw std::invalid_argument("code: non-finite coefficient");
        } else {
          if (static_cast<int>(v.mu.size()) != model.d)
            throw std::invalid_argument("code: mu must have length d");
        }
      },
      c);
}

struct MechanismOptions {
  /// Drop sequences holding an f-derivative that vanishes identically. Such
  /// sequences contribute exactly zero, so the estimator stays unbiased while
  /// r_c shrinks.
  bool prune_vanishing = false;
};

/// One term of the multivariate Faa di Bruno formula for d^mu (g o v):
/// coef * d^lambda g * prod of the listed solution derivatives.
struct FdbTerm {
  double coef = 1.0;
  MultiIndex lambda;
  std::vector<UDeriv> factors;
};

namespace detail {

inline void compositions(int total, int parts, std::vector<int>& cur, int pos,
                         const std::function<void()>& emit) {
  if (pos + 1 == parts) {
    cur[pos] = total;
    emit();
    return;
  }
  for (int v = total; v >= 0; --v) {
    cur[pos] = v;
    compositions(total - v, parts, cur, pos + 1, emit);
  }
}

}  // namespace detail

/// Terms of d^mu (g(d^{alpha_1} u_{beta_1}, ..., d^{alpha_n} u_{beta_n})). For
/// |mu| = 0 the single term (1, 0, {}) is returned. `max_order` bounds
/// |lambda| (-1: no bound).
inline std::vector<FdbTerm> faa_di_bruno_terms(const MultiIndex& mu, const PDESystem& model,
                                               int max_order = -1) {
  const auto d = static_cast<std::size_t>(model.d);
  const int n = model.n;
  if (mu.size() != d) throw std::invalid_argument("faa_di_bruno_terms: mu must have length d");
  std::vector<FdbTerm> out;
  if (mu.is_zero()) {
    out.push_back({1.0, MultiIndex(static_cast<std::size_t>(n)), {}});
    return out;
  }

  // Candidate blocks l^r: nonzero l <= mu in graded order.
  std::vector<MultiIndex> candidates;
  for (auto& l : multi_indices_below(mu))
    if (!l.is_zero()) candidates.push_back(std::move(l));

  const double mu_fact = static_cast<double>(multi_factorial(mu));
  std::vector<std::pair<std::size_t, int>> blocks;  // (candidate, multiplicity |k_r|)

  auto emit_blocks = [&]() {
    int total = 0;
    for (auto& b : blocks) total += b.second;
    if (max_order >= 0 && total > max_order) return;
    const std::size_t s = blocks.size();
    std::vector<std::vector<int>> k(s, std::vector<int>(static_cast<std::size_t>(n), 0));
    std::function<void(std::size_t)> over_blocks = [&](std::size_t r) {
      if (r == s) {
        FdbTerm term;
        term.lambda = MultiIndex(static_cast<std::size_t>(n));
        double denom = 1.0;
        for (std::size_t rr = 0; rr < s; ++rr) {
          const MultiIndex& l = candidates[blocks[rr].first];
          const double l_fact = static_cast<double>(multi_factorial(l));
          for (int i = 0; i < n; ++i) {
            const int kri = k[rr][static_cast<std::size_t>(i)];
            if (kri == 0) continue;
            term.lambda.set(static_cast<std::size_t>(i), term.lambda[static_cast<std::size_t>(i)] + kri);
            denom *= static_cast<double>(factorial(kri)) * std::pow(l_fact, kri);
            for (int c = 0; c < kri; ++c)
              term.factors.push_back({1.0, l + model.alpha[static_cast<std::size_t>(i)],
                                      model.beta[static_cast<std::size_t>(i)]});
          }
        }
        term.coef = mu_fact / denom;
        out.push_back(std::move(term));
        return;
      }
      std::vector<int> cur(static_cast<std::size_t>(n), 0);
      detail::compositions(blocks[r].second, n, cur, 0, [&]() {
        k[r] = cur;
        over_blocks(r + 1);
      });
    };
    over_blocks(0);
  };

  // Choose l^1 < l^2 < ... with multiplicities m_r >= 1 and sum m_r l^r = mu.
  std::function<void(std::size_t, const MultiIndex&)> choose = [&](std::size_t start,
                                                                   const MultiIndex& remaining) {
    if (remaining.is_zero()) {
      emit_blocks();
      return;
    }
    for (std::size_t c = start; c < candidates.size(); ++c) {
      const MultiIndex& l = candidates[c];
      MultiIndex rem = remaining;
      for (int m = 1; l.fits_within(rem); ++m) {
        rem -= l;
        blocks.emplace_back(c, m);
        choose(c + 1, rem);
        blocks.pop_back();
      }
    }
  };
  choose(0, mu);
  return out;
}

namespace detail {

// Appends, for every Faa di Bruno term of d^mu (d^base f_fidx o v), the sequence
// prefix + (scale * coef * d^{lambda + base} f_fidx)^* + factors.
inline void expand_derivative(const MultiIndex& mu, int fidx, const MultiIndex& base, double scale,
                              const CodeSeq& prefix, const PDESystem& model,
                              const MechanismOptions& opts, std::vector<CodeSeq>& out) {
  int max_order = -1;
  if (opts.prune_vanishing && model.f_degree >= 0) {
    max_order = model.f_degree - base.norm();
    if (max_order < 0) return;
  }
  for (auto& term : faa_di_bruno_terms(mu, model, max_order)) {
    MultiIndex lambda = term.lambda + base;
    if (opts.prune_vanishing && model.vanishes(fidx, lambda)) continue;
    CodeSeq seq = prefix;
    seq.reserve(prefix.size() + 1 + term.factors.size());
    seq.emplace_back(FDeriv{scale * term.coef, std::move(lambda), fidx});
    for (auto& f : term.factors) seq.emplace_back(std::move(f));
    out.push_back(std::move(seq));
  }
}

inline bool prefix_vanishes(const CodeSeq& prefix, const PDESystem& model,
                            const MechanismOptions& opts) {
  if (!opts.prune_vanishing) return false;
  for (const auto& c : prefix)
    if (const auto* f = std::get_if<FDeriv>(&c))
      if (f->coef == 0.0 || model.vanishes(f->function, f->lambda)) return true;
  return false;
}

}  // namespace detail

/// fdb(mu, f_fidx, prefix): one sequence per Faa di Bruno term of
/// d^mu (f_fidx o v), each being prefix + (coef d^lambda f_fidx)^* + the
/// matching solution derivatives (d^{l^r + alpha_i}, beta_i).
inline std::vector<CodeSeq> fdb_enumerate(const MultiIndex& mu, int fidx, const CodeSeq& prefix,
                                          const PDESystem& model,
                                          const MechanismOptions& opts = {}) {
  if (static_cast<int>(mu.size()) != model.d)
    throw std::invalid_argument("fdb_enumerate: mu must have length d");
  if (mu.norm() < 1) throw std::invalid_argument("fdb_enumerate: requires |mu| >= 1");
  if (fidx < 0 || fidx > model.d) throw std::invalid_argument("fdb_enumerate: bad function index");
  std::vector<CodeSeq> out;
  if (detail::prefix_vanishes(prefix, model, opts)) return out;
  detail::expand_derivative(mu, fidx, MultiIndex(static_cast<std::size_t>(model.n)), 1.0, prefix,
                            model, opts, out);
  return out;
}

/// The branching mechanism: the list of code sequences a node labelled c
/// branches into, in deterministic order. Derivatives of order zero expand
/// to the bare function code.
inline std::vector<CodeSeq> mechanism(const Code& c, const PDESystem& model,
                                      const MechanismOptions& opts = {}) {
  check_code(c, model);
  const auto d = static_cast<std::size_t>(model.d);
  const auto n = static_cast<std::size_t>(model.n);
  const int q = model.q;
  std::vector<CodeSeq> out;

  if (const auto* id = std::get_if<Identity>(&c)) {
    out.push_back({FDeriv{1.0, MultiIndex(n), id->index}});
    return out;
  }

  if (const auto* ud = std::get_if<UDeriv>(&c)) {
    detail::expand_derivative(ud->mu, ud->index, MultiIndex(n), ud->coef, {}, model, opts, out);
    return out;
  }

  if (const auto* g = std::get_if<FDeriv>(&c)) {
    const int gf = g->function;
    // Transport of d^{alpha_r} u_{beta_r} through the heat operator.
    for (int r = q; r < model.n; ++r) {
      CodeSeq prefix{FDeriv{g->coef, g->lambda + MultiIndex::unit(n, r), gf}};
      if (detail::prefix_vanishes(prefix, model, opts)) continue;
      detail::expand_derivative(model.alpha[r], model.beta[r], MultiIndex(n), 1.0, prefix, model,
                                opts, out);
    }
    // Second-order (carre du champ) terms.
    for (int i = 0; i < model.n; ++i) {
      for (int j = 0; j < model.n; ++j) {
        FDeriv head{-model.nu * g->coef,
                    g->lambda + MultiIndex::unit(n, i) + MultiIndex::unit(n, j), gf};
        if (opts.prune_vanishing && model.vanishes(gf, head.lambda)) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const MultiIndex ek = MultiIndex::unit(d, k);
          out.push_back({head, UDeriv{1.0, model.alpha[i] + ek, model.beta[i]},
                         UDeriv{1.0, model.alpha[j] + ek, model.beta[j]}});
        }
      }
    }
    // Pressure-derivative arguments pick up d^{alpha_r}(d_t + nu Lap) u_0.
    for (int r = 0; r < q; ++r) {
      FDeriv head{-g->coef, g->lambda + MultiIndex::unit(n, r), gf};
      if (opts.prune_vanishing && model.vanishes(gf, head.lambda)) continue;
      out.push_back({head, HeatOp{model.alpha[r]}});
    }
    return out;
  }

  const auto& heat = std::get<HeatOp>(c);
  const MultiIndex& mu = heat.mu;
  const auto below_mu = multi_indices_below(mu);
  // Leibniz expansion of the nu-weighted pair terms of (d_t + nu Lap) f_0^*.
  for (int i = q; i < model.n; ++i) {
    for (int j = q; j < model.n; ++j) {
      const MultiIndex base = MultiIndex::unit(n, i) + MultiIndex::unit(n, j);
      if (opts.prune_vanishing && model.vanishes(0, base)) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const MultiIndex ek = MultiIndex::unit(d, k);
        for (const auto& ell : below_mu) {
          for (const auto& gamma : multi_indices_below(ell)) {
            const double w = model.nu * static_cast<double>(multi_binomial(mu, ell)) *
                             static_cast<double>(multi_binomial(ell, gamma));
            CodeSeq prefix{UDeriv{w, mu - ell + model.alpha[i] + ek, model.beta[i]},
                           UDeriv{1.0, ell - gamma + model.alpha[j] + ek, model.beta[j]}};
            detail::expand_derivative(gamma, 0, base, 1.0, prefix, model, opts, out);
          }
        }
      }
    }
  }
  // Leibniz expansion of -(d_i f_0)^* d^{alpha_i} f_{beta_i}^*.
  for (int i = q; i < model.n; ++i) {
    const MultiIndex ei = MultiIndex::unit(n, i);
    for (const auto& ell : below_mu) {
      const double lead = static_cast<double>(multi_binomial(mu, ell));
      int inner_order = -1;
      if (opts.prune_vanishing && model.f_degree >= 0) {
        inner_order = model.f_degree - 1;
        if (inner_order < 0) continue;
      }
      for (auto& inner : faa_di_bruno_terms(ell, model, inner_order)) {
        FDeriv head{-lead * inner.coef, inner.lambda + ei, 0};
        if (opts.prune_vanishing && model.vanishes(0, head.lambda)) continue;
        CodeSeq prefix{head};
        for (auto& f : inner.factors) prefix.emplace_back(std::move(f));
        detail::expand_derivative(mu - ell + model.alpha[i], model.beta[i], MultiIndex(n), 1.0,
                                  prefix, model, opts, out);
      }
    }
  }
  return out;
}

/// Supplies d^mu u_i(t, x) for i in 0..d and d^mu (d_t + nu Lap) u_0(t, x).
class DerivativeOracle {
 public:
  virtual ~DerivativeOracle() = default;
  virtual double derivative(int i, const MultiIndex& mu, double t,
                            std::span<const double> x) const = 0;
  virtual double heat_pressure(const MultiIndex&, double, std::span<const double>) const {
    throw OracleError("oracle cannot supply d^mu (d_t + nu Lap) u_0");
  }
};

/// Oracle backed by a terminal condition; valid at t = T only.
class TerminalOracle final : public DerivativeOracle {
 public:
  explicit TerminalOracle(const TerminalCondition& terminal) : terminal_(&terminal) {}
  double derivative(int i, const MultiIndex& mu, double, std::span<const double> x) const override {
    return eval_terminal_derivative(*terminal_, i, mu, x);
  }
  double heat_pressure(const MultiIndex& mu, double, std::span<const double> x) const override {
    if (!terminal_->heat_pressure)
      throw OracleError("terminal condition cannot supply d^mu (d_t + nu Lap) u_0");
    return terminal_->heat_pressure(mu, x);
  }

 private:
  const TerminalCondition* terminal_;
};

/// The argument tuple (d^{alpha_j} u_{beta_j}(t, x))_j.
inline std::vector<double> argument_tuple(const PDESystem& model, const DerivativeOracle& oracle,
                                          double t, std::span<const double> x) {
  std::vector<double> args(static_cast<std::size_t>(model.n));
  for (int j = 0; j < model.n; ++j)
    args[static_cast<std::size_t>(j)] =
        oracle.derivative(model.beta[static_cast<std::size_t>(j)],
                          model.alpha[static_cast<std::size_t>(j)], t, x);
  return args;
}

/// c(u)(t, x).
inline double eval_code(const Code& c, const PDESystem& model, const DerivativeOracle& oracle,
                        double t, std::span<const double> x) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return oracle.derivative(v.index, MultiIndex(static_cast<std::size_t>(model.d)), t, x);
        } else if constexpr (std::is_same_v<T, FDeriv>) {
          const auto args = argument_tuple(model, oracle, t, x);
          return v.coef * model.f_deriv(v.function, v.lambda, args);
        } else if constexpr (std::is_same_v<T, UDeriv>) {
          return v.coef * oracle.derivative(v.index, v.mu, t, x);
        } else {
          return oracle.heat_pressure(v.mu, t, x);
        }
      },
      c);
}

using CodeId = std::uint32_t;

/// Interned codes with memoized mechanism results. Reads take a shared lock;
/// a missing entry is computed outside the lock and inserted by a single
/// writer. Returned references stay valid for the table's lifetime.
class MechanismTable {
 public:
  MechanismTable(const PDESystem& model, MechanismOptions opts) : model_(&model), opts_(opts) {}

  MechanismTable(const MechanismTable&) = delete;
  MechanismTable& operator=(const MechanismTable&) = delete;

  const PDESystem& model() const noexcept { return *model_; }
  const MechanismOptions& options() const noexcept { return opts_; }

  CodeId intern(const Code& c) {
    {
      std::shared_lock lock(mutex_);
      if (auto it = ids_.find(c); it != ids_.end()) return it->second;
    }
    std::unique_lock lock(mutex_);
    return intern_locked(c);
  }

  const Code& code(CodeId id) const {
    std::shared_lock lock(mutex_);
    return codes_[id];
  }

  /// Sequences of M(code(id)) as code ids.
  const std::vector<std::vector<CodeId>>& children(CodeId id) {
    {
      std::shared_lock lock(mutex_);
      if (id < children_.size() && children_[id]) return *children_[id];
    }
    Code c = code(id);
    auto seqs = mechanism(c, *model_, opts_);
    std::unique_lock lock(mutex_);
    if (id < children_.size() && children_[id]) return *children_[id];
    auto entry = std::make_unique<std::vector<std::vector<CodeId>>>();
    entry->reserve(seqs.size());
    for (const auto& s : seqs) {
      std::vector<CodeId> row;
      row.reserve(s.size());
      for (const auto& cc : s) row.push_back(intern_locked(cc));
      entry->push_back(std::move(row));
    }
    if (children_.size() <= id) children_.resize(static_cast<std::size_t>(id) + 1);
    children_[id] = std::move(entry);
    return *children_[id];
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return codes_.size();
  }

 private:
  CodeId intern_locked(const Code& c) {
    if (auto it = ids_.find(c); it != ids_.end()) return it->second;
    const auto id = static_cast<CodeId>(codes_.size());
    codes_.push_back(c);
    ids_.emplace(c, id);
    return id;
  }

  const PDESystem* model_;
  MechanismOptions opts_;
  mutable std::shared_mutex mutex_;
  std::deque<Code> codes_;
  std::unordered_map<Code, CodeId, CodeHash> ids_;
  std::vector<std::unique_ptr<std::vector<std::vector<CodeId>>>> children_;
};

}  // namespace branchpde
