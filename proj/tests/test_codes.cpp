#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <set>

#include "branchpde/codes.hpp"
#include "branchpde/flows.hpp"
#include "branchpde/selftest.hpp"

using namespace branchpde;

namespace {

double product(const CodeSeq& seq, const PDESystem& m, const DerivativeOracle& o, double t,
               std::span<const double> x) {
  double p = 1.0;
  for (const auto& c : seq) p *= eval_code(c, m, o, t, x);
  return p;
}

double mechanism_sum(const Code& c, const PDESystem& m, const DerivativeOracle& o, double t,
                     std::span<const double> x, MechanismOptions opts = {}) {
  double s = 0.0;
  for (const auto& seq : mechanism(c, m, opts)) s += product(seq, m, o, t, x);
  return s;
}

/// (d_t + nu Lap) g by central differences.
template <class Fn>
double heat_fd(Fn&& g, double nu, double t, std::vector<double> x) {
  const double ht = 1e-5;
  const double hx = 1e-3;
  double out = (g(t + ht, x) - g(t - ht, x)) / (2 * ht);
  const double g0 = g(t, x);
  for (auto& xi : x) {
    const double keep = xi;
    xi = keep + hx;
    const double gp = g(t, x);
    xi = keep - hx;
    const double gm = g(t, x);
    xi = keep;
    out += nu * (gp - 2 * g0 + gm) / (hx * hx);
  }
  return out;
}

}  // namespace

TEST(Codes, FdbMatchesPolynomialOracle) {
  const CheckResult r = fdb_oracle_suite({});
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Codes, PerturbedFdbIsDetected) {
  FdbSuiteOptions opts;
  opts.perturb = 1e-3;
  const CheckResult r = fdb_oracle_suite(opts);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.detail.find("mu="), std::string::npos);
  EXPECT_NE(r.detail.find("n="), std::string::npos);
  EXPECT_NE(r.detail.find("d="), std::string::npos);
}

TEST(Codes, FdbRejectsZeroOrder) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  EXPECT_THROW(fdb_enumerate(MultiIndex{0}, 1, {}, m), std::invalid_argument);
  EXPECT_EQ(fdb_enumerate(MultiIndex{1}, 1, {}, m).size(), 1u);
  // d^2 f(u) = f'' (u')^2 + f' u''.
  EXPECT_EQ(fdb_enumerate(MultiIndex{2}, 1, {}, m).size(), 2u);
}

TEST(Codes, SemilinearMechanismDisplay) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  const auto id = mechanism(Identity{1}, m);
  ASSERT_EQ(id.size(), 1u);
  EXPECT_EQ(id[0], (CodeSeq{FDeriv{1.0, MultiIndex{0}, 1}}));

  // -L f(u) = f'(u) f(u) - nu f''(u) (u')^2.
  const auto g = mechanism(FDeriv{1.0, MultiIndex{0}, 1}, m);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0], (CodeSeq{FDeriv{1.0, MultiIndex{1}, 1}, FDeriv{1.0, MultiIndex{0}, 1}}));
  EXPECT_EQ(g[1], (CodeSeq{FDeriv{-0.5, MultiIndex{2}, 1}, UDeriv{1.0, MultiIndex{1}, 1},
                           UDeriv{1.0, MultiIndex{1}, 1}}));

  // -L u' = (f(u))' = f'(u) u'.
  const auto du = mechanism(UDeriv{2.0, MultiIndex{1}, 1}, m);
  ASSERT_EQ(du.size(), 1u);
  EXPECT_EQ(du[0], (CodeSeq{FDeriv{2.0, MultiIndex{1}, 1}, UDeriv{1.0, MultiIndex{1}, 1}}));
}

TEST(Codes, PruningDropsVanishingSequencesOnly) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  const auto pruned = mechanism(FDeriv{1.0, MultiIndex{0}, 1}, m, {true});
  ASSERT_EQ(pruned.size(), 1u);
  EXPECT_EQ(pruned[0], (CodeSeq{FDeriv{1.0, MultiIndex{1}, 1}, FDeriv{1.0, MultiIndex{0}, 1}}));
}

TEST(Codes, MechanismEqualsMinusHeatOperatorOnTaylorGreen) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  const std::vector<double> x{0.3, 1.1};
  const double t = 0.1;
  const std::vector<Code> codes = {Identity{1},
                                   Identity{2},
                                   UDeriv{1.0, MultiIndex{1, 0}, 2},
                                   UDeriv{0.5, MultiIndex{1, 1}, 1},
                                   FDeriv{1.0, MultiIndex(8), 1},
                                   FDeriv{1.0, MultiIndex(8), 0}};
  for (const auto& c : codes) {
    auto g = [&](double tt, const std::vector<double>& xx) { return eval_code(c, m, flow, tt, xx); };
    const double expected = -heat_fd(g, m.nu, t, x);
    for (bool prune : {false, true})
      EXPECT_NEAR(mechanism_sum(c, m, flow, t, x, {prune}), expected, 1e-5 * (1 + std::abs(expected)))
          << to_string(c) << " prune=" << prune;
  }
}

TEST(Codes, MechanismEqualsMinusHeatOperatorOnAbc) {
  const ExactFlow flow = abc_flow(0.01, 0.5, 0.5, 0.5, 0.7);
  const PDESystem m = navier_stokes_model(3, 0.01, 0.7, flow.terminal());
  const std::vector<double> x{0.3, 1.1, -0.4};
  const double t = 0.2;
  for (const Code& c : std::vector<Code>{Identity{1}, Identity{3}, UDeriv{1.0, MultiIndex{0, 1, 0}, 2}}) {
    auto g = [&](double tt, const std::vector<double>& xx) { return eval_code(c, m, flow, tt, xx); };
    const double expected = -heat_fd(g, m.nu, t, x);
    EXPECT_NEAR(mechanism_sum(c, m, flow, t, x), expected, 1e-5 * (1 + std::abs(expected))) << to_string(c);
  }
}

TEST(Codes, HeatCodeExpandsHeatOperatorOfF0) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  const std::vector<double> x{0.7, 0.2};
  const double t = 0.05;
  auto f0 = [&](double tt, const std::vector<double>& xx) {
    return eval_code(FDeriv{1.0, MultiIndex(8), 0}, m, flow, tt, xx);
  };
  const double expected = heat_fd(f0, m.nu, t, x);
  EXPECT_NEAR(mechanism_sum(HeatOp{MultiIndex{0, 0}}, m, flow, t, x), expected, 1e-5 * (1 + std::abs(expected)));
  // Lap (d_t + nu Lap) u_0 = (d_t + nu Lap) f_0, which vanishes for Taylor-Green.
  EXPECT_NEAR(eval_code(HeatOp{MultiIndex{2, 0}}, m, flow, t, x) + eval_code(HeatOp{MultiIndex{0, 2}}, m, flow, t, x),
              expected, 1e-5 * (1 + std::abs(expected)));
}

TEST(Codes, NavierStokesMechanismClosedToDepthThree) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  MechanismTable table(m, {});
  std::deque<std::pair<CodeId, int>> queue{{table.intern(Identity{1}), 0}};
  std::set<CodeId> seen;
  while (!queue.empty()) {
    const auto [id, depth] = queue.front();
    queue.pop_front();
    if (!seen.insert(id).second || depth == 3) continue;
    const Code c = table.code(id);
    EXPECT_NO_THROW(check_code(c, m)) << to_string(c);
    if (is_poisson_code(c) && !std::holds_alternative<HeatOp>(c)) continue;
    const auto& kids = table.children(id);
    EXPECT_FALSE(kids.empty()) << to_string(c);
    for (const auto& seq : kids)
      for (CodeId k : seq) queue.emplace_back(k, depth + 1);
  }
  EXPECT_GT(seen.size(), 20u);
}

TEST(Codes, CheckCodeRejectsBadIndices) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  EXPECT_THROW(check_code(Identity{2}, m), std::invalid_argument);
  EXPECT_THROW(check_code(UDeriv{1.0, MultiIndex{1, 0}, 1}, m), std::invalid_argument);
  EXPECT_THROW(check_code(FDeriv{1.0, MultiIndex{0, 0}, 1}, m), std::invalid_argument);
}

TEST(Codes, JsonDump) {
  const nlohmann::json j = to_json(Code{UDeriv{2.5, MultiIndex{1, 0}, 2}});
  EXPECT_EQ(j.dump().find("2.5") != std::string::npos, true);
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  EXPECT_EQ(to_json(mechanism(FDeriv{1.0, MultiIndex{0}, 1}, m)).size(), 2u);
}
