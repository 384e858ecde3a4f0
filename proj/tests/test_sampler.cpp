#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "branchpde/flows.hpp"
#include "branchpde/sampler.hpp"

using namespace branchpde;

TEST(Sampler, StreamsAreKeyed) {
  Rng a = make_stream(1, {2, 3});
  Rng b = make_stream(1, {2, 3});
  Rng c = make_stream(1, {3, 2});
  Rng e = make_stream(2, {2, 3});
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, e());
}

TEST(Sampler, PoissonKernel) {
  const double e = std::exp(1.0);
  const std::vector<double> y2{e, 0.0};
  EXPECT_NEAR(poisson_kernel(y2, 2), e * e, 1e-12);  // |y|^2 log|y|
  const std::vector<double> y3{0.0, 2.0, 0.0};
  EXPECT_DOUBLE_EQ(poisson_kernel(y3, 3), -4.0);
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(poisson_kernel(zero, 2), 0.0);
  const std::vector<double> one{1.0};
  EXPECT_THROW(poisson_kernel(one, 1), std::invalid_argument);
}

TEST(Sampler, CompensatedSummary) {
  CompensatedSum s;
  for (double v : {1e16, 1.0, -1e16}) s.add(v);
  EXPECT_EQ(s.value(), 1.0);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> v{1.0, 2.0, nan, 3.0};
  const EstimateStats st = summarize(v);
  EXPECT_EQ(st.samples, 3u);
  EXPECT_EQ(st.aborted, 1u);
  EXPECT_DOUBLE_EQ(st.mean, 2.0);
  EXPECT_NEAR(st.std_error, std::sqrt(1.0 / 3.0), 1e-15);

  const std::vector<double> single{4.0};
  EXPECT_FALSE(summarize(single).has_std_error());
}

TEST(Sampler, DefaultSurvivalIsNinetyFivePercent) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  TreeSampler s(m, {});
  EXPECT_NEAR(s.survival(m.T), 0.95, 1e-12);
  std::exponential_distribution<double> tau(s.rate());
  Rng rng = make_stream(3, {});
  int survived = 0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) survived += tau(rng) > m.T;
  EXPECT_NEAR(survived / static_cast<double>(n), 0.95, 0.01);
}

TEST(Sampler, TerminalTimeIsExact) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  TreeSampler s(m, {});
  const std::vector<double> x{0.3};
  Rng rng = make_stream(0, {});
  for (int k = 0; k < 20; ++k) EXPECT_DOUBLE_EQ(s.sample(m.T, x, Identity{1}, rng), std::cos(0.3));
}

TEST(Sampler, SemilinearUnbiased) {
  const double a = 0.5, T = 0.5;
  const PDESystem m = semilinear_linear_model(a, T);
  SamplerConfig cfg;
  cfg.seed = 11;
  TreeSampler s(m, cfg);
  for (double t : {0.0, 0.2}) {
    const std::vector<double> x{0.7};
    const EstimateStats st = s.estimate(t, x, 1, 20000);
    const double exact = std::exp((a - m.nu) * (T - t)) * std::cos(0.7);
    EXPECT_LE(std::abs(st.mean - exact), 4.0 * st.std_error) << t;
    EXPECT_EQ(st.aborted, 0u);
  }
}

TEST(Sampler, TaylorGreenUnbiased) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  TreeSampler s(m, {});
  const std::vector<double> x{0.0, M_PI / 2};
  const EstimateStats st = s.estimate(0.125, x, 1, 10000);
  EXPECT_NEAR(flow.value(1, 0.125, x), -0.77880, 5e-6);
  EXPECT_LE(std::abs(st.mean - flow.value(1, 0.125, x)), 4.0 * st.std_error);
}

TEST(Sampler, ParallelMatchesSerial) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  SamplerConfig cfg;
  cfg.seed = 5;
  TreeSampler serial(m, cfg), parallel(m, cfg);
  const std::vector<double> x{1.0, 2.0};
  const EstimateStats a = serial.estimate(0.05, x, 2, 3000, 1, 9);
  const EstimateStats b = parallel.estimate(0.05, x, 2, 3000, 3, 9);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
  const EstimateStats c = serial.estimate(0.05, x, 2, 3000, 1, 10);
  EXPECT_NE(a.mean, c.mean);
}

TEST(Sampler, DepthCapAborts) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  SamplerConfig cfg;
  cfg.max_depth = 1;
  cfg.rho_rate = 8.0;
  TreeSampler s(m, cfg);
  const std::vector<double> x{1.0, 2.0};
  const EstimateStats st = s.estimate(0.0, x, 1, 500);
  EXPECT_GT(st.aborted, 0u);
  EXPECT_GT(st.samples, 0u);
  EXPECT_EQ(st.aborted + st.samples, 500u);
  EXPECT_EQ(s.abort_count(), st.aborted);
  cfg.rho_rate = 500.0;
  TreeSampler hopeless(m, cfg);
  EXPECT_THROW(hopeless.estimate(0.0, x, 1, 50), std::runtime_error);
}

TEST(Sampler, RejectsBadInput) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  SamplerConfig bad;
  bad.rho_tilde_hi = 0.0;
  EXPECT_THROW(TreeSampler(m, bad), std::invalid_argument);
  TreeSampler s(m, {});
  const std::vector<double> x{0.1};
  Rng rng = make_stream(0, {});
  EXPECT_THROW(s.sample(1.0, x, Identity{1}, rng), std::invalid_argument);
  EXPECT_THROW(s.estimate(0.0, x, 1, 0), std::invalid_argument);
  const std::vector<double> x2{0.1, 0.2};
  EXPECT_THROW(s.sample(0.0, x2, Identity{1}, rng), std::invalid_argument);
}

TEST(Sampler, PaperLiteralOrderRuns) {
  const ExactFlow flow = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, flow.terminal());
  SamplerConfig cfg;
  cfg.order = BranchOrder::paper_literal;
  TreeSampler s(m, cfg);
  const std::vector<double> x{0.0, M_PI / 2};
  const EstimateStats st = s.estimate(0.125, x, 1, 4000);
  // Terminal-first resolution of pressure codes is a different (biased)
  // estimator; only well-formedness is checked here.
  EXPECT_TRUE(std::isfinite(st.mean));
  EXPECT_EQ(st.samples + st.aborted, 4000u);
}
