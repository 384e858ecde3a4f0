#include <gtest/gtest.h>

#include <random>

#include "branchpde/metrics.hpp"

using namespace branchpde;

TEST(Metrics, GridIncludesEndpoints) {
  const Grid g(2, M_PI / 10, 0.0, 2 * M_PI);
  EXPECT_EQ(g.axis().size(), 21u);
  EXPECT_EQ(g.size(), 441u);
  EXPECT_NEAR(g.axis().back(), 2 * M_PI, 1e-12);
  const Matrix X = g.points();
  EXPECT_EQ(X.cols(), 441);
  EXPECT_DOUBLE_EQ(X(0, 1), 0.0);
  EXPECT_NEAR(X(1, 1), M_PI / 10, 1e-15);
  EXPECT_THROW(Grid(2, 0.0, 0.0, 1.0), std::invalid_argument);
}

TEST(Metrics, ExactEstimateHasZeroError) {
  const ExactFlow tg = taylor_green(1.0, 0.25);
  const ExactVelocity same(tg);
  const Grid g(2, M_PI / 10, 0.0, 2 * M_PI);
  const ErrorReport r = error_report(same, tg, g, &same);
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(r.erru[k], 0.0);
    EXPECT_EQ(r.errgu[k], 0.0);
    EXPECT_LT(r.errdivu[k], 1e-14);
    EXPECT_EQ(r.e[k], 0.0);
  }
  ASSERT_TRUE(r.errp.has_value());
  EXPECT_EQ(*r.errp, 0.0);
}

TEST(Metrics, ScaledEstimate) {
  const ExactFlow abc = abc_flow(0.01, 0.5, 0.5, 0.5, 0.7);
  const ExactVelocity scaled(abc, 1.1);
  const Grid g(3, M_PI / 5, 0.0, 2 * M_PI);
  const ErrorReport r = error_report(scaled, abc, g, &scaled);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(r.erru[k], 0.1, 1e-12);
    EXPECT_NEAR(r.errgu[k], 0.1, 1e-12);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += r.e_i[k][i];
    EXPECT_LE(r.e[k], sum + 1e-15);
  }
  EXPECT_NEAR(*r.errp, 0.1, 1e-12);
}

TEST(Metrics, PressureErrorIsShiftInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector p(50), q(50);
  for (int i = 0; i < 50; ++i) p(i) = n(rng), q(i) = p(i) + 0.1 * n(rng);
  const double base = pressure_error(p, q);
  EXPECT_EQ(pressure_error(p, (q.array() + 3.0).matrix()), base);
  EXPECT_NEAR(pressure_error((p.array() - 7.0).matrix(), q), base, 1e-14);
  const ExactFlow tg = taylor_green(1.0, 0.25);
  const Grid g(2, M_PI / 10, 0.0, 2 * M_PI);
  const ExactVelocity shifted(tg, 1.0, 12.5);
  EXPECT_LT(*error_report(ExactVelocity(tg), tg, g, &shifted).errp, 1e-14);
}

TEST(Metrics, CsvLayout) {
  const ExactFlow tg = taylor_green(1.0, 0.25);
  const ExactVelocity v(tg, 0.9);
  const Grid g(2, M_PI / 4, 0.0, 2 * M_PI);
  const ErrorReport r = error_report(v, tg, g, &v);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("metric,k,value\n", 0), 0u);
  for (int k = 0; k < 10; ++k) EXPECT_NE(csv.find("erru," + std::to_string(k) + ","), std::string::npos);
  EXPECT_NE(csv.find("errp,10,"), std::string::npos);
  EXPECT_EQ(r.to_json()["erru"].size(), 10u);
  const std::string slice = slice_csv(v, tg, g, 0.1, 1, 0, 0.5);
  EXPECT_EQ(slice.rfind("x,exact,estimated\n", 0), 0u);
  EXPECT_EQ(std::count(slice.begin(), slice.end(), '\n'), 1 + static_cast<long>(g.axis().size()));
  const std::string field = field_csv(v, g, 0.0);
  EXPECT_EQ(field.rfind("x1,x2,v1,v2\n", 0), 0u);
}

TEST(Metrics, NetworkVelocityMatchesNetwork) {
  std::mt19937_64 rng(2);
  const Network net = Network::random({3, 2, 8, 2}, rng);
  const NetworkVelocity v(net);
  Matrix X(2, 3);
  X << 0.1, 0.2, 0.3, 1.0, 2.0, 3.0;
  const Matrix out = v.velocity(0.05, X);
  const std::vector<double> in{0.05, 0.2, 2.0};
  EXPECT_NEAR(out(1, 1), net.forward(in)(1), 1e-14);
  const Matrix G = v.gradient(0.05, X, 1);
  EXPECT_NEAR(G(0, 1), net.input_gradient(in)(1, 1), 1e-14);
  EXPECT_THROW(NetworkVelocity(Network({2, 2, 4, 1})), std::invalid_argument);
}
