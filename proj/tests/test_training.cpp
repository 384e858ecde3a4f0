#include <gtest/gtest.h>

#include <filesystem>

#include "branchpde/training.hpp"

using namespace branchpde;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.points = 40;
  c.inner_samples = 20;
  c.epochs = 30;
  c.width = 12;
  c.layers = 2;
  c.lr_drop_epochs = {10, 20};
  return c;
}

}  // namespace

TEST(Training, ConfigValidation) {
  TrainConfig c = small_config();
  c.points = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.inner_samples = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.x_max = c.x_min;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  c = small_config();
  c.points = 0;
  EXPECT_THROW(build_training_set(m, c, {}), std::invalid_argument);
}

TEST(Training, LearningRateTrace) {
  const TrainConfig c = small_config();
  Matrix X = Matrix::Random(1, 8), Y = Matrix::Constant(1, 8, 0.7);
  const TrainResult r = fit_network(X, Y, c);
  ASSERT_EQ(r.trajectory.size(), 31u);
  EXPECT_DOUBLE_EQ(r.trajectory[0].lr, 0.01);
  EXPECT_DOUBLE_EQ(r.trajectory[9].lr, 0.01);
  EXPECT_DOUBLE_EQ(r.trajectory[10].lr, 0.001);
  EXPECT_DOUBLE_EQ(r.trajectory[20].lr, 0.0001);
  EXPECT_EQ(r.trajectory.back().epoch, 30);
}

TEST(Training, FitsConstantTargets) {
  TrainConfig c = small_config();
  c.epochs = 300;
  c.lr_drop_epochs = {1000, 2000};
  Matrix X = Matrix::Random(2, 64);
  const Matrix Y = Matrix::Constant(1, 64, 0.7);
  const TrainResult r = fit_network(X, Y, c);
  EXPECT_LT(r.trajectory.back().loss, 1e-4);
  EXPECT_LT(r.trajectory.back().loss, r.trajectory.front().loss);
  const std::vector<double> x{0.1, -0.3};
  EXPECT_NEAR(r.net.forward(x)(0), 0.7, 2e-2);
}

TEST(Training, TrainingSetMatchesSemilinearSolution) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  TrainConfig c = small_config();
  c.inner_samples = 400;
  const TrainingSet set = build_training_set(m, c, {});
  ASSERT_EQ(set.inputs.rows(), 2);
  ASSERT_EQ(set.size(), 40u);
  int within = 0;
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j) {
    const double t = set.inputs(0, j), x = set.inputs(1, j);
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 0.5);
    const double se = std::sqrt(set.variances(0, j) / 400.0);
    within += std::abs(set.targets(0, j) - std::cos(x)) <= 4 * se + 1e-12;  // a = nu
  }
  EXPECT_GE(within, 38);
}

TEST(Training, Deterministic) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  TrainConfig c = small_config();
  const TrainingSet a = build_training_set(m, c, {});
  c.workers = 3;
  const TrainingSet b = build_training_set(m, c, {});
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.inputs, b.inputs);
  const TrainResult ra = train_deep_branching(a, c), rb = train_deep_branching(a, c);
  EXPECT_EQ(ra.net.parameters(), rb.net.parameters());
  c.seed = 1;
  EXPECT_NE(build_training_set(m, c, {}).targets, a.targets);
}

TEST(Training, TrainingSetRoundTrip) {
  const PDESystem m = semilinear_linear_model(0.5, 0.5);
  const TrainingSet a = build_training_set(m, small_config(), {});
  const std::string path = (std::filesystem::temp_directory_path() / "branchpde_set.bin").string();
  a.save(path);
  const TrainingSet b = TrainingSet::load(path);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.variances, b.variances);
  std::filesystem::remove(path);
}

TEST(Training, VarianceFilter) {
  TrainingSet s;
  s.inputs = Matrix::Zero(1, 5);
  s.targets = Matrix::Zero(2, 5);
  s.variances.resize(2, 5);
  s.variances << 1, 1, 1, 500, 1,  //
      1, 2, 1, 1, 1e4;
  s.inputs << 0, 1, 2, 3, 4;
  TrainingSet copy = s;
  EXPECT_EQ(drop_high_variance(copy, 0.0), 0u);
  EXPECT_EQ(copy.size(), 5u);
  EXPECT_EQ(drop_high_variance(s, 100.0), 2u);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.inputs(0, 2), 2.0);
}

TEST(Training, NonFiniteTargetsRejected) {
  Matrix X = Matrix::Random(1, 4), Y = Matrix::Zero(1, 4);
  Y(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fit_network(X, Y, small_config()), NumericalFailure);
}

TEST(Training, PressureNetworkDerivatives) {
  std::mt19937_64 rng(3);
  const Network net = Network::random({2, 1, 8, 2}, rng);
  const PressureNetwork p(net);
  const std::vector<double> x{0.2, 0.4};
  const SecondOrderJet jet = net.second_order(x);
  EXPECT_EQ(p.derivative(MultiIndex{0, 0}, x), net.forward(x)(0));
  EXPECT_EQ(p.derivative(MultiIndex{0, 1}, x), jet.gradient(0, 1));
  EXPECT_EQ(p.derivative(MultiIndex{1, 1}, x), jet.hessian[0](0, 1));
  EXPECT_THROW(p.derivative(MultiIndex{2, 1}, x), OracleError);
  const PressureNetwork other(Network::random({2, 1, 8, 2}, rng));
  EXPECT_NE(other.derivative(MultiIndex{0, 1}, x), p.derivative(MultiIndex{0, 1}, x));
}

TEST(Training, Phi0SetSamplesWidenedBox) {
  const ExactFlow tg = taylor_green(1.0, 0.25);
  const PDESystem m = navier_stokes_model(2, 1.0, 0.25, tg.terminal());
  TrainConfig c = small_config();
  c.points = 20;
  c.inner_samples = 500;
  const TrainingSet set = build_phi0_set(m, c, {});
  EXPECT_EQ(set.inputs.rows(), 2);
  const auto [lo, hi] = phi0_box(c.x_min, c.x_max);
  EXPECT_DOUBLE_EQ(lo, -M_PI);
  EXPECT_DOUBLE_EQ(hi, 3 * M_PI);
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j) {
    EXPECT_GE(set.inputs(0, j), lo);
    EXPECT_LE(set.inputs(1, j), hi);
    EXPECT_TRUE(std::isfinite(set.targets(0, j)));
  }
}
