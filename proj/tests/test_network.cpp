#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "branchpde/network.hpp"
#include "branchpde/selftest.hpp"

using namespace branchpde;

namespace {

Network random_net(NetworkShape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Network net = Network::random(shape, rng);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (int k = 0; k <= shape.layers; ++k) {
    for (Eigen::Index r = 0; r < net.gamma(k).size(); ++r) {
      net.gamma(k)(r) = u(rng);
      net.beta(k)(r) = u(rng) - 1.0;
      net.running_mean(k)(r) = u(rng) - 1.0;
      net.running_var(k)(r) = u(rng);
    }
  }
  return net;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Network, ParameterCount) {
  const NetworkShape s{3, 2, 100, 3};
  EXPECT_EQ(s.theta_count(), 20802u);
  EXPECT_EQ(Network(s).parameter_count(), 20802u);
  EXPECT_EQ(Network(s).parameters().size(), static_cast<Eigen::Index>(20802 + s.norm_count()));
  EXPECT_EQ((NetworkShape{2, 1, 10, 1}).theta_count(), 41u);
  EXPECT_THROW(Network(NetworkShape{0, 1, 10, 1}), std::invalid_argument);
}

TEST(Network, ZeroWeightsGiveZeroOutput) {
  const Network net(NetworkShape{3, 2, 16, 3});
  const std::vector<double> x{0.1, 2.0, -1.0};
  EXPECT_EQ(net.forward(x).norm(), 0.0);
}

TEST(Network, InputGradientMatchesFiniteDifferences) {
  EXPECT_LT(gradient_check_error(100, 17), 1e-4);
}

TEST(Network, SecondOrderJetMatchesGradients) {
  const Network net = random_net({2, 1, 12, 3}, 5);
  const std::vector<double> x{0.3, -0.8};
  const SecondOrderJet jet = net.second_order(x);
  EXPECT_NEAR(jet.value(0), net.forward(x)(0), 1e-13);
  const Matrix J = net.input_gradient(x);
  EXPECT_NEAR(jet.gradient(0, 0), J(0, 0), 1e-12);
  EXPECT_NEAR(jet.gradient(0, 1), J(0, 1), 1e-12);
  const double h = 1e-5;
  for (int a = 0; a < 2; ++a) {
    auto xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    const Matrix Jp = net.input_gradient(xp), Jm = net.input_gradient(xm);
    for (int b = 0; b < 2; ++b) EXPECT_NEAR(jet.hessian[0](a, b), (Jp(0, b) - Jm(0, b)) / (2 * h), 1e-7);
  }
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  Network net = random_net({2, 2, 6, 2}, 9);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix X(2, 7), Y(2, 7);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng), Y.data()[i] = n(rng);
  auto loss = [&](Network m) {
    Network::TrainCache c;
    return 0.5 * (m.forward_train(X, c) - Y).squaredNorm();
  };
  Network::TrainCache cache;
  Network work = net;
  const Matrix out = work.forward_train(X, cache);
  const Vector grad = work.backward(cache, out - Y);
  const double h = 1e-6;
  for (Eigen::Index p = 0; p < net.parameters().size(); p += 3) {
    Network a = net, b = net;
    a.parameters()(p) += h;
    b.parameters()(p) -= h;
    const double fd = (loss(a) - loss(b)) / (2 * h);
    EXPECT_NEAR(grad(p), fd, 1e-6 * (1 + std::abs(fd))) << p;
  }
}

TEST(Network, TrainingForwardUpdatesRunningStatistics) {
  Network net = random_net({1, 1, 4, 1}, 2);
  net.running_mean(0).setZero();
  net.running_var(0).setOnes();
  Matrix X(1, 4);
  X << 1.0, 2.0, 3.0, 4.0;
  Network::TrainCache c;
  net.forward_train(X, c);
  EXPECT_NEAR(net.running_mean(0)(0), 0.1 * 2.5, 1e-15);
  EXPECT_NEAR(net.running_var(0)(0), 0.9 + 0.1 * (5.0 / 3.0), 1e-15);
}

TEST(Network, CheckpointRoundTrip) {
  const Network net = random_net({3, 2, 20, 3}, 4);
  const std::string path = temp_path("branchpde_net_roundtrip.ckpt");
  net.save(path);
  const Network back = Network::load(path);
  EXPECT_EQ(back.shape(), net.shape());
  EXPECT_EQ(back.parameters(), net.parameters());
  for (int k = 0; k <= 3; ++k) {
    EXPECT_EQ(back.running_mean(k), net.running_mean(k));
    EXPECT_EQ(back.running_var(k), net.running_var(k));
  }
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_EQ(back.forward(x), net.forward(x));
  std::filesystem::remove(path);
}

TEST(Network, LoadRejectsGarbage) {
  const std::string path = temp_path("branchpde_net_garbage.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_THROW(Network::load(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(Network::load(path), std::runtime_error);
}

TEST(Network, RejectsWrongInputSize) {
  const Network net(NetworkShape{3, 2, 4, 1});
  const std::vector<double> x{0.1, 0.2};
  EXPECT_THROW(net.forward(x), std::invalid_argument);
}
