#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pnode/gradcheck.hpp"
#include "pnode/ode.hpp"
#include "pnode/ops.hpp"

using namespace pnode;

namespace {

Tensor random_state(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

using oracle::decay_error;
using oracle::negation_net;

}  // namespace

TEST(Dynamics, NegationNetIsExact) {
  const Tensor z = random_state({1, 2, 4, 4}, 1);
  const Tensor h = negation_net(2)(z, 0.3);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(h[i], -z[i]);
}

TEST(OdeForward, ZeroDynamicsIsIdentity) {
  const Tensor z0 = random_state({2, 3, 5, 5}, 2);
  for (OdeScheme s : {OdeScheme::rk4, OdeScheme::euler}) {
    const Tensor z = ode_forward(z0, DynamicsNet::zero(3, 4), OdeConfig{1.0, 7, s});
    EXPECT_TRUE(z.identical(z0));
  }
}

TEST(OdeForward, Rk4ConvergenceOrder) {
  const double e4 = decay_error(4, OdeScheme::rk4);
  const double e8 = decay_error(8, OdeScheme::rk4);
  const double e16 = decay_error(16, OdeScheme::rk4);
  EXPECT_GE(std::log2(e4 / e8), 3.5);
  EXPECT_GE(std::log2(e8 / e16), 3.5);
  // Halving the step cuts the error by ~16; Richardson factor at least 12.
  EXPECT_GE(e4 / e8, 12.0);
}

TEST(OdeForward, EulerConvergenceOrder) {
  const double e8 = decay_error(8, OdeScheme::euler);
  const double e16 = decay_error(16, OdeScheme::euler);
  EXPECT_GE(std::log2(e8 / e16), 0.9);
}

TEST(OdeForward, Rk4SingleStepMatchesTaylorPolynomial) {
  // For dz/dt = -z one RK4 step multiplies by 1 - h + h^2/2 - h^3/6 + h^4/24.
  const Tensor z0 = random_state({1, 1, 2, 2}, 3);
  const double h = 0.5;
  const Tensor z = ode_forward(z0, negation_net(1), OdeConfig{h, 1, OdeScheme::rk4});
  const double factor = 1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24;
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(z[i], factor * z0[i], 1e-15);
}

TEST(OdeConfig, Validation) {
  EXPECT_THROW((OdeConfig{1.0, 0, OdeScheme::rk4}.validate()), ValidationError);
  EXPECT_THROW((OdeConfig{0.0, 4, OdeScheme::rk4}.validate()), ValidationError);
  EXPECT_EQ(parse_scheme("euler"), OdeScheme::euler);
  EXPECT_THROW(parse_scheme("midpoint"), ValidationError);
}

TEST(OdeForward, GradientsThroughSolver) {
  Rng rng(9);
  const DynamicsNet dyn = DynamicsNet::random(2, 3, Activation::tanh, rng, 1.0);
  const Tensor z0 = random_state({1, 2, 4, 4}, 4);
  const Tensor w = random_state({1, 2, 4, 4}, 6);
  const OdeConfig cfg{1.0, 3, OdeScheme::rk4};
  auto loss = [&](const Tensor& z) { return sum(mul(z, w)); };
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return loss(ode_forward(x, dyn, cfg)); }, z0, 32).max_rel_error,
            1e-6);
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const auto f = [&](const Tensor& k) {
      DynamicsNet d = dyn;
      d.layers[layer].kernel = k;
      return loss(ode_forward(z0, d, cfg));
    };
    EXPECT_LT(finite_diff_check(f, dyn.layers[layer].kernel, 32).max_rel_error, 1e-6) << "layer " << layer;
  }
}

TEST(Divergence, GronwallBoundHolds) {
  Rng rng(11);
  const DynamicsNet dyn = DynamicsNet::random(2, 4, Activation::tanh, rng, 1.0);
  const OdeConfig cfg{1.0, 4, OdeScheme::rk4};
  for (std::uint64_t s = 0; s < 16; ++s) {
    const Tensor a = random_state({1, 2, 4, 4}, 100 + s);
    const Tensor b = add(a, random_state({1, 2, 4, 4}, 200 + s, 0.1));
    const Divergence d = trajectory_divergence(a, b, dyn, cfg, 64, s);
    EXPECT_GT(d.lipschitz_est, 0.0);
    EXPECT_LE(d.output_dist, 1.05 * d.gronwall_bound(cfg.terminal_time));
  }
}

TEST(Divergence, IdenticalStatesHaveZeroOutputDistance) {
  Rng rng(12);
  const DynamicsNet dyn = DynamicsNet::random(2, 4, Activation::tanh, rng);
  const Tensor a = random_state({1, 2, 4, 4}, 13);
  const Divergence d = trajectory_divergence(a, a, dyn, OdeConfig{});
  EXPECT_EQ(d.input_dist, 0.0);
  EXPECT_EQ(d.output_dist, 0.0);
  EXPECT_EQ(d.gronwall_bound(1.0), 0.0);
}

TEST(Divergence, NegationFlowContracts) {
  const Tensor a = random_state({1, 1, 3, 3}, 14);
  const Tensor b = random_state({1, 1, 3, 3}, 15);
  const Divergence d = trajectory_divergence(a, b, negation_net(1), OdeConfig{1.0, 8, OdeScheme::rk4});
  EXPECT_NEAR(d.lipschitz_est, 1.0, 1e-12);
  EXPECT_NEAR(d.output_dist, d.input_dist * std::exp(-1.0), 1e-5 * d.input_dist);
}
