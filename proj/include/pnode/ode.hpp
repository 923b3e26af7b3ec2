#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "pnode/random.hpp"
#include "pnode/tensor.hpp"

namespace pnode {

enum class Activation { relu, tanh };
enum class OdeScheme { rk4, euler };

std::string to_string(Activation a);
std::string to_string(OdeScheme s);
Activation parse_activation(const std::string& s);
OdeScheme parse_scheme(const std::string& s);

struct ConvLayer {
  Tensor kernel;  // [out, in, k, k]
  Tensor bias;    // [out]

  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t padding() const { return kernel.dim(2) / 2; }
};

/// The learned vector field h(z, t): three same-padding conv layers with an
/// activation between them. Time enters as one extra constant input channel,
/// so the first layer takes channels + 1 inputs and the last produces
/// `channels` outputs.
struct DynamicsNet {
  std::array<ConvLayer, 3> layers;
  Activation activation = Activation::tanh;

  /// He-normal weights, zero biases; the last layer is scaled by `final_gain`.
  static DynamicsNet random(std::size_t channels, std::size_t hidden, Activation activation, Rng& rng,
                            double final_gain = 0.1);
  /// All weights and biases zero, so h == 0 everywhere.
  static DynamicsNet zero(std::size_t channels, std::size_t hidden, Activation activation = Activation::tanh);

  std::size_t channels() const { return layers[2].out_channels(); }
  void validate() const;

  /// h(state, t) for state [N, channels, H, W].
  Tensor operator()(const Tensor& state, double t) const;
};

struct OdeConfig {
  double terminal_time = 1.0;
  std::size_t n_steps = 4;
  OdeScheme scheme = OdeScheme::rk4;

  void validate() const;
};

/// Z(T) from Z(0) by n_steps uniform steps of the configured scheme. Every
/// stage is recorded on the tape of the inputs, so gradients flow back
/// through the discretization.
Tensor ode_forward(const Tensor& state0, const DynamicsNet& dyn, const OdeConfig& cfg);

struct Divergence {
  double input_dist = 0.0;
  double output_dist = 0.0;
  double lipschitz_est = 0.0;

  /// input_dist * exp(lipschitz_est * T)
  double gronwall_bound(double terminal_time) const;
};

/// Largest observed ||h(a,t) - h(b,t)|| / ||a - b|| over sampled pairs. The
/// sample contains the paired solver states of the two trajectories plus
/// random perturbations around them, `n_pairs` ratios in total.
double estimate_lipschitz(const Tensor& state_a, const Tensor& state_b, const DynamicsNet& dyn,
                          const OdeConfig& cfg, std::size_t n_pairs, std::uint64_t seed);

Divergence trajectory_divergence(const Tensor& state_a, const Tensor& state_b, const DynamicsNet& dyn,
                                 const OdeConfig& cfg, std::size_t n_pairs = 256,
                                 std::uint64_t seed = 17);

double l2_distance(const Tensor& a, const Tensor& b);

}  // namespace pnode
