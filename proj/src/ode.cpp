#include "pnode/ode.hpp"

#include <algorithm>
#include <cmath>

#include "pnode/ops.hpp"

namespace pnode {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
std::string to_string(OdeScheme s) { return s == OdeScheme::rk4 ? "rk4" : "euler"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation '" + s + "' (expected relu or tanh)");
}

OdeScheme parse_scheme(const std::string& s) {
  if (s == "rk4") return OdeScheme::rk4;
  if (s == "euler") return OdeScheme::euler;
  throw ValidationError("unknown ODE scheme '" + s + "' (expected rk4 or euler)");
}

DynamicsNet DynamicsNet::random(std::size_t channels, std::size_t hidden, Activation activation, Rng& rng,
                                double final_gain) {
  DynamicsNet net;
  net.activation = activation;
  net.layers[0] = {he_normal_kernel(hidden, channels + 1, 3, rng), Tensor::zeros({hidden})};
  net.layers[1] = {he_normal_kernel(hidden, hidden, 3, rng), Tensor::zeros({hidden})};
  net.layers[2] = {he_normal_kernel(channels, hidden, 3, rng, final_gain), Tensor::zeros({channels})};
  return net;
}

DynamicsNet DynamicsNet::zero(std::size_t channels, std::size_t hidden, Activation activation) {
  DynamicsNet net;
  net.activation = activation;
  net.layers[0] = {Tensor::zeros({hidden, channels + 1, 3, 3}), Tensor::zeros({hidden})};
  net.layers[1] = {Tensor::zeros({hidden, hidden, 3, 3}), Tensor::zeros({hidden})};
  net.layers[2] = {Tensor::zeros({channels, hidden, 3, 3}), Tensor::zeros({channels})};
  return net;
}

void DynamicsNet::validate() const {
  for (const auto& layer : layers) {
    if (layer.kernel.rank() != 4 || layer.bias.rank() != 1 || layer.bias.dim(0) != layer.out_channels()) {
      throw ShapeError("DynamicsNet: malformed layer " + shape_string(layer.kernel.shape()));
    }
  }
  if (layers[1].in_channels() != layers[0].out_channels() ||
      layers[2].in_channels() != layers[1].out_channels()) {
    throw ShapeError("DynamicsNet: consecutive layer channel counts disagree");
  }
  if (layers[0].in_channels() != layers[2].out_channels() + 1) {
    throw ShapeError("DynamicsNet: first layer must take state channels + 1 time channel (" +
                     std::to_string(layers[2].out_channels() + 1) + "), has " +
                     std::to_string(layers[0].in_channels()));
  }
}

Tensor DynamicsNet::operator()(const Tensor& state, double t) const {
  if (state.rank() != 4 || state.dim(1) != channels()) {
    throw ShapeError("DynamicsNet: state " + shape_string(state.shape()) + " does not have " +
                     std::to_string(channels()) + " channels");
  }
  const Tensor time = Tensor::full({state.dim(0), 1, state.dim(2), state.dim(3)}, t);
  Tensor x = concat({state, time}, 1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = conv2d(x, layers[i].kernel, layers[i].bias, layers[i].padding());
    if (i + 1 < layers.size()) x = activation == Activation::relu ? relu(x) : pnode::tanh(x);
  }
  return x;
}

void OdeConfig::validate() const {
  if (!(terminal_time > 0.0) || !std::isfinite(terminal_time)) {
    throw ValidationError("OdeConfig: terminal_time must be > 0");
  }
  if (n_steps < 1) throw ValidationError("OdeConfig: n_steps must be >= 1");
}

namespace {

// Runs the solver; when `stages` is non-null, every state at which h is
// evaluated is appended together with its time.
Tensor integrate(const Tensor& state0, const DynamicsNet& dyn, const OdeConfig& cfg,
                 std::vector<std::pair<Tensor, double>>* stages) {
  cfg.validate();
  if (state0.rank() != 4 || state0.dim(1) != dyn.channels()) {
    throw ShapeError("ode_forward: state " + shape_string(state0.shape()) + " has " +
                     (state0.rank() == 4 ? std::to_string(state0.dim(1)) : std::string("?")) +
                     " channels, dynamics expects " + std::to_string(dyn.channels()));
  }
  const double dt = cfg.terminal_time / static_cast<double>(cfg.n_steps);
  auto eval = [&](const Tensor& z, double t) {
    if (stages) stages->emplace_back(z.detach(), t);
    return dyn(z, t);
  };
  Tensor z = state0;
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    if (cfg.scheme == OdeScheme::euler) {
      z = axpy(z, dt, eval(z, t));
      continue;
    }
    const Tensor k1 = eval(z, t);
    const Tensor k2 = eval(axpy(z, 0.5 * dt, k1), t + 0.5 * dt);
    const Tensor k3 = eval(axpy(z, 0.5 * dt, k2), t + 0.5 * dt);
    const Tensor k4 = eval(axpy(z, dt, k3), t + dt);
    const Tensor incr = add(add(k1, k4), scale(add(k2, k3), 2.0));
    z = axpy(z, dt / 6.0, incr);
  }
  if (stages) stages->emplace_back(z.detach(), cfg.terminal_time);
  return z;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Tensor ode_forward(const Tensor& state0, const DynamicsNet& dyn, const OdeConfig& cfg) {
  return integrate(state0, dyn, cfg, nullptr);
}

double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("l2_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double Divergence::gronwall_bound(double terminal_time) const {
  return input_dist * std::exp(lipschitz_est * terminal_time);
}

double estimate_lipschitz(const Tensor& state_a, const Tensor& state_b, const DynamicsNet& dyn,
                          const OdeConfig& cfg, std::size_t n_pairs, std::uint64_t seed) {
  if (state_a.shape() != state_b.shape()) throw ShapeError("estimate_lipschitz: shape mismatch");
  std::vector<std::pair<Tensor, double>> stages_a, stages_b;
  integrate(state_a.detach(), dyn, cfg, &stages_a);
  integrate(state_b.detach(), dyn, cfg, &stages_b);

  double best = 0.0;
  std::size_t used = 0;
  auto ratio = [&](const Tensor& u, const Tensor& v, double t) {
    const double denom = l2_distance(u, v);
    if (denom == 0.0) return;
    const double num = l2_distance(dyn(u, t), dyn(v, t));
    best = std::max(best, num / denom);
    ++used;
  };

  for (std::size_t i = 0; i < stages_a.size() && used < n_pairs; ++i) {
    ratio(stages_a[i].first, stages_b[i].first, stages_a[i].second);
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, 2 * stages_a.size() - 1);
  const double sep = l2_distance(state_a, state_b);
  std::size_t attempts = 0;
  while (used < n_pairs && attempts++ < 4 * n_pairs) {
    const std::size_t k = pick(rng);
    const auto& [base, t] = k < stages_a.size() ? stages_a[k] : stages_b[k - stages_a.size()];
    std::vector<double> dir(base.numel());
    for (auto& v : dir) v = normal(rng);
    const double len = sep > 0.0 ? sep : 1e-3 * std::max(norm2(base.data()), 1.0);
    const double n = norm2(dir);
    std::vector<double> moved = base.to_vector();
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += len * dir[i] / n;
    ratio(base, Tensor(base.shape(), std::move(moved)), t);
  }
  return best;
}

Divergence trajectory_divergence(const Tensor& state_a, const Tensor& state_b, const DynamicsNet& dyn,
                                 const OdeConfig& cfg, std::size_t n_pairs, std::uint64_t seed) {
  if (state_a.shape() != state_b.shape()) {
    throw ShapeError("trajectory_divergence: shapes differ " + shape_string(state_a.shape()) + " vs " +
                     shape_string(state_b.shape()));
  }
  Divergence out;
  out.input_dist = l2_distance(state_a, state_b);
  if (out.input_dist == 0.0) {
    out.output_dist = 0.0;
  } else {
    out.output_dist = l2_distance(ode_forward(state_a.detach(), dyn, cfg), ode_forward(state_b.detach(), dyn, cfg));
  }
  out.lipschitz_est = estimate_lipschitz(state_a, state_b, dyn, cfg, n_pairs, seed);
  return out;
}

}  // namespace pnode
