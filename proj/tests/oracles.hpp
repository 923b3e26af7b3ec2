#pragma once

// Brute-force reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "pnode/episodes.hpp"
#include "pnode/ode.hpp"
#include "pnode/protoseg.hpp"
#include "pnode/random.hpp"
#include "pnode/tensor.hpp"

namespace oracle {

using pnode::LabelMap;
using pnode::Tensor;

inline Tensor random_tensor(pnode::Shape shape, pnode::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(pnode::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline LabelMap random_mask(std::size_t h, std::size_t w, int max_label, pnode::Rng& rng) {
  std::uniform_int_distribution<int> pick(0, max_label);
  LabelMap m(h, w);
  for (auto& l : m.labels) l = pick(rng);
  return m;
}

// features [K, d, H, W]
inline double feature(const Tensor& f, std::size_t k, std::size_t c, std::size_t y, std::size_t x) {
  return f[((k * f.dim(1) + c) * f.dim(2) + y) * f.dim(3) + x];
}

// Per shot: mean feature over the class pixels. Then mean over shots that contain the class.
inline std::vector<double> masked_average(const Tensor& f, const std::vector<LabelMap>& masks, int cls) {
  const std::size_t d = f.dim(1), H = f.dim(2), W = f.dim(3);
  std::vector<long double> acc(d, 0.0L);
  std::size_t shots = 0;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    std::vector<long double> shot(d, 0.0L);
    std::size_t n = 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (masks[k].at(y, x) != cls) continue;
        ++n;
        for (std::size_t c = 0; c < d; ++c) shot[c] += feature(f, k, c, y, x);
      }
    if (n == 0) continue;
    ++shots;
    for (std::size_t c = 0; c < d; ++c) acc[c] += shot[c] / static_cast<long double>(n);
  }
  std::vector<double> out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<double>(acc[c] / static_cast<long double>(shots));
  return out;
}

// Mean over every pixel of every shot whose label is not in `foreground`.
inline std::vector<double> background_average(const Tensor& f, const std::vector<LabelMap>& masks,
                                              const std::vector<int>& foreground) {
  const std::size_t d = f.dim(1), H = f.dim(2), W = f.dim(3);
  std::vector<long double> acc(d, 0.0L);
  std::size_t n = 0;
  for (std::size_t k = 0; k < masks.size(); ++k)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (std::find(foreground.begin(), foreground.end(), masks[k].at(y, x)) != foreground.end()) continue;
        ++n;
        for (std::size_t c = 0; c < d; ++c) acc[c] += feature(f, k, c, y, x);
      }
  std::vector<double> out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<double>(acc[c] / static_cast<long double>(n));
  return out;
}

// Per pixel: softmax over classes of scale * cos(feature, prototype). Output [n, h, w].
inline std::vector<double> cosine_softmax(const Tensor& q, const std::vector<std::vector<double>>& protos,
                                          double scale, double eps_guard = 1e-8) {
  const std::size_t d = q.dim(1), h = q.dim(2), w = q.dim(3), n = protos.size();
  std::vector<double> out(n * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::vector<long double> logits(n);
      long double qn = 0.0L;
      for (std::size_t c = 0; c < d; ++c) qn += std::pow(static_cast<long double>(feature(q, 0, c, y, x)), 2);
      for (std::size_t j = 0; j < n; ++j) {
        long double dot = 0.0L, pn = 0.0L;
        for (std::size_t c = 0; c < d; ++c) {
          dot += static_cast<long double>(feature(q, 0, c, y, x)) * protos[j][c];
          pn += static_cast<long double>(protos[j][c]) * protos[j][c];
        }
        logits[j] = scale * dot / std::max(std::sqrt(qn) * std::sqrt(pn), static_cast<long double>(eps_guard));
      }
      const long double m = *std::max_element(logits.begin(), logits.end());
      long double z = 0.0L;
      for (auto l : logits) z += std::exp(l - m);
      for (std::size_t j = 0; j < n; ++j)
        out[(j * h + y) * w + x] = static_cast<double>(std::exp(logits[j] - m) / z);
    }
  return out;
}

inline Tensor center_tap(std::size_t out, std::size_t in,
                         const std::vector<std::tuple<std::size_t, std::size_t, double>>& taps) {
  std::vector<double> k(out * in * 9, 0.0);
  for (auto [o, i, w] : taps) k[((o * in + i) * 3 + 1) * 3 + 1] = w;
  return Tensor({out, in, 3, 3}, std::move(k));
}

// relu network with h(z) = -relu(z) + relu(-z) = -z, exact in floating point.
inline pnode::DynamicsNet negation_net(std::size_t c) {
  pnode::DynamicsNet net = pnode::DynamicsNet::zero(c, 2 * c, pnode::Activation::relu);
  std::vector<std::tuple<std::size_t, std::size_t, double>> l0, l1, l2;
  for (std::size_t i = 0; i < c; ++i) {
    l0.emplace_back(i, i, 1.0);
    l0.emplace_back(c + i, i, -1.0);
    l1.emplace_back(i, i, 1.0);
    l1.emplace_back(c + i, c + i, 1.0);
    l2.emplace_back(i, i, -1.0);
    l2.emplace_back(i, c + i, 1.0);
  }
  net.layers[0].kernel = center_tap(2 * c, c + 1, l0);
  net.layers[1].kernel = center_tap(2 * c, 2 * c, l1);
  net.layers[2].kernel = center_tap(c, 2 * c, l2);
  return net;
}

// Max error of the solver against z0 * e^{-1} for dz/dt = -z on [0, 1].
inline double decay_error(std::size_t steps, pnode::OdeScheme scheme, std::uint64_t seed = 5) {
  pnode::Rng rng(seed);
  const Tensor z0 = random_tensor({1, 2, 3, 3}, rng);
  const Tensor z = pnode::ode_forward(z0, negation_net(2), pnode::OdeConfig{1.0, steps, scheme});
  double err = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) err = std::max(err, std::abs(z[i] - z0[i] * std::exp(-1.0)));
  return err;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct OracleInstance {
  double map_error = 0.0;
  double background_error = 0.0;
  double softmax_error = 0.0;
};

// One random small instance of prototype pooling and query scoring.
inline OracleInstance check_random_instance(std::uint64_t seed) {
  pnode::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> shots(1, 3), dims(2, 6), side(3, 7);
  const std::size_t K = shots(rng), d = dims(rng), H = side(rng), W = side(rng);
  const Tensor feats = random_tensor({K, d, H, W}, rng);
  std::vector<LabelMap> masks;
  for (std::size_t k = 0; k < K; ++k) masks.push_back(random_mask(H, W, 2, rng));
  masks[0].labels[0] = 1;  // class 1 present in at least one shot
  masks[0].labels[1] = 0;  // and some background

  OracleInstance r;
  const auto p1 = pnode::masked_average_pool(feats, masks, 1);
  r.map_error = max_abs_diff(p1.vector.data(), masked_average(feats, masks, 1));
  const auto bg = pnode::background_prototype(feats, masks, {1});
  r.background_error = max_abs_diff(bg.vector.data(), background_average(feats, masks, {1}));

  pnode::SegModelConfig mc;
  mc.use_ode = false;
  const pnode::SegModel model = pnode::SegModel::create(mc, seed);
  const std::size_t n_classes = 1 + shots(rng);
  std::vector<pnode::Prototype> protos;
  std::vector<std::vector<double>> raw;
  for (std::size_t j = 0; j < n_classes; ++j) {
    protos.push_back({static_cast<int>(j), random_tensor({d}, rng)});
    raw.push_back(protos.back().vector.to_vector());
  }
  const Tensor q = random_tensor({1, d, H, W}, rng);
  const auto pred = pnode::predict_query(model, protos, q, {H, W});
  r.softmax_error = max_abs_diff(pred.prob_map.data(), cosine_softmax(q, raw, mc.cosine_scale));
  return r;
}

}  // namespace oracle
