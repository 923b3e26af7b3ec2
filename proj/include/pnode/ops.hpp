#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pnode/tensor.hpp"

// Differentiable primitives. Every function records itself on the tape of its
// recorded inputs (if any) and otherwise evaluates eagerly without a record.

namespace pnode {

/// While alive on the current thread, ops with piecewise definitions (relu,
/// the BCE clamp, the cosine denominator guard) fold the branch taken by each
/// element into a fingerprint. Equal fingerprints for two evaluations mean the
/// same smooth piece was used.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  static BranchRecorder* active();
  void note(bool branch) { hash_ = (hash_ ^ (branch ? 0x9eu : 0x3bu)) * 0x100000001b3ull; }
  std::uint64_t fingerprint() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
  BranchRecorder* previous_ = nullptr;
};

/// Cross-correlation of input [N,C,H,W] with kernel [F,C,kh,kw] plus bias [F],
/// stride 1, symmetric zero padding. Kernel extents must be odd.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding);

/// Bilinear interpolation of [N,C,H,W] to [N,C,out_h,out_w] with the
/// half-pixel (align_corners = false) sampling convention.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& input);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// a + factor * b, one node.
Tensor axpy(const Tensor& a, double factor, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Cosine similarity of every row of a [..., d] with b [d]; the denominator is
/// clamped below by eps_guard.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps_guard = 1e-8);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& logits, std::size_t axis);

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross entropy. `pred` is clamped to [1e-7, 1 - 1e-7]; every
/// target value must be exactly 0 or 1.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

/// For features [K,d,H,W] and constant weights [K,H,W], returns the [d] vector
/// sum_k sum_xy weights[k,x,y] * features[k,:,x,y].
Tensor spatial_weighted_sum(const Tensor& features, const Tensor& weights);

}  // namespace pnode
