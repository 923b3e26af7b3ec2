#include "pnode/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace pnode {
namespace {

using Buffer = std::shared_ptr<const std::vector<double>>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor finish(Tensor out, const char* op) {
  ensure_finite(out.data(), op);
  return out;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  Tensor result = finish(Tensor(x.shape(), std::move(out)), name);
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()},
                      [xn = x.node(), xb = x.buffer(), yb = result.buffer(), deriv](
                          Tape& t, std::span<const double> g) {
                        auto gx = t.gradient_buffer(xn);
                        const auto& xv = *xb;
                        const auto& yv = *yb;
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
                      });
}

void accumulate(Tape& t, NodeId node, std::span<const double> g, double factor = 1.0) {
  if (node == kNoNode) return;
  auto dst = t.gradient_buffer(node);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
  constexpr const char* op = "conv2d";
  require_rank(input, 4, op, "input");
  require_rank(kernel, 4, op, "kernel");
  require_rank(bias, 1, op, "bias");
  const std::size_t n_batch = input.dim(0), chans = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t filters = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != chans) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(chans));
  }
  if (bias.dim(0) != filters) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.dim(0)) + " entries for " +
                     std::to_string(filters) + " filters");
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel spatial extents must be odd, got " +
                     shape_string(kernel.shape()));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: padding " + std::to_string(padding) + " leaves no output for input " +
                     shape_string(input.shape()) + " and kernel " + shape_string(kernel.shape()));
  }
  const std::size_t ho = h + 2 * padding - kh + 1, wo = w + 2 * padding - kw + 1;
  const long pad = static_cast<long>(padding);

  // Valid output range for a kernel offset `k`: input index o + k - pad in [0, extent).
  struct Range {
    std::size_t lo, hi;
    long shift;
  };
  auto range = [pad](std::size_t k, std::size_t extent, std::size_t out_extent) {
    const long shift = static_cast<long>(k) - pad;
    const long lo = std::max<long>(0, -shift);
    const long hi = std::min<long>(static_cast<long>(out_extent), static_cast<long>(extent) - shift);
    return Range{static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi)), shift};
  };

  const auto in = input.data();
  const auto ker = kernel.data();
  const auto bs = bias.data();
  std::vector<double> out(n_batch * filters * ho * wo);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t f = 0; f < filters; ++f) {
      double* dst_plane = out.data() + (n * filters + f) * ho * wo;
      std::fill(dst_plane, dst_plane + ho * wo, bs[f]);
      for (std::size_t c = 0; c < chans; ++c) {
        const double* src_plane = in.data() + (n * chans + c) * h * w;
        for (std::size_t i = 0; i < kh; ++i) {
          const Range ry = range(i, h, ho);
          for (std::size_t j = 0; j < kw; ++j) {
            const Range rx = range(j, w, wo);
            const double wt = ker[((f * chans + c) * kh + i) * kw + j];
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              double* dst = dst_plane + y * wo;
              const double* src = src_plane + (static_cast<long>(y) + ry.shift) * static_cast<long>(w) + rx.shift;
              for (std::size_t x = rx.lo; x < rx.hi; ++x) dst[x] += wt * src[x];
            }
          }
        }
      }
    }
  }
  Tensor result = finish(Tensor({n_batch, filters, ho, wo}, std::move(out)), op);
  Tape* tape = common_tape({&input, &kernel, &bias});
  if (!tape) return result;

  return tape->record(
      result, {input.node(), kernel.node(), bias.node()},
      [=, in_node = input.node(), k_node = kernel.node(), b_node = bias.node(),
       ib = input.buffer(), kb = kernel.buffer()](Tape& t, std::span<const double> g) {
        const auto& iv = *ib;
        const auto& kv = *kb;
        if (b_node != kNoNode) {
          auto gb = t.gradient_buffer(b_node);
          for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t f = 0; f < filters; ++f) {
              const double* gp = g.data() + (n * filters + f) * ho * wo;
              double acc = 0.0;
              for (std::size_t p = 0; p < ho * wo; ++p) acc += gp[p];
              gb[f] += acc;
            }
        }
        if (k_node != kNoNode) {
          auto gk = t.gradient_buffer(k_node);
          std::vector<double> partial(wo);
          for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t f = 0; f < filters; ++f) {
              const double* gp = g.data() + (n * filters + f) * ho * wo;
              for (std::size_t c = 0; c < chans; ++c) {
                const double* src_plane = iv.data() + (n * chans + c) * h * w;
                for (std::size_t i = 0; i < kh; ++i) {
                  const Range ry = range(i, h, ho);
                  for (std::size_t j = 0; j < kw; ++j) {
                    const Range rx = range(j, w, wo);
                    // column partial sums keep the inner loop a plain vectorizable fma
                    std::fill(partial.begin(), partial.end(), 0.0);
                    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                      const double* gr = gp + y * wo;
                      const double* src =
                          src_plane + (static_cast<long>(y) + ry.shift) * static_cast<long>(w) + rx.shift;
                      for (std::size_t x = rx.lo; x < rx.hi; ++x) partial[x] += gr[x] * src[x];
                    }
                    double acc = 0.0;
                    for (std::size_t x = rx.lo; x < rx.hi; ++x) acc += partial[x];
                    gk[((f * chans + c) * kh + i) * kw + j] += acc;
                  }
                }
              }
            }
        }
        if (in_node != kNoNode) {
          auto gi = t.gradient_buffer(in_node);
          for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t c = 0; c < chans; ++c) {
              double* dst_plane = gi.data() + (n * chans + c) * h * w;
              for (std::size_t f = 0; f < filters; ++f) {
                const double* gp = g.data() + (n * filters + f) * ho * wo;
                for (std::size_t i = 0; i < kh; ++i) {
                  const Range ry = range(i, h, ho);
                  for (std::size_t j = 0; j < kw; ++j) {
                    const Range rx = range(j, w, wo);
                    const double wt = kv[((f * chans + c) * kh + i) * kw + j];
                    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                      const double* gr = gp + y * wo;
                      double* dst =
                          dst_plane + (static_cast<long>(y) + ry.shift) * static_cast<long>(w) + rx.shift;
                      for (std::size_t x = rx.lo; x < rx.hi; ++x) dst[x] += wt * gr[x];
                    }
                  }
                }
              }
            }
        }
      });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Source taps along one axis, align_corners = false.
Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = std::max(0.0, ratio * (static_cast<double>(o) + 0.5) - 0.5);
    const auto lo = std::min(static_cast<std::size_t>(src), in - 1);
    taps.lo[o] = lo;
    taps.hi[o] = lo + 1 < in ? lo + 1 : lo;
    taps.frac[o] = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_resize", "input");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const Taps ty = bilinear_taps(h, out_h);
  const Taps tx = bilinear_taps(w, out_w);
  const auto in = input.data();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ty.frac[y];
      const double* r0 = src + ty.lo[y] * w;
      const double* r1 = src + ty.hi[y] * w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = tx.frac[x];
        const double top = (1.0 - fx) * r0[tx.lo[x]] + fx * r0[tx.hi[x]];
        const double bot = (1.0 - fx) * r1[tx.lo[x]] + fx * r1[tx.hi[x]];
        dst[y * out_w + x] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  Shape shape{input.dim(0), input.dim(1), out_h, out_w};
  Tensor result = finish(Tensor(std::move(shape), std::move(out)), "bilinear_resize");
  Tape* tape = input.tape();
  if (!tape) return result;
  return tape->record(result, {input.node()},
                      [=, xn = input.node()](Tape& t, std::span<const double> g) {
                        auto gi = t.gradient_buffer(xn);
                        for (std::size_t p = 0; p < planes; ++p) {
                          double* dst = gi.data() + p * h * w;
                          const double* gp = g.data() + p * out_h * out_w;
                          for (std::size_t y = 0; y < out_h; ++y) {
                            const double fy = ty.frac[y];
                            double* r0 = dst + ty.lo[y] * w;
                            double* r1 = dst + ty.hi[y] * w;
                            for (std::size_t x = 0; x < out_w; ++x) {
                              const double fx = tx.frac[x];
                              const double gv = gp[y * out_w + x];
                              r0[tx.lo[x]] += (1.0 - fy) * (1.0 - fx) * gv;
                              r0[tx.hi[x]] += (1.0 - fy) * fx * gv;
                              r1[tx.lo[x]] += fy * (1.0 - fx) * gv;
                              r1[tx.hi[x]] += fy * fx * gv;
                            }
                          }
                        }
                      });
}

Tensor avg_pool2(const Tensor& input) {
  require_rank(input, 4, "avg_pool2", "input");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) {
    throw ShapeError("avg_pool2: spatial extents must be even, got " + shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  const auto in = input.data();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double* a = src + 2 * y * w + 2 * x;
        dst[y * ow + x] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
      }
  }
  Tensor result = finish(Tensor({input.dim(0), input.dim(1), oh, ow}, std::move(out)), "avg_pool2");
  Tape* tape = input.tape();
  if (!tape) return result;
  return tape->record(result, {input.node()},
                      [=, xn = input.node()](Tape& t, std::span<const double> g) {
                        auto gi = t.gradient_buffer(xn);
                        for (std::size_t p = 0; p < planes; ++p) {
                          double* dst = gi.data() + p * h * w;
                          const double* gp = g.data() + p * oh * ow;
                          for (std::size_t y = 0; y < oh; ++y)
                            for (std::size_t x = 0; x < ow; ++x) {
                              const double v = 0.25 * gp[y * ow + x];
                              double* a = dst + 2 * y * w + 2 * x;
                              a[0] += v;
                              a[1] += v;
                              a[w] += v;
                              a[w + 1] += v;
                            }
                        }
                      });
}

namespace {
thread_local BranchRecorder* current_recorder = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : previous_(current_recorder) { current_recorder = this; }
BranchRecorder::~BranchRecorder() { current_recorder = previous_; }
BranchRecorder* BranchRecorder::active() { return current_recorder; }

Tensor relu(const Tensor& x) {
  if (auto* rec = BranchRecorder::active())
    for (double v : x.data()) rec->note(v > 0.0);
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor axpy(const Tensor& a, double factor, const Tensor& b) {
  require_same_shape(a, b, "axpy");
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + factor * bv[i];
  Tensor result = finish(Tensor(a.shape(), std::move(out)), "axpy");
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(result, {a.node(), b.node()},
                      [an = a.node(), bn = b.node(), factor](Tape& t, std::span<const double> g) {
                        accumulate(t, an, g);
                        accumulate(t, bn, g, factor);
                      });
}

Tensor add(const Tensor& a, const Tensor& b) { return axpy(a, 1.0, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return axpy(a, -1.0, b); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor result = finish(Tensor(a.shape(), std::move(out)), "mul");
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(result, {a.node(), b.node()},
                      [an = a.node(), bn = b.node(), ab = a.buffer(), bb = b.buffer()](
                          Tape& t, std::span<const double> g) {
                        if (an != kNoNode) {
                          auto ga = t.gradient_buffer(an);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bb)[i];
                        }
                        if (bn != kNoNode) {
                          auto gb = t.gradient_buffer(bn);
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ab)[i];
                        }
                      });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * xv[i];
  Tensor result = finish(Tensor(x.shape(), std::move(out)), "scale");
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()},
                      [xn = x.node(), factor](Tape& t, std::span<const double> g) {
                        accumulate(t, xn, g, factor);
                      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "left operand");
  require_rank(b, 2, "matmul", "right operand");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  Tensor result = finish(Tensor({m, n}, std::move(out)), "matmul");
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(
      result, {a.node(), b.node()},
      [=, an = a.node(), bn = b.node(), ab = a.buffer(), bb = b.buffer()](Tape& t,
                                                                        std::span<const double> g) {
        if (an != kNoNode) {
          auto ga = t.gradient_buffer(an);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * (*bb)[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (bn != kNoNode) {
          auto gb = t.gradient_buffer(bn);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = (*ab)[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose", "input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  Tensor result(Shape{c, r}, std::move(out));
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()}, [=, xn = x.node()](Tape& t, std::span<const double> g) {
    auto gx = t.gradient_buffer(xn);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor result = x.reshaped(std::move(shape));
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()}, [xn = x.node()](Tape& t, std::span<const double> g) {
    accumulate(t, xn, g);
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const long double total = std::accumulate(xv.begin(), xv.end(), 0.0L);
  Tensor result = finish(Tensor::scalar(static_cast<double>(total)), "sum");
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()}, [xn = x.node()](Tape& t, std::span<const double> g) {
    auto gx = t.gradient_buffer(xn);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_string(x.shape()));
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis of extent " + std::to_string(x.dim(axis)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t extent = x.dim(axis), len = end - begin;
  const auto xv = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * extent + begin) * inner, len * inner, out.data() + o * len * inner);
  Shape shape = x.shape();
  shape[axis] = len;
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = x.tape();
  if (!tape) return result;
  return tape->record(result, {x.node()}, [=, xn = x.node()](Tape& t, std::span<const double> g) {
    auto gx = t.gradient_buffer(xn);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < len * inner; ++i) gx[(o * extent + begin) * inner + i] += g[o * len * inner + i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  std::size_t total = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " +
                         shape_string(p.shape()));
      }
    }
    total += p.dim(axis);
    if (p.tape()) {
      if (tape && tape != p.tape()) throw TapeError("concat: inputs from different tapes");
      tape = p.tape();
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
    offsets.push_back(offset);
    offset += len;
  }
  Shape shape = first;
  shape[axis] = total;
  Tensor result(std::move(shape), std::move(out));
  if (!tape) return result;
  std::vector<NodeId> nodes;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    lens.push_back(p.dim(axis));
  }
  return tape->record(result, nodes, [=](Tape& t, std::span<const double> g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] == kNoNode) continue;
      auto gp = t.gradient_buffer(nodes[k]);
      const std::size_t len = lens[k];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i) gp[o * len * inner + i] += g[(o * total + offsets[k]) * inner + i];
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps_guard) {
  if (!(eps_guard > 0.0)) throw ValidationError("cosine_similarity: eps_guard must be > 0");
  require_rank(b, 1, "cosine_similarity", "b");
  if (a.rank() == 0) throw ShapeError("cosine_similarity: a must have rank >= 1");
  const std::size_t d = b.dim(0);
  if (d == 0 || a.shape().back() != d) {
    throw ShapeError("cosine_similarity: feature dimension mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  const std::size_t rows = a.numel() / d;
  const auto av = a.data();
  const auto bv = b.data();
  double bb = 0.0;
  for (std::size_t k = 0; k < d; ++k) bb += bv[k] * bv[k];
  const double nb = std::sqrt(bb);
  std::vector<double> out(rows), norm_a(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = av.data() + r * d;
    double dot = 0.0, aa = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += row[k] * bv[k];
      aa += row[k] * row[k];
    }
    norm_a[r] = std::sqrt(aa);
    out[r] = dot / std::max(norm_a[r] * nb, eps_guard);
  }
  if (auto* rec = BranchRecorder::active())
    for (std::size_t r = 0; r < rows; ++r) rec->note(norm_a[r] * nb > eps_guard);
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  Tensor result = finish(Tensor(std::move(shape), std::move(out)), "cosine_similarity");
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(
      result, {a.node(), b.node()},
      [=, an = a.node(), bn = b.node(), ab = a.buffer(), bbuf = b.buffer(), cb = result.buffer()](
          Tape& t, std::span<const double> g) {
        const auto& avv = *ab;
        const auto& bvv = *bbuf;
        const auto& cv = *cb;
        std::span<double> ga, gb;
        if (an != kNoNode) ga = t.gradient_buffer(an);
        if (bn != kNoNode) gb = t.gradient_buffer(bn);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* row = avv.data() + r * d;
          const double denom = norm_a[r] * nb;
          const double gr = g[r];
          if (gr == 0.0) continue;
          if (denom > eps_guard) {
            const double c = cv[r];
            const double inv_aa = 1.0 / (norm_a[r] * norm_a[r]);
            const double inv_bb = 1.0 / (nb * nb);
            for (std::size_t k = 0; k < d; ++k) {
              if (!ga.empty()) ga[r * d + k] += gr * (bvv[k] / denom - c * row[k] * inv_aa);
              if (!gb.empty()) gb[k] += gr * (row[k] / denom - c * bvv[k] * inv_bb);
            }
          } else {
            for (std::size_t k = 0; k < d; ++k) {
              if (!ga.empty()) ga[r * d + k] += gr * bvv[k] / eps_guard;
              if (!gb.empty()) gb[k] += gr * row[k] / eps_guard;
            }
          }
        }
      });
}

Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis >= logits.rank()) {
    throw ShapeError("softmax: axis out of range for " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(axis);
  if (n == 0) throw ShapeError("softmax: empty class axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= logits.dim(i);
  for (std::size_t i = axis + 1; i < logits.rank(); ++i) inner *= logits.dim(i);
  const auto lv = logits.data();
  std::vector<double> out(logits.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = lv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, lv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(lv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  Tensor result = finish(Tensor(logits.shape(), std::move(out)), "softmax");
  Tape* tape = logits.tape();
  if (!tape) return result;
  return tape->record(result, {logits.node()},
                      [=, xn = logits.node(), yb = result.buffer()](Tape& t, std::span<const double> g) {
                        const auto& y = *yb;
                        auto gx = t.gradient_buffer(xn);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t in = 0; in < inner; ++in) {
                            const std::size_t base = o * n * inner + in;
                            double dot = 0.0;
                            for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
                            for (std::size_t k = 0; k < n; ++k) {
                              const std::size_t idx = base + k * inner;
                              gx[idx] += y[idx] * (g[idx] - dot);
                            }
                          }
                      });
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "bce_loss");
  if (target.requires_grad()) throw ValidationError("bce_loss: target must not require gradients");
  const auto pv = pred.data();
  const auto tv = target.data();
  const std::size_t n = pv.size();
  long double total = 0.0L;
  auto* rec = BranchRecorder::active();
  for (std::size_t i = 0; i < n; ++i) {
    if (rec) {
      rec->note(pv[i] <= kBceClamp);
      rec->note(pv[i] >= 1.0 - kBceClamp);
    }
    if (tv[i] != 0.0 && tv[i] != 1.0) {
      throw ValidationError("bce_loss: target values must be 0 or 1, found " + std::to_string(tv[i]));
    }
    const double p = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
    total -= tv[i] == 1.0 ? std::log(p) : std::log1p(-p);
  }
  Tensor result = finish(Tensor::scalar(static_cast<double>(total / static_cast<long double>(n))), "bce_loss");
  Tape* tape = pred.tape();
  if (!tape) return result;
  return tape->record(result, {pred.node()},
                      [=, pn = pred.node(), pb = pred.buffer(), tb = target.buffer()](
                          Tape& t, std::span<const double> g) {
                        auto gp = t.gradient_buffer(pn);
                        const double s = g[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                          const double p = (*pb)[i];
                          if (p <= kBceClamp || p >= 1.0 - kBceClamp) continue;
                          gp[i] += (*tb)[i] == 1.0 ? -s / p : s / (1.0 - p);
                        }
                      });
}

Tensor spatial_weighted_sum(const Tensor& features, const Tensor& weights) {
  require_rank(features, 4, "spatial_weighted_sum", "features");
  require_rank(weights, 3, "spatial_weighted_sum", "weights");
  const std::size_t shots = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (weights.dim(0) != shots || weights.dim(1) != h || weights.dim(2) != w) {
    throw ShapeError("spatial_weighted_sum: weights " + shape_string(weights.shape()) +
                     " do not match features " + shape_string(features.shape()));
  }
  if (weights.requires_grad()) throw ValidationError("spatial_weighted_sum: weights must be constant");
  const std::size_t hw = h * w;
  const auto fv = features.data();
  const auto wv = weights.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t k = 0; k < shots; ++k)
    for (std::size_t c = 0; c < d; ++c) {
      const double* fp = fv.data() + (k * d + c) * hw;
      const double* wp = wv.data() + k * hw;
      long double acc = 0.0L;
      for (std::size_t p = 0; p < hw; ++p) acc += wp[p] * fp[p];
      out[c] += static_cast<double>(acc);
    }
  Tensor result = finish(Tensor({d}, std::move(out)), "spatial_weighted_sum");
  Tape* tape = features.tape();
  if (!tape) return result;
  return tape->record(result, {features.node()},
                      [=, fn = features.node(), wb = weights.buffer()](Tape& t, std::span<const double> g) {
                        auto gf = t.gradient_buffer(fn);
                        for (std::size_t k = 0; k < shots; ++k)
                          for (std::size_t c = 0; c < d; ++c) {
                            double* gp = gf.data() + (k * d + c) * hw;
                            const double* wp = wb->data() + k * hw;
                            for (std::size_t p = 0; p < hw; ++p) gp[p] += g[c] * wp[p];
                          }
                      });
}

}  // namespace pnode
