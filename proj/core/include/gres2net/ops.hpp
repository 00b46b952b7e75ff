#ifndef GRES2NET_OPS_HPP
#define GRES2NET_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gres2net/tensor.hpp"

namespace gres2net {

namespace detail {

// C[M x N] += A[M x K] * B[K x N]
template <class S>
void gemm_nn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C) {
  for (int64_t m = 0; m < M; ++m) {
    S* c = C + m * N;
    const S* a = A + m * K;
    for (int64_t k = 0; k < K; ++k) {
      const S av = a[k];
      const S* b = B + k * N;
      for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T  (row-by-row dot products)
template <class S>
void gemm_nt(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C) {
  for (int64_t m = 0; m < M; ++m) {
    const S* a = A + m * K;
    for (int64_t n = 0; n < N; ++n) {
      const S* b = B + n * K;
      S s0 = S(0), s1 = S(0), s2 = S(0), s3 = S(0);
      int64_t k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      S s = (s0 + s1) + (s2 + s3);
      for (; k < K; ++k) s += a[k] * b[k];
      C[m * N + n] += s;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <class S>
void gemm_tn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C) {
  for (int64_t k = 0; k < K; ++k) {
    const S* a = A + k * M;
    const S* b = B + k * N;
    for (int64_t m = 0; m < M; ++m) {
      const S av = a[m];
      S* c = C + m * N;
      for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// Right-aligned broadcast strides of `src` against `dst`; stride 0 where src
// has extent 1 (or is left-padded). Throws if the shapes are incompatible.
inline std::vector<int64_t> broadcast_strides(const Shape& dst, const Shape& src,
                                              const char* where) {
  const int64_t dr = static_cast<int64_t>(dst.size());
  const int64_t sr = static_cast<int64_t>(src.size());
  GRES_CHECK_SHAPE(sr <= dr, where, ": operand rank ", sr,
                   " exceeds target rank ", dr);
  std::vector<int64_t> strides(static_cast<size_t>(dr), 0);
  int64_t stride = 1;
  for (int64_t d = sr - 1; d >= 0; --d) {
    const int64_t sd = src[static_cast<size_t>(d)];
    const int64_t dd = dst[static_cast<size_t>(d + dr - sr)];
    GRES_CHECK_SHAPE(sd == dd || sd == 1, where, ": cannot broadcast ",
                     shape_str(src), " to ", shape_str(dst));
    strides[static_cast<size_t>(d + dr - sr)] = (sd == 1) ? 0 : stride;
    stride *= sd;
  }
  return strides;
}

// Odometer walk over dst's index space, calling fn(dst_flat, src_flat).
template <class F>
void for_each_broadcast(const Shape& dst, const std::vector<int64_t>& src_strides,
                        F&& fn) {
  const int64_t rank = static_cast<int64_t>(dst.size());
  const int64_t total = shape_numel(dst);
  if (rank == 0) {
    fn(0, 0);
    return;
  }
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t src = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    fn(flat, src);
    for (int64_t d = rank - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += src_strides[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < dst[static_cast<size_t>(d)]) break;
      src -= src_strides[static_cast<size_t>(d)] * dst[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

// Channel axis convention: [C,D,T] -> 0, [N,C,D,T] -> 1, [N,C] -> 1, [C] -> 0.
inline int64_t channel_axis(int64_t rank) {
  GRES_CHECK_SHAPE(rank >= 1, "channel_axis: rank must be >= 1");
  return rank >= 3 ? rank - 3 : rank - 1;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  const auto av = a.data();
  const auto bv = b.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
  } else {
    const auto strides = detail::broadcast_strides(a.shape(), b.shape(), "add");
    detail::for_each_broadcast(a.shape(), strides, [&](int64_t di, int64_t si) {
      ov[di] = av[di] + bv[si];
    });
  }
  auto* tape = Tape<S>::current();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        if (a.shape() == b.shape()) {
          for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i];
        } else {
          // Gradient mass over broadcast axes collapses onto b.
          const auto strides = detail::broadcast_strides(a.shape(), b.shape(), "add");
          detail::for_each_broadcast(a.shape(), strides,
                                     [&](int64_t di, int64_t si) { gb[si] += g[di]; });
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  GRES_CHECK_SHAPE(a.shape() == b.shape(), "sub: shape mismatch ",
                   shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  const auto av = a.data();
  const auto bv = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] - bv[i];
  auto* tape = Tape<S>::current();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  GRES_CHECK_SHAPE(a.shape() == b.shape(), "mul: shape mismatch ",
                   shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  const auto av = a.data();
  const auto bv = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * bv[i];
  auto* tape = Tape<S>::current();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        const auto bv2 = b.data();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        const auto av2 = a.data();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  const auto av = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * factor;
  auto* tape = Tape<S>::current();
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a = a, out, factor]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad_mut();
      for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel-wise multiplication: out[...,c,d,t] = y[...,c,d,t] * a[...,c]
// y is [C,D,T] or [N,C,D,T]; a is [C] or, for batched y, [N,C] (per-sample
// gates) or [C] (shared gate).

template <class S>
Tensor<S> channel_mul(const Tensor<S>& y, const Tensor<S>& a) {
  GRES_CHECK_SHAPE(y.rank() == 3 || y.rank() == 4,
                   "channel_mul: feature map must be rank 3 or 4, got ",
                   shape_str(y.shape()));
  const bool batched = y.rank() == 4;
  const int64_t batch = batched ? y.dim(0) : 1;
  const int64_t channels = batched ? y.dim(1) : y.dim(0);
  const int64_t spatial = y.dim(y.rank() - 2) * y.dim(y.rank() - 1);
  bool gate_per_sample;
  if (a.rank() == 1) {
    GRES_CHECK_SHAPE(a.dim(0) == channels, "channel_mul: gate length ", a.dim(0),
                     " != channel count ", channels);
    gate_per_sample = false;
  } else if (a.rank() == 2 && batched) {
    GRES_CHECK_SHAPE(a.dim(0) == batch && a.dim(1) == channels,
                     "channel_mul: gate shape ", shape_str(a.shape()),
                     " incompatible with map ", shape_str(y.shape()));
    gate_per_sample = true;
  } else {
    throw ShapeError(format_msg("channel_mul: gate shape ", shape_str(a.shape()),
                                " incompatible with map ", shape_str(y.shape())));
  }

  Tensor<S> out = Tensor<S>::zeros(y.shape());
  auto ov = out.mutable_data();
  const auto yv = y.data();
  const auto gv = a.data();
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t c = 0; c < channels; ++c) {
      const S gate = gv[gate_per_sample ? n * channels + c : c];
      const int64_t base = (n * channels + c) * spatial;
      for (int64_t sidx = 0; sidx < spatial; ++sidx)
        ov[base + sidx] = yv[base + sidx] * gate;
    }
  }

  auto* tape = Tape<S>::current();
  if (tape && (y.requires_grad() || a.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([y = y, a = a, out, batch, channels, spatial, gate_per_sample]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto yv2 = y.data();
      const auto gv2 = a.data();
      if (y.requires_grad()) {
        auto gy = y.grad_mut();
        for (int64_t n = 0; n < batch; ++n)
          for (int64_t c = 0; c < channels; ++c) {
            const S gate = gv2[gate_per_sample ? n * channels + c : c];
            const int64_t base = (n * channels + c) * spatial;
            for (int64_t sidx = 0; sidx < spatial; ++sidx)
              gy[base + sidx] += g[base + sidx] * gate;
          }
      }
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (int64_t n = 0; n < batch; ++n)
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t base = (n * channels + c) * spatial;
            S acc = S(0);
            for (int64_t sidx = 0; sidx < spatial; ++sidx)
              acc += g[base + sidx] * yv2[base + sidx];
            ga[gate_per_sample ? n * channels + c : c] += acc;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel split / concat. concat_channels(split_channels(x, s)) == x exactly.

template <class S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& x, int64_t s) {
  GRES_CHECK(s >= 1, "split_channels: group count must be >= 1, got ", s);
  const int64_t ax = channel_axis(x.rank());
  const int64_t channels = x.dim(ax);
  GRES_CHECK_SHAPE(channels % s == 0, "split_channels: channel count ", channels,
                   " not divisible by ", s);
  const int64_t group = channels / s;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < ax; ++d) outer *= x.dim(d);
  for (int64_t d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);

  std::vector<Tensor<S>> parts;
  parts.reserve(static_cast<size_t>(s));
  const auto xv = x.data();
  auto* tape = Tape<S>::current();
  for (int64_t p = 0; p < s; ++p) {
    Shape shape = x.shape();
    shape[static_cast<size_t>(ax)] = group;
    Tensor<S> part = Tensor<S>::zeros(shape);
    auto pv = part.mutable_data();
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = xv.data() + (o * channels + p * group) * inner;
      S* dst = pv.data() + o * group * inner;
      std::copy(src, src + group * inner, dst);
    }
    if (tape && x.requires_grad()) {
      part.set_requires_grad(true);
      tape->record([x = x, part, p, group, channels, outer, inner]() mutable {
        if (!part.has_grad()) return;
        const auto g = part.grad();
        auto gx = x.grad_mut();
        for (int64_t o = 0; o < outer; ++o) {
          S* dst = gx.data() + (o * channels + p * group) * inner;
          const S* src = g.data() + o * group * inner;
          for (int64_t i = 0; i < group * inner; ++i) dst[i] += src[i];
        }
      });
    }
    parts.push_back(std::move(part));
  }
  return parts;
}

template <class S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  GRES_CHECK(!parts.empty(), "concat_channels: no parts");
  const int64_t ax = channel_axis(parts[0].rank());
  int64_t channels = 0;
  for (const auto& p : parts) {
    GRES_CHECK_SHAPE(p.rank() == parts[0].rank(),
                     "concat_channels: rank mismatch across parts");
    for (int64_t d = 0; d < p.rank(); ++d) {
      if (d == ax) continue;
      GRES_CHECK_SHAPE(p.dim(d) == parts[0].dim(d),
                       "concat_channels: non-channel extent mismatch at axis ", d);
    }
    channels += p.dim(ax);
  }
  Shape shape = parts[0].shape();
  shape[static_cast<size_t>(ax)] = channels;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < ax; ++d) outer *= shape[static_cast<size_t>(d)];
  for (int64_t d = ax + 1; d < static_cast<int64_t>(shape.size()); ++d)
    inner *= shape[static_cast<size_t>(d)];

  Tensor<S> out = Tensor<S>::zeros(shape);
  auto ov = out.mutable_data();
  int64_t offset = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    const int64_t pc = p.dim(ax);
    const auto pv = p.data();
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = pv.data() + o * pc * inner;
      S* dst = ov.data() + (o * channels + offset) * inner;
      std::copy(src, src + pc * inner, dst);
    }
    offset += pc;
    any_grad = any_grad || p.requires_grad();
  }

  auto* tape = Tape<S>::current();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts = parts, out, channels, outer, inner, ax]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      int64_t off = 0;
      for (auto& p : parts) {
        const int64_t pc = p.dim(ax);
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (int64_t o = 0; o < outer; ++o) {
            const S* src = g.data() + (o * channels + off) * inner;
            S* dst = gp.data() + o * pc * inner;
            for (int64_t i = 0; i < pc * inner; ++i) dst[i] += src[i];
          }
        }
        off += pc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear: out = x . W with W stored [in, out], matching the W^T x orientation
// used for gate equations when x is a single vector.

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight) {
  GRES_CHECK_SHAPE(weight.rank() == 2, "linear: weight must be a matrix, got ",
                   shape_str(weight.shape()));
  GRES_CHECK_SHAPE(x.rank() == 1 || x.rank() == 2,
                   "linear: input must be rank 1 or 2, got ", shape_str(x.shape()));
  const int64_t in_dim = weight.dim(0);
  const int64_t out_dim = weight.dim(1);
  const int64_t batch = x.rank() == 2 ? x.dim(0) : 1;
  GRES_CHECK_SHAPE(x.dim(x.rank() - 1) == in_dim, "linear: input extent ",
                   x.dim(x.rank() - 1), " != weight rows ", in_dim);

  Shape out_shape = x.rank() == 2 ? Shape{batch, out_dim} : Shape{out_dim};
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  detail::gemm_nn(batch, out_dim, in_dim, x.data().data(), weight.data().data(),
                  out.mutable_data().data());

  auto* tape = Tape<S>::current();
  if (tape && (x.requires_grad() || weight.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, weight = weight, out, batch, in_dim, out_dim]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      if (x.requires_grad())
        detail::gemm_nt(batch, in_dim, out_dim, g, weight.data().data(),
                        x.grad_mut().data());
      if (weight.requires_grad())
        detail::gemm_tn(in_dim, out_dim, batch, x.data().data(), g,
                        weight.grad_mut().data());
    });
  }
  return out;
}

// matvec per the printed gate equations: W^T x for a single vector x.
template <class S>
Tensor<S> matvec(const Tensor<S>& weight, const Tensor<S>& x) {
  GRES_CHECK_SHAPE(x.rank() == 1, "matvec: x must be a vector, got ",
                   shape_str(x.shape()));
  return linear(x, weight);
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation with kernels [O, Cin, k, k], k in {1, 3}. Padding
// defaults to (k-1)/2 so a 3x3 stride-1 convolution preserves spatial size.

struct Conv2dSpec {
  int64_t stride = 1;
  int64_t padding = -1;  // -1: same-style default (k-1)/2
};

namespace detail {

template <class S>
void im2col(const S* x, int64_t cin, int64_t h, int64_t w, int64_t ksize,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, S* cols) {
  // Row order (c, ki, kj): keeps the accumulation order of the GEMM identical
  // to a naive (c, ki, kj) loop nest.
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t ki = 0; ki < ksize; ++ki)
      for (int64_t kj = 0; kj < ksize; ++kj, ++row) {
        S* dst = cols + row * (oh * ow);
        for (int64_t i = 0; i < oh; ++i) {
          const int64_t src_i = i * stride - pad + ki;
          if (src_i < 0 || src_i >= h) {
            std::fill(dst + i * ow, dst + (i + 1) * ow, S(0));
            continue;
          }
          for (int64_t j = 0; j < ow; ++j) {
            const int64_t src_j = j * stride - pad + kj;
            dst[i * ow + j] =
                (src_j < 0 || src_j >= w) ? S(0) : x[(c * h + src_i) * w + src_j];
          }
        }
      }
}

template <class S>
void col2im_add(const S* cols, int64_t cin, int64_t h, int64_t w, int64_t ksize,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, S* dx) {
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t ki = 0; ki < ksize; ++ki)
      for (int64_t kj = 0; kj < ksize; ++kj, ++row) {
        const S* src = cols + row * (oh * ow);
        for (int64_t i = 0; i < oh; ++i) {
          const int64_t dst_i = i * stride - pad + ki;
          if (dst_i < 0 || dst_i >= h) continue;
          for (int64_t j = 0; j < ow; ++j) {
            const int64_t dst_j = j * stride - pad + kj;
            if (dst_j < 0 || dst_j >= w) continue;
            dx[(c * h + dst_i) * w + dst_j] += src[i * ow + j];
          }
        }
      }
}

}  // namespace detail

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernels,
                 Conv2dSpec spec = {}, const Tensor<S>* bias = nullptr) {
  GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                   "conv2d: input must be [C,H,W] or [N,C,H,W], got ",
                   shape_str(x.shape()));
  GRES_CHECK_SHAPE(kernels.rank() == 4, "conv2d: kernels must be [O,C,k,k], got ",
                   shape_str(kernels.shape()));
  const bool batched = x.rank() == 4;
  const int64_t batch = batched ? x.dim(0) : 1;
  const int64_t cin = batched ? x.dim(1) : x.dim(0);
  const int64_t h = x.dim(x.rank() - 2);
  const int64_t w = x.dim(x.rank() - 1);
  const int64_t cout = kernels.dim(0);
  const int64_t ksize = kernels.dim(2);
  GRES_CHECK_SHAPE(kernels.dim(1) == cin, "conv2d: kernel channel count ",
                   kernels.dim(1), " != input channels ", cin);
  GRES_CHECK_SHAPE(kernels.dim(3) == ksize && (ksize == 1 || ksize == 3),
                   "conv2d: kernel spatial size must be 1x1 or 3x3, got ",
                   kernels.dim(2), "x", kernels.dim(3));
  GRES_CHECK(spec.stride >= 1, "conv2d: stride must be >= 1");
  const int64_t pad = spec.padding >= 0 ? spec.padding : (ksize - 1) / 2;
  const int64_t oh = (h + 2 * pad - ksize) / spec.stride + 1;
  const int64_t ow = (w + 2 * pad - ksize) / spec.stride + 1;
  GRES_CHECK_SHAPE(oh >= 1 && ow >= 1, "conv2d: empty output for input ",
                   shape_str(x.shape()));
  if (bias) {
    GRES_CHECK_SHAPE(bias->rank() == 1 && bias->dim(0) == cout,
                     "conv2d: bias must be [", cout, "], got ",
                     shape_str(bias->shape()));
  }

  Shape out_shape = batched ? Shape{batch, cout, oh, ow} : Shape{cout, oh, ow};
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const int64_t krows = cin * ksize * ksize;
  const int64_t positions = oh * ow;
  std::vector<S> cols(static_cast<size_t>(krows * positions));
  const auto xv = x.data();
  auto ov = out.mutable_data();
  for (int64_t n = 0; n < batch; ++n) {
    detail::im2col(xv.data() + n * cin * h * w, cin, h, w, ksize, spec.stride, pad,
                   oh, ow, cols.data());
    S* out_n = ov.data() + n * cout * positions;
    detail::gemm_nn(cout, positions, krows, kernels.data().data(), cols.data(),
                    out_n);
    if (bias) {
      const auto bv = bias->data();
      for (int64_t o = 0; o < cout; ++o)
        for (int64_t p = 0; p < positions; ++p) out_n[o * positions + p] += bv[o];
    }
  }

  auto* tape = Tape<S>::current();
  const bool bias_grad = bias && bias->requires_grad();
  if (tape && (x.requires_grad() || kernels.requires_grad() || bias_grad)) {
    out.set_requires_grad(true);
    Tensor<S> bias_t = bias ? *bias : Tensor<S>();
    const int64_t stride = spec.stride;
    tape->record([x = x, kernels = kernels, bias_t, out, batch, cin, h, w, cout, ksize, stride,
                  pad, oh, ow]() mutable {
      if (!out.has_grad()) return;
      const int64_t krows = cin * ksize * ksize;
      const int64_t positions = oh * ow;
      const auto g = out.grad();
      // The im2col buffer is rebuilt rather than kept from the forward pass;
      // it is the largest transient of the op.
      std::vector<S> cols(static_cast<size_t>(krows * positions));
      std::vector<S> dcols;
      if (x.requires_grad()) dcols.resize(static_cast<size_t>(krows * positions));
      for (int64_t n = 0; n < batch; ++n) {
        const S* g_n = g.data() + n * cout * positions;
        if (kernels.requires_grad()) {
          detail::im2col(x.data().data() + n * cin * h * w, cin, h, w, ksize,
                         stride, pad, oh, ow, cols.data());
          detail::gemm_nt(cout, krows, positions, g_n, cols.data(),
                          kernels.grad_mut().data());
        }
        if (x.requires_grad()) {
          std::fill(dcols.begin(), dcols.end(), S(0));
          detail::gemm_tn(krows, positions, cout, kernels.data().data(), g_n,
                          dcols.data());
          detail::col2im_add(dcols.data(), cin, h, w, ksize, stride, pad, oh, ow,
                             x.grad_mut().data() + n * cin * h * w);
        }
        if (bias_t.defined() && bias_t.requires_grad()) {
          auto gb = bias_t.grad_mut();
          for (int64_t o = 0; o < cout; ++o) {
            S acc = S(0);
            for (int64_t p = 0; p < positions; ++p) acc += g_n[o * positions + p];
            gb[o] += acc;
          }
        }
      }
    });
  }
  return out;
}

// Non-overlapping k x k average pooling; spatial extents must divide by k.
template <class S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int64_t k) {
  GRES_CHECK(k >= 1, "avg_pool2d: factor must be >= 1");
  if (k == 1) return x;
  GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                   "avg_pool2d: input must be rank 3 or 4");
  const int64_t h = x.dim(x.rank() - 2);
  const int64_t w = x.dim(x.rank() - 1);
  GRES_CHECK_SHAPE(h % k == 0 && w % k == 0, "avg_pool2d: extents ", h, "x", w,
                   " not divisible by ", k);
  const int64_t oh = h / k, ow = w / k;
  int64_t planes = 1;
  for (int64_t d = 0; d + 2 < x.rank(); ++d) planes *= x.dim(d);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto ov = out.mutable_data();
  const auto xv = x.data();
  const S inv = S(1) / static_cast<S>(k * k);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        S acc = S(0);
        for (int64_t a = 0; a < k; ++a)
          for (int64_t b = 0; b < k; ++b)
            acc += xv[(p * h + i * k + a) * w + j * k + b];
        ov[(p * oh + i) * ow + j] = acc * inv;
      }
  auto* tape = Tape<S>::current();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x = x, out, planes, h, w, oh, ow, k, inv]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto gx = x.grad_mut();
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            const S gv = g[(p * oh + i) * ow + j] * inv;
            for (int64_t a = 0; a < k; ++a)
              for (int64_t b = 0; b < k; ++b)
                gx[(p * h + i * k + a) * w + j * k + b] += gv;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  const auto xv = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
  auto* tape = Tape<S>::current();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x = x, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto xv2 = x.data();
      auto gx = x.grad_mut();
      for (int64_t i = 0; i < x.numel(); ++i)
        if (xv2[i] > S(0)) gx[i] += g[i];
    });
  }
  return out;
}

namespace detail {
// Numerically stable logistic, clamped to the open interval (0, 1): extreme
// arguments would otherwise round to exactly 0 or 1 and break the strict
// gate-range contract.
template <class S>
S sigmoid_scalar(S x) {
  S y;
  if (x >= S(0)) {
    const S e = std::exp(-x);
    y = S(1) / (S(1) + e);
  } else {
    const S e = std::exp(x);
    y = e / (S(1) + e);
  }
  if (y >= S(1)) y = std::nextafter(S(1), S(0));
  if (y <= S(0)) y = std::nextafter(S(0), S(1));
  return y;
}
}  // namespace detail

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  const auto xv = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) ov[i] = detail::sigmoid_scalar(xv[i]);
  auto* tape = Tape<S>::current();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x = x, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto yv = out.data();
      auto gx = x.grad_mut();
      for (int64_t i = 0; i < x.numel(); ++i)
        gx[i] += g[i] * yv[i] * (S(1) - yv[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. An empty axis list is the identity map.

namespace detail {

inline std::vector<int64_t> normalize_axes(const Shape& shape,
                                           std::vector<int64_t> axes,
                                           const char* where) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (int64_t ax : axes)
    GRES_CHECK_SHAPE(ax >= 0 && ax < static_cast<int64_t>(shape.size()), where,
                     ": axis ", ax, " out of range for ", shape_str(shape));
  return axes;
}

}  // namespace detail

template <class S>
Tensor<S> sum_over(const Tensor<S>& x, std::vector<int64_t> axes,
                   bool mean = false) {
  axes = detail::normalize_axes(x.shape(), std::move(axes), mean ? "mean_over" : "sum_over");
  if (axes.empty() && !mean) {
    // identity with gradient pass-through
    Tensor<S> out(x.shape(), std::vector<S>(x.data().begin(), x.data().end()));
    auto* tape = Tape<S>::current();
    if (tape && x.requires_grad()) {
      out.set_requires_grad(true);
      tape->record([x = x, out]() mutable {
        if (!out.has_grad()) return;
        const auto g = out.grad();
        auto gx = x.grad_mut();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i];
      });
    }
    return out;
  }
  if (axes.empty() && mean) return sum_over(x, {}, false);

  Shape out_shape;
  int64_t count = 1;
  std::vector<bool> reduced(static_cast<size_t>(x.rank()), false);
  for (int64_t ax : axes) reduced[static_cast<size_t>(ax)] = true;
  for (int64_t d = 0; d < x.rank(); ++d) {
    if (reduced[static_cast<size_t>(d)])
      count *= x.dim(d);
    else
      out_shape.push_back(x.dim(d));
  }
  GRES_CHECK(count > 0, "reduction over empty extent");
  const S factor = mean ? S(1) / static_cast<S>(count) : S(1);

  // Output strides aligned with input dims; 0 on reduced dims.
  std::vector<int64_t> ostrides(static_cast<size_t>(x.rank()), 0);
  {
    int64_t stride = 1;
    for (int64_t d = x.rank() - 1; d >= 0; --d) {
      if (!reduced[static_cast<size_t>(d)]) {
        ostrides[static_cast<size_t>(d)] = stride;
        stride *= x.dim(d);
      }
    }
  }

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto ov = out.mutable_data();
  const auto xv = x.data();
  detail::for_each_broadcast(x.shape(), ostrides, [&](int64_t xi, int64_t oi) {
    ov[oi] += xv[xi];
  });
  if (mean)
    for (int64_t i = 0; i < out.numel(); ++i) ov[i] *= factor;

  auto* tape = Tape<S>::current();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Shape xshape = x.shape();
    tape->record([x = x, out, ostrides, xshape, factor]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto gx = x.grad_mut();
      detail::for_each_broadcast(xshape, ostrides, [&](int64_t xi, int64_t oi) {
        gx[xi] += g[oi] * factor;
      });
    });
  }
  return out;
}

template <class S>
Tensor<S> mean_over(const Tensor<S>& x, std::vector<int64_t> axes) {
  return sum_over(x, std::move(axes), /*mean=*/true);
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  std::vector<int64_t> axes(static_cast<size_t>(x.rank()));
  for (int64_t d = 0; d < x.rank(); ++d) axes[static_cast<size_t>(d)] = d;
  return sum_over(x, std::move(axes));
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  std::vector<int64_t> axes(static_cast<size_t>(x.rank()));
  for (int64_t d = 0; d < x.rank(); ++d) axes[static_cast<size_t>(d)] = d;
  return mean_over(x, std::move(axes));
}

// Spatial squeeze F_ap: mean over the last two (spectrum, time) axes.
template <class S>
Tensor<S> avg_pool_spatial(const Tensor<S>& x) {
  GRES_CHECK_SHAPE(x.rank() == 3 || x.rank() == 4,
                   "avg_pool_spatial: input must be [C,D,T] or [N,C,D,T], got ",
                   shape_str(x.shape()));
  GRES_CHECK_SHAPE(x.dim(x.rank() - 2) >= 1 && x.dim(x.rank() - 1) >= 1,
                   "avg_pool_spatial: empty spatial extent");
  return mean_over(x, {x.rank() - 2, x.rank() - 1});
}

// ---------------------------------------------------------------------------
// Log-softmax over the last axis and the mean cross-entropy loss.

template <class S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  GRES_CHECK_SHAPE(x.rank() == 1 || x.rank() == 2,
                   "log_softmax: input must be rank 1 or 2, got ",
                   shape_str(x.shape()));
  const int64_t classes = x.dim(x.rank() - 1);
  const int64_t rows = x.rank() == 2 ? x.dim(0) : 1;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  const auto xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * classes;
    S* orow = ov.data() + r * classes;
    S mx = row[0];
    for (int64_t k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
    S lse = S(0);
    for (int64_t k = 0; k < classes; ++k) lse += std::exp(row[k] - mx);
    lse = mx + std::log(lse);
    for (int64_t k = 0; k < classes; ++k) orow[k] = row[k] - lse;
  }
  auto* tape = Tape<S>::current();
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x = x, out, rows, classes]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto yv = out.data();
      auto gx = x.grad_mut();
      for (int64_t r = 0; r < rows; ++r) {
        S gsum = S(0);
        for (int64_t k = 0; k < classes; ++k) gsum += g[r * classes + k];
        for (int64_t k = 0; k < classes; ++k)
          gx[r * classes + k] +=
              g[r * classes + k] - std::exp(yv[r * classes + k]) * gsum;
      }
    });
  }
  return out;
}

// Mean softmax cross-entropy over rows of logits against integer labels.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  GRES_CHECK_SHAPE(logits.rank() == 1 || logits.rank() == 2,
                   "cross_entropy: logits must be rank 1 or 2");
  const int64_t classes = logits.dim(logits.rank() - 1);
  const int64_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  GRES_CHECK_SHAPE(static_cast<int64_t>(labels.size()) == rows,
                   "cross_entropy: ", labels.size(), " labels for ", rows, " rows");
  for (int label : labels)
    GRES_CHECK(label >= 0 && label < classes, "cross_entropy: label ", label,
               " out of range [0, ", classes, ")");

  const auto xv = logits.data();
  std::vector<S> logp(static_cast<size_t>(rows * classes));
  S total = S(0);
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * classes;
    S mx = row[0];
    for (int64_t k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
    S lse = S(0);
    for (int64_t k = 0; k < classes; ++k) lse += std::exp(row[k] - mx);
    lse = mx + std::log(lse);
    for (int64_t k = 0; k < classes; ++k) logp[r * classes + k] = row[k] - lse;
    total -= logp[r * classes + labels[static_cast<size_t>(r)]];
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(rows));

  auto* tape = Tape<S>::current();
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([logits = logits, out, labels, rows, classes,
                  logp = std::move(logp)]() mutable {
      if (!out.has_grad()) return;
      const S g = out.grad()[0] / static_cast<S>(rows);
      auto gx = logits.grad_mut();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t k = 0; k < classes; ++k) {
          const S soft = std::exp(logp[r * classes + k]);
          const S onehot = (k == labels[static_cast<size_t>(r)]) ? S(1) : S(0);
          gx[r * classes + k] += g * (soft - onehot);
        }
    });
  }
  return out;
}

}  // namespace gres2net

#endif  // GRES2NET_OPS_HPP
