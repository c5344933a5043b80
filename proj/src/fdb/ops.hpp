#pragma once

#include <array>
#include <vector>

#include "fdb/autograd.hpp"

namespace fdb {

enum class BorderPad { zero, replicate, reflect };

// Bilinear gather plan over one H×W plane: each output pixel reads four
// input pixels with fixed weights. Shared by resizing, interpolation padding
// and flow warping so that forward and adjoint use identical taps.
template <typename T>
struct SamplingPlan {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::array<int, 4>> index;
  std::vector<std::array<T, 4>> weight;

  void apply(const T* in, T* out) const;
  void apply_adjoint(const T* grad_out, T* grad_in) const;  // accumulates
};

// Half-pixel-centre bilinear resize (the usual `align_corners = false`
// convention), sampling positions clamped to the input extent.
template <typename T>
SamplingPlan<T> resize_plan(int in_h, int in_w, int out_h, int out_w);

// Samples the input at (y + v(y,x), x + u(y,x)) with clamp-to-edge borders.
// `flow` is 2×H×W with channel 0 = u and channel 1 = v.
template <typename T>
SamplingPlan<T> warp_plan(const Tensor<T>& flow);

// Applies a plan to every (n, c) plane of an NCHW (or CHW) tensor.
template <typename T>
Tensor<T> apply_plan(const SamplingPlan<T>& plan, const Tensor<T>& x);

namespace ops {

// Elementwise arithmetic (identical shapes).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);

// Reductions to shape {1}.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);

template <typename T> Var<T> relu(const Var<T>& a);
// 0.5 * (tanh(a) + 1), a smooth map onto (0, 1).
template <typename T> Var<T> unit_tanh(const Var<T>& a);

// a[n,c,y,x] * mask[y,x] with a constant mask (rank 2, or rank 3 with one channel).
template <typename T> Var<T> mul_mask(const Var<T>& a, const Tensor<T>& mask);
// a[n,c,...] * scale[c] + shift[c] with constant per-channel coefficients.
template <typename T> Var<T> channel_affine(const Var<T>& a, const std::vector<T>& scale, const std::vector<T>& shift);

// NCHW structure.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_batch(const Var<T>& a, int n);
template <typename T> Var<T> crop(const Var<T>& a, int top, int left, int height, int width);
template <typename T> Var<T> pad(const Var<T>& a, int top, int bottom, int left, int right, BorderPad mode);
// Bilinear upsample to out_h×out_w, then restore the centred original
// interior so that only the surrounding ring is synthesised.
template <typename T> Var<T> interpolation_pad(const Var<T>& a, int out_h, int out_w);
template <typename T> Var<T> upsample_nearest(const Var<T>& a, int factor);
template <typename T> Var<T> avg_pool2(const Var<T>& a);

// Cross-correlation of NCHW input with a [Co,Ci,k,k] kernel. `bias` may be
// undefined. `zero_pad` pixels of zeros are implied on every side.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int zero_pad);
template <typename T> Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

// F·Fᵀ of the flattened C×(H·W) map; input must have batch size 1.
template <typename T> Var<T> gram(const Var<T>& x);

// Differentiable in `x`; the flow is data.
template <typename T> Var<T> warp(const Var<T>& x, const Tensor<T>& flow);

template <typename T> Var<T> apply_plan(const Var<T>& x, const SamplingPlan<T>& plan);

}  // namespace ops

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return ops::add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return ops::sub(a, b); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return ops::scale(a, s); }

}  // namespace fdb
