#pragma once

#include <filesystem>

#include "fdb/media_io.hpp"
#include "fdb/tensor.hpp"

namespace fdb {

// Per-pixel displacement, 2×H×W: channel 0 = u (x), channel 1 = v (y).
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor<float> data);
  static FlowField constant(int height, int width, float u, float v);

  int height() const { return data_.dim(1); }
  int width() const { return data_.dim(2); }
  Size2 size() const { return {height(), width()}; }
  const Tensor<float>& data() const { return data_; }
  float u(int y, int x) const { return data_[static_cast<std::size_t>(y) * width() + x]; }
  float v(int y, int x) const {
    return data_[static_cast<std::size_t>(height() + y) * width() + x];
  }

 private:
  Tensor<float> data_;
};

// H×W confidence in [0,1]; masks produced here are binary.
class ConfidenceMask {
 public:
  ConfidenceMask() = default;
  explicit ConfidenceMask(Tensor<float> data);
  static ConfidenceMask ones(int height, int width) { return ConfidenceMask(Tensor<float>({height, width}, 1.0f)); }

  int height() const { return data_.dim(0); }
  int width() const { return data_.dim(1); }
  Size2 size() const { return {height(), width()}; }
  const Tensor<float>& data() const { return data_; }

  bool operator==(const ConfidenceMask&) const = default;

 private:
  Tensor<float> data_;
};

inline constexpr float kFloSentinel = 202021.25f;

// Middlebury `.flo`: float32 sentinel, int32 width, int32 height, then
// row-major interleaved (u, v) float32 pairs, all little-endian.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& flow, const std::filesystem::path& path);
Size2 read_flo_size(const std::filesystem::path& path);

// output(y,x) = input sampled bilinearly at (y + v, x + u), clamp-to-edge.
Frame backward_warp(const Frame& frame, const FlowField& flow);
Tensor<float> backward_warp(const Tensor<float>& chw, const FlowField& flow);

// Forward/backward consistency and motion-boundary test. `warp_flow` is the
// flow used to warp frame t onto frame t+1 (defined on frame t+1's grid and
// pointing into frame t); `other_flow` is the opposite direction. A pixel is
// 0 when its correspondence leaves the image, when
//   |w + ŵ|² > 0.01 (|w|² + |ŵ|²) + 0.5   (ŵ = other_flow sampled at x + w)
// or when |∇u|² + |∇v|² > 0.01 |w|² + 0.002 on the warp flow; else 1.
ConfidenceMask confidence_mask(const FlowField& forward, const FlowField& backward);

ConfidenceMask read_mask(const std::filesystem::path& path);
void write_mask(const ConfidenceMask& mask, const std::filesystem::path& path);

// Bilinear resampling to another resolution; displacements are rescaled by
// the size ratio per axis.
FlowField resize_flow(const FlowField& flow, Size2 size);
ConfidenceMask resize_mask(const ConfidenceMask& mask, Size2 size);

}  // namespace fdb
