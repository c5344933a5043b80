#include "fdb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fdb/blas.hpp"

namespace fdb {

namespace {

struct Dims4 {
  int n, c, h, w;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

Dims4 dims4(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + ": expected an NCHW tensor, got " + shape_string(s));
  return {s[0], s[1], s[2], s[3]};
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// Column buffers cover output rows [oy0, oy1) so that large kernels can be
// processed in cache-sized tiles. Row r of `col` holds one (c, ky, kx) tap.
template <typename T>
void im2col(const T* im, int channels, int h, int w, int k, int stride, int pad, int oy0, int oy1, int out_w, T* col) {
  const std::size_t tile = static_cast<std::size_t>(oy1 - oy0) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = im + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * tile;
        const int x_lo = stride == 1 ? std::clamp(pad - kx, 0, out_w) : 0;
        const int x_hi = stride == 1 ? std::clamp(w + pad - kx, x_lo, out_w) : out_w;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = dst + static_cast<std::size_t>(oy - oy0) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* in_row = src + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            std::fill(row, row + x_lo, T(0));
            std::memcpy(row + x_lo, in_row + (x_lo - pad + kx), sizeof(T) * (x_hi - x_lo));
            std::fill(row + x_hi, row + out_w, T(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[ox] = (ix >= 0 && ix < w) ? in_row[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int oy0, int oy1, int out_w, T* im) {
  const std::size_t tile = static_cast<std::size_t>(oy1 - oy0) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst = im + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * tile;
        const int x_lo = stride == 1 ? std::clamp(pad - kx, 0, out_w) : 0;
        const int x_hi = stride == 1 ? std::clamp(w + pad - kx, x_lo, out_w) : out_w;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* out_row = dst + static_cast<std::size_t>(iy) * w;
          const T* row = src + static_cast<std::size_t>(oy - oy0) * out_w;
          if (stride == 1) {
            T* o = out_row + (x_lo - pad + kx);
            for (int ox = x_lo; ox < x_hi; ++ox) o[ox - x_lo] += row[ox];
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) out_row[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

// Output rows per column tile; keeps the buffer near 1M elements.
inline int conv_tile_rows(int patch, int out_h, int out_w) {
  const std::size_t budget = std::size_t(1) << 20;
  const std::size_t per_row = static_cast<std::size_t>(patch) * out_w;
  return std::clamp(static_cast<int>(budget / std::max<std::size_t>(per_row, 1)), 1, out_h);
}

// Maps a padded coordinate back to a source coordinate, or -1 for zeros.
std::vector<int> border_map(int size, int before, int after, BorderPad mode) {
  std::vector<int> map(static_cast<std::size_t>(size + before + after));
  for (int i = 0; i < static_cast<int>(map.size()); ++i) {
    int s = i - before;
    if (s >= 0 && s < size) {
      map[i] = s;
      continue;
    }
    switch (mode) {
      case BorderPad::zero: s = -1; break;
      case BorderPad::replicate: s = std::clamp(s, 0, size - 1); break;
      case BorderPad::reflect: {
        // Mirror without repeating the edge; wide pads bounce repeatedly.
        const int period = 2 * (size - 1);
        if (period == 0) {
          s = 0;
          break;
        }
        s = ((s % period) + period) % period;
        if (s >= size) s = period - s;
        break;
      }
    }
    map[i] = s;
  }
  return map;
}

template <typename T>
void bilinear_taps(double sy, double sx, int h, int w, std::array<int, 4>& idx, std::array<T, 4>& wt) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  idx = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  wt = {static_cast<T>((1 - fy) * (1 - fx)), static_cast<T>((1 - fy) * fx), static_cast<T>(fy * (1 - fx)),
        static_cast<T>(fy * fx)};
}

}  // namespace

template <typename T>
void SamplingPlan<T>::apply(const T* in, T* out) const {
  const std::size_t n = index.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ix = index[i];
    const auto& wt = weight[i];
    out[i] = wt[0] * in[ix[0]] + wt[1] * in[ix[1]] + wt[2] * in[ix[2]] + wt[3] * in[ix[3]];
  }
}

template <typename T>
void SamplingPlan<T>::apply_adjoint(const T* grad_out, T* grad_in) const {
  const std::size_t n = index.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad_out[i];
    for (int j = 0; j < 4; ++j) grad_in[index[i][j]] += weight[i][j] * g;
  }
}

template <typename T>
SamplingPlan<T> resize_plan(int in_h, int in_w, int out_h, int out_w) {
  require(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "resize_plan: sizes must be positive");
  SamplingPlan<T> plan{in_h, in_w, out_h, out_w, {}, {}};
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  plan.index.resize(n);
  plan.weight.resize(n);
  const double ry = static_cast<double>(in_h) / out_h;
  const double rx = static_cast<double>(in_w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * out_w + x;
      bilinear_taps<T>((y + 0.5) * ry - 0.5, (x + 0.5) * rx - 0.5, in_h, in_w, plan.index[i], plan.weight[i]);
    }
  }
  return plan;
}

template <typename T>
SamplingPlan<T> warp_plan(const Tensor<T>& flow) {
  require(flow.rank() == 3 && flow.dim(0) == 2, "warp_plan: flow must be 2xHxW, got " + shape_string(flow.shape()));
  const int h = flow.dim(1);
  const int w = flow.dim(2);
  SamplingPlan<T> plan{h, w, h, w, {}, {}};
  const std::size_t n = static_cast<std::size_t>(h) * w;
  plan.index.resize(n);
  plan.weight.resize(n);
  const T* u = flow.data();
  const T* v = flow.data() + n;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      bilinear_taps<T>(y + static_cast<double>(v[i]), x + static_cast<double>(u[i]), h, w, plan.index[i],
                       plan.weight[i]);
    }
  }
  return plan;
}

template <typename T>
Tensor<T> apply_plan(const SamplingPlan<T>& plan, const Tensor<T>& x) {
  require(x.rank() >= 2, "apply_plan: rank must be >= 2");
  Shape s = x.shape();
  require(s[s.size() - 2] == plan.in_h && s[s.size() - 1] == plan.in_w,
          "apply_plan: input " + shape_string(s) + " does not match plan input " + std::to_string(plan.in_h) + "x" +
              std::to_string(plan.in_w));
  const std::size_t planes = x.size() / (static_cast<std::size_t>(plan.in_h) * plan.in_w);
  s[s.size() - 2] = plan.out_h;
  s[s.size() - 1] = plan.out_w;
  Tensor<T> out(s);
  const std::size_t in_plane = static_cast<std::size_t>(plan.in_h) * plan.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(plan.out_h) * plan.out_w;
  for (std::size_t p = 0; p < planes; ++p) plan.apply(x.data() + p * in_plane, out.data() + p * out_plane);
  return out;
}

namespace ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor<T> g = self.grad;
      for (auto& v : g.values()) v = -v;
      self.parents[1]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const Tensor<T>& other = self.parents[1 - k]->value;
      Tensor<T> g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
      p->accumulate(g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (auto& v : g.values()) v *= s;
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T>& g = p->grad_buffer();
    const T s = self.grad[0];
    for (auto& v : g.values()) v += s;
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  double acc = 0;
  for (T v : a.value().values()) acc += static_cast<double>(v) * v;
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T>& g = p->grad_buffer();
    const T s = 2 * self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * p->value[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > 0 ? v : T(0);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T>& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > 0) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> unit_tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(0.5) * (std::tanh(v) + T(1));
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * 2 * y * (1 - y);
    }
  });
}

template <typename T>
Var<T> mul_mask(const Var<T>& a, const Tensor<T>& mask) {
  const Dims4 d = dims4(a.shape(), "mul_mask");
  require(mask.size() == d.plane() && mask.dim(mask.rank() - 1) == d.w,
          "mul_mask: mask " + shape_string(mask.shape()) + " does not match " + shape_string(a.shape()));
  Tensor<T> out = a.value();
  const std::size_t plane = d.plane();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i % plane];
  return make_op<T>(std::move(out), {a}, [mask, plane](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i % plane];
  });
}

template <typename T>
Var<T> channel_affine(const Var<T>& a, const std::vector<T>& scale_c, const std::vector<T>& shift_c) {
  const Dims4 d = dims4(a.shape(), "channel_affine");
  require(static_cast<int>(scale_c.size()) == d.c && static_cast<int>(shift_c.size()) == d.c,
          "channel_affine: coefficient count must equal channel count");
  Tensor<T> out = a.value();
  const std::size_t plane = d.plane();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = (i / plane) % d.c;
    out[i] = out[i] * scale_c[c] + shift_c[c];
  }
  return make_op<T>(std::move(out), {a}, [scale_c, plane, ch = d.c](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * scale_c[(i / plane) % ch];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Dims4 da = dims4(a.shape(), "concat_channels");
  const Dims4 db = dims4(b.shape(), "concat_channels");
  require(da.n == db.n && da.h == db.h && da.w == db.w,
          "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out({da.n, da.c + db.c, da.h, da.w});
  const std::size_t sa = da.c * da.plane(), sb = db.c * db.plane();
  for (int n = 0; n < da.n; ++n) {
    std::copy_n(a.value().data() + n * sa, sa, out.data() + n * (sa + sb));
    std::copy_n(b.value().data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
  }
  return make_op<T>(std::move(out), {a, b}, [sa, sb, batch = da.n](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      Tensor<T>& g = p->grad_buffer();
      const std::size_t len = k == 0 ? sa : sb;
      const std::size_t off = k == 0 ? 0 : sa;
      for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < len; ++i) g[n * len + i] += self.grad[n * (sa + sb) + off + i];
    }
  });
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_batch: no inputs");
  Dims4 d0 = dims4(parts[0].shape(), "concat_batch");
  int total = 0;
  for (const auto& p : parts) {
    const Dims4 d = dims4(p.shape(), "concat_batch");
    require(d.c == d0.c && d.h == d0.h && d.w == d0.w, "concat_batch: mismatched item shapes");
    total += d.n;
  }
  Tensor<T> out({total, d0.c, d0.h, d0.w});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_op<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t o = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        Tensor<T>& g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[o + i];
      }
      o += len;
    }
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& a, int n) {
  const Dims4 d = dims4(a.shape(), "slice_batch");
  require(n >= 0 && n < d.n, "slice_batch: index " + std::to_string(n) + " out of range");
  const std::size_t len = d.c * d.plane();
  Tensor<T> out({1, d.c, d.h, d.w});
  std::copy_n(a.value().data() + n * len, len, out.data());
  return make_op<T>(std::move(out), {a}, [n, len](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < len; ++i) g[n * len + i] += self.grad[i];
  });
}

template <typename T>
Var<T> crop(const Var<T>& a, int top, int left, int height, int width) {
  const Dims4 d = dims4(a.shape(), "crop");
  require(top >= 0 && left >= 0 && height > 0 && width > 0 && top + height <= d.h && left + width <= d.w,
          "crop: window outside " + shape_string(a.shape()));
  Tensor<T> out({d.n, d.c, height, width});
  for (int p = 0; p < d.n * d.c; ++p)
    for (int y = 0; y < height; ++y)
      std::copy_n(a.value().data() + (static_cast<std::size_t>(p) * d.h + top + y) * d.w + left, width,
                  out.data() + (static_cast<std::size_t>(p) * height + y) * width);
  return make_op<T>(std::move(out), {a}, [d, top, left, height, width](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < d.n * d.c; ++p)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          g[(static_cast<std::size_t>(p) * d.h + top + y) * d.w + left + x] +=
              self.grad[(static_cast<std::size_t>(p) * height + y) * width + x];
  });
}

template <typename T>
Var<T> pad(const Var<T>& a, int top, int bottom, int left, int right, BorderPad mode) {
  const Dims4 d = dims4(a.shape(), "pad");
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad: negative amount");
  auto rows = border_map(d.h, top, bottom, mode);
  auto cols = border_map(d.w, left, right, mode);
  const int oh = static_cast<int>(rows.size()), ow = static_cast<int>(cols.size());
  Tensor<T> out({d.n, d.c, oh, ow});
  for (int p = 0; p < d.n * d.c; ++p) {
    const T* src = a.value().data() + static_cast<std::size_t>(p) * d.plane();
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        dst[y * ow + x] = (rows[y] >= 0 && cols[x] >= 0) ? src[rows[y] * d.w + cols[x]] : T(0);
  }
  return make_op<T>(std::move(out), {a}, [d, rows, cols](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const int oh = static_cast<int>(rows.size()), ow = static_cast<int>(cols.size());
    for (int p = 0; p < d.n * d.c; ++p) {
      T* dst = g.data() + static_cast<std::size_t>(p) * d.plane();
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          if (rows[y] >= 0 && cols[x] >= 0) dst[rows[y] * d.w + cols[x]] += src[y * ow + x];
    }
  });
}

template <typename T>
Var<T> apply_plan(const Var<T>& x, const SamplingPlan<T>& plan) {
  Tensor<T> out = fdb::apply_plan(plan, x.value());
  return make_op<T>(std::move(out), {x}, [plan](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const std::size_t in_plane = static_cast<std::size_t>(plan.in_h) * plan.in_w;
    const std::size_t out_plane = static_cast<std::size_t>(plan.out_h) * plan.out_w;
    const std::size_t planes = g.size() / in_plane;
    for (std::size_t p = 0; p < planes; ++p)
      plan.apply_adjoint(self.grad.data() + p * out_plane, g.data() + p * in_plane);
  });
}

template <typename T>
Var<T> interpolation_pad(const Var<T>& a, int out_h, int out_w) {
  const Dims4 d = dims4(a.shape(), "interpolation_pad");
  require(out_h >= d.h && out_w >= d.w,
          "interpolation_pad: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " smaller than input " + shape_string(a.shape()));
  if (out_h == d.h && out_w == d.w) return a;
  SamplingPlan<T> plan = resize_plan<T>(d.h, d.w, out_h, out_w);
  const int top = (out_h - d.h) / 2;
  const int left = (out_w - d.w) / 2;
  for (int y = 0; y < d.h; ++y) {
    for (int x = 0; x < d.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y + top) * out_w + (x + left);
      const int src = y * d.w + x;
      plan.index[i] = {src, src, src, src};
      plan.weight[i] = {T(1), T(0), T(0), T(0)};
    }
  }
  return apply_plan(a, plan);
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& a, int factor) {
  const Dims4 d = dims4(a.shape(), "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int oh = d.h * factor, ow = d.w * factor;
  Tensor<T> out({d.n, d.c, oh, ow});
  for (int p = 0; p < d.n * d.c; ++p) {
    const T* src = a.value().data() + static_cast<std::size_t>(p) * d.plane();
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / factor) * d.w + x / factor];
  }
  return make_op<T>(std::move(out), {a}, [d, factor](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const int oh = d.h * factor, ow = d.w * factor;
    for (int p = 0; p < d.n * d.c; ++p) {
      T* dst = g.data() + static_cast<std::size_t>(p) * d.plane();
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) dst[(y / factor) * d.w + x / factor] += src[y * ow + x];
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& a) {
  const Dims4 d = dims4(a.shape(), "avg_pool2");
  const int oh = d.h / 2, ow = d.w / 2;
  require(oh >= 1 && ow >= 1, "avg_pool2: input too small " + shape_string(a.shape()));
  Tensor<T> out({d.n, d.c, oh, ow});
  for (int p = 0; p < d.n * d.c; ++p) {
    const T* src = a.value().data() + static_cast<std::size_t>(p) * d.plane();
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const T* s = src + (2 * y) * d.w + 2 * x;
        dst[y * ow + x] = T(0.25) * (s[0] + s[1] + s[d.w] + s[d.w + 1]);
      }
  }
  return make_op<T>(std::move(out), {a}, [d, oh, ow](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < d.n * d.c; ++p) {
      T* dst = g.data() + static_cast<std::size_t>(p) * d.plane();
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const T q = T(0.25) * src[y * ow + x];
          T* s = dst + (2 * y) * d.w + 2 * x;
          s[0] += q;
          s[1] += q;
          s[d.w] += q;
          s[d.w + 1] += q;
        }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int zero_pad) {
  const Dims4 d = dims4(x.shape(), "conv2d");
  const Dims4 k = dims4(weight.shape(), "conv2d weight");
  require(k.c == d.c, "conv2d: kernel expects " + std::to_string(k.c) + " input channels, got " + std::to_string(d.c));
  require(k.h == k.w, "conv2d: square kernels only");
  require(stride >= 1 && zero_pad >= 0, "conv2d: invalid stride/padding");
  const int ks = k.h;
  require(d.h + 2 * zero_pad >= ks && d.w + 2 * zero_pad >= ks,
          "conv2d: input " + shape_string(x.shape()) + " smaller than kernel " + std::to_string(ks));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(k.n), "conv2d: bias size mismatch");

  const int oh = (d.h + 2 * zero_pad - ks) / stride + 1;
  const int ow = (d.w + 2 * zero_pad - ks) / stride + 1;
  const int out_c = k.n;
  const int patch = d.c * ks * ks;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

  const int tile_rows = conv_tile_rows(patch, oh, ow);
  const int plane_out = static_cast<int>(out_plane);

  Tensor<T> out({d.n, out_c, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(patch) * tile_rows * ow);
  for (int n = 0; n < d.n; ++n) {
    const T* im = x.value().data() + static_cast<std::size_t>(n) * d.c * d.plane();
    T* y = out.data() + static_cast<std::size_t>(n) * out_c * out_plane;
    for (int oy0 = 0; oy0 < oh; oy0 += tile_rows) {
      const int oy1 = std::min(oh, oy0 + tile_rows);
      const int len = (oy1 - oy0) * ow;
      im2col(im, d.c, d.h, d.w, ks, stride, zero_pad, oy0, oy1, ow, col.data());
      blas::gemm(false, false, out_c, len, patch, T(1), weight.value().data(), patch, col.data(), len, T(0),
                 y + static_cast<std::size_t>(oy0) * ow, plane_out);
    }
    if (has_bias)
      for (int c = 0; c < out_c; ++c) {
        const T b = bias.value()[c];
        T* row = y + c * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) row[i] += b;
      }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    auto& xin = self.parents[0];
    auto& win = self.parents[1];
    std::vector<T> buf(static_cast<std::size_t>(patch) * tile_rows * ow);
    for (int n = 0; n < d.n; ++n) {
      const T* gy = self.grad.data() + static_cast<std::size_t>(n) * out_c * out_plane;
      const std::size_t in_off = static_cast<std::size_t>(n) * d.c * d.plane();
      for (int oy0 = 0; oy0 < oh; oy0 += tile_rows) {
        const int oy1 = std::min(oh, oy0 + tile_rows);
        const int len = (oy1 - oy0) * ow;
        const T* gy_tile = gy + static_cast<std::size_t>(oy0) * ow;
        if (xin->requires_grad) {
          blas::gemm(true, false, patch, len, out_c, T(1), win->value.data(), patch, gy_tile, plane_out, T(0),
                     buf.data(), len);
          col2im(buf.data(), d.c, d.h, d.w, ks, stride, zero_pad, oy0, oy1, ow, xin->grad_buffer().data() + in_off);
        }
        if (win->requires_grad) {
          im2col(xin->value.data() + in_off, d.c, d.h, d.w, ks, stride, zero_pad, oy0, oy1, ow, buf.data());
          blas::gemm(false, true, out_c, patch, len, T(1), gy_tile, plane_out, buf.data(), len, T(1),
                     win->grad_buffer().data(), patch);
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        Tensor<T>& gb = self.parents[2]->grad_buffer();
        for (int c = 0; c < out_c; ++c) {
          double acc = 0;
          const T* row = gy + c * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) acc += row[i];
          gb[c] += static_cast<T>(acc);
        }
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Dims4 d = dims4(x.shape(), "instance_norm");
  require(gamma.value().size() == static_cast<std::size_t>(d.c) && beta.value().size() == static_cast<std::size_t>(d.c),
          "instance_norm: affine parameter size mismatch");
  const std::size_t m = d.plane();
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(d.n) * d.c);
  Tensor<T> out(x.shape());
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * d.c + c) * m;
      const T* src = x.value().data() + off;
      double mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std[n * d.c + c] = static_cast<T>(istd);
      const T g = gamma.value()[c], b = beta.value()[c];
      for (std::size_t i = 0; i < m; ++i) {
        const T h = static_cast<T>((src[i] - mean) * istd);
        xhat[off + i] = h;
        out[off + i] = g * h + b;
      }
    }
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [d, m, xhat, inv_std](Node<T>& self) {
    auto& xin = self.parents[0];
    auto& gin = self.parents[1];
    auto& bin = self.parents[2];
    for (int n = 0; n < d.n; ++n) {
      for (int c = 0; c < d.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * d.c + c) * m;
        const T* gy = self.grad.data() + off;
        const T* h = xhat.data() + off;
        double sum_g = 0, sum_gh = 0;
        for (std::size_t i = 0; i < m; ++i) {
          sum_g += gy[i];
          sum_gh += static_cast<double>(gy[i]) * h[i];
        }
        if (gin->requires_grad) gin->grad_buffer()[c] += static_cast<T>(sum_gh);
        if (bin->requires_grad) bin->grad_buffer()[c] += static_cast<T>(sum_g);
        if (xin->requires_grad) {
          const T g = gin->value[c];
          const double k = static_cast<double>(g) * inv_std[n * d.c + c] / static_cast<double>(m);
          T* gx = xin->grad_buffer().data() + off;
          for (std::size_t i = 0; i < m; ++i)
            gx[i] += static_cast<T>(k * (static_cast<double>(m) * gy[i] - sum_g - h[i] * sum_gh));
        }
      }
    }
  });
}

template <typename T>
Var<T> gram(const Var<T>& x) {
  const Dims4 d = dims4(x.shape(), "gram");
  require(d.n == 1, "gram: batch size must be 1");
  const int hw = static_cast<int>(d.plane());
  Tensor<T> out({d.c, d.c});
  blas::gemm(false, true, d.c, d.c, hw, T(1), x.value().data(), hw, x.value().data(), hw, T(0), out.data(), d.c);
  return make_op<T>(std::move(out), {x}, [d, hw](Node<T>& self) {
    auto& xin = self.parents[0];
    Tensor<T> sym({d.c, d.c});
    for (int i = 0; i < d.c; ++i)
      for (int j = 0; j < d.c; ++j) sym[i * d.c + j] = self.grad[i * d.c + j] + self.grad[j * d.c + i];
    blas::gemm(false, false, d.c, hw, d.c, T(1), sym.data(), d.c, xin->value.data(), hw, T(1),
               xin->grad_buffer().data(), hw);
  });
}

template <typename T>
Var<T> warp(const Var<T>& x, const Tensor<T>& flow) {
  const Dims4 d = dims4(x.shape(), "warp");
  require(flow.rank() == 3 && flow.dim(0) == 2 && flow.dim(1) == d.h && flow.dim(2) == d.w,
          "warp: flow " + shape_string(flow.shape()) + " does not match input " + shape_string(x.shape()));
  return apply_plan(x, warp_plan(flow));
}

}  // namespace ops

#define FDB_INSTANTIATE_OPS(T)                                                                              \
  template struct SamplingPlan<T>;                                                                          \
  template SamplingPlan<T> resize_plan<T>(int, int, int, int);                                              \
  template SamplingPlan<T> warp_plan<T>(const Tensor<T>&);                                                  \
  template Tensor<T> apply_plan<T>(const SamplingPlan<T>&, const Tensor<T>&);                               \
  template Var<T> ops::add<T>(const Var<T>&, const Var<T>&);                                                \
  template Var<T> ops::sub<T>(const Var<T>&, const Var<T>&);                                                \
  template Var<T> ops::mul<T>(const Var<T>&, const Var<T>&);                                                \
  template Var<T> ops::scale<T>(const Var<T>&, T);                                                          \
  template Var<T> ops::sum<T>(const Var<T>&);                                                               \
  template Var<T> ops::sum_squares<T>(const Var<T>&);                                                       \
  template Var<T> ops::relu<T>(const Var<T>&);                                                              \
  template Var<T> ops::unit_tanh<T>(const Var<T>&);                                                         \
  template Var<T> ops::mul_mask<T>(const Var<T>&, const Tensor<T>&);                                        \
  template Var<T> ops::channel_affine<T>(const Var<T>&, const std::vector<T>&, const std::vector<T>&);      \
  template Var<T> ops::concat_channels<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> ops::concat_batch<T>(const std::vector<Var<T>>&);                                         \
  template Var<T> ops::slice_batch<T>(const Var<T>&, int);                                                  \
  template Var<T> ops::crop<T>(const Var<T>&, int, int, int, int);                                          \
  template Var<T> ops::pad<T>(const Var<T>&, int, int, int, int, BorderPad);                                \
  template Var<T> ops::interpolation_pad<T>(const Var<T>&, int, int);                                       \
  template Var<T> ops::upsample_nearest<T>(const Var<T>&, int);                                             \
  template Var<T> ops::avg_pool2<T>(const Var<T>&);                                                         \
  template Var<T> ops::conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                    \
  template Var<T> ops::instance_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                    \
  template Var<T> ops::gram<T>(const Var<T>&);                                                              \
  template Var<T> ops::warp<T>(const Var<T>&, const Tensor<T>&);                                            \
  template Var<T> ops::apply_plan<T>(const Var<T>&, const SamplingPlan<T>&);

FDB_INSTANTIATE_OPS(float)
FDB_INSTANTIATE_OPS(double)

}  // namespace fdb
