#pragma once

// Reference implementations written directly from the formulas, kept
// independent of the library's sampling plans and BLAS paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "fdb/autograd.hpp"
#include "fdb/tensor.hpp"

namespace fdb::testing {

// Bilinear sample of one H×W plane at (y, x), coordinates clamped to the
// pixel-centre extent.
inline double bilinear_at(const std::vector<double>& plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  auto p = [&](int yy, int xx) { return plane[static_cast<std::size_t>(yy) * w + xx]; };
  return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
}

template <typename T>
std::vector<double> plane_of(const Tensor<T>& chw, int c) {
  const int h = chw.dim(chw.rank() - 2), w = chw.dim(chw.rank() - 1);
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = chw[static_cast<std::size_t>(c) * h * w + i];
  return out;
}

// out(c,y,x) = in(c, y + v, x + u), clamp-to-edge.
template <typename T>
Tensor<double> warp_oracle(const Tensor<T>& chw, const Tensor<T>& flow) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<double> out({c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int k = 0; k < c; ++k) {
    const auto p = plane_of(chw, k);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        out[k * plane + i] = bilinear_at(p, h, w, y + flow[plane + i], x + flow[i]);
      }
  }
  return out;
}

// Half-pixel-centre bilinear resize of every plane of a C×H×W tensor.
template <typename T>
Tensor<double> resize_oracle(const Tensor<T>& chw, int out_h, int out_w) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<double> out({c, out_h, out_w});
  for (int k = 0; k < c; ++k) {
    const auto p = plane_of(chw, k);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const double sy = (y + 0.5) * h / out_h - 0.5, sx = (x + 0.5) * w / out_w - 0.5;
        out[(static_cast<std::size_t>(k) * out_h + y) * out_w + x] = bilinear_at(p, h, w, sy, sx);
      }
  }
  return out;
}

// G[i][j] = Σ_p F[i][p] F[j][p] over a C×(H·W) flattening.
template <typename T>
std::vector<std::vector<double>> gram_oracle(const Tensor<T>& chw) {
  const int c = chw.dim(0);
  const std::size_t n = chw.size() / c;
  std::vector<std::vector<double>> g(c, std::vector<double>(c, 0.0));
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      for (std::size_t p = 0; p < n; ++p) g[i][j] += static_cast<double>(chw[i * n + p]) * chw[j * n + p];
  return g;
}

// Middlebury bytes assembled field by field from the format description.
inline std::string flo_bytes(float sentinel, std::int32_t width, std::int32_t height, const std::vector<float>& uv) {
  std::string out;
  auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  put(&sentinel, 4);
  put(&width, 4);
  put(&height, 4);
  for (float f : uv) put(&f, 4);
  return out;
}

// Largest relative deviation between the recorded gradient of `f` with
// respect to each input and central finite differences. With `max_coords`
// set, only an evenly strided subset of each input's coordinates is probed.
struct GradCheck {
  double max_rel_error = 0;
  double max_abs_grad = 0;
};

inline GradCheck gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                           const std::vector<Tensor<double>>& inputs, double eps = 1e-6,
                           std::size_t max_coords = 0) {
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t));
  backward(f(leaves));
  GradCheck r;
  double max_diff = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = leaves[k].grad();
    const std::size_t size = inputs[k].size();
    const std::size_t step = max_coords > 0 && size > max_coords ? (size + max_coords - 1) / max_coords : 1;
    for (std::size_t i = (k * 7) % step; i < size; i += step) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> xs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t[i] += delta;
          xs.push_back(Var<double>::constant(std::move(t)));
        }
        return f(xs).item();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      r.max_abs_grad = std::max({r.max_abs_grad, std::abs(numeric), std::abs(analytic[i])});
    }
  }
  r.max_rel_error = r.max_abs_grad > 0 ? max_diff / r.max_abs_grad : max_diff;
  return r;
}

}  // namespace fdb::testing
