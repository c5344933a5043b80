#include "fdb/flow.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fdb/ops.hpp"

namespace fdb {

static_assert(std::endian::native == std::endian::little, ".flo I/O assumes a little-endian host");

FlowField::FlowField(Tensor<float> data) : data_(std::move(data)) {
  require(data_.rank() == 3 && data_.dim(0) == 2, "flow must be 2xHxW, got " + shape_string(data_.shape()));
  require(data_.dim(1) >= 1 && data_.dim(2) >= 1, "flow must be at least 1x1");
}

FlowField FlowField::constant(int height, int width, float u, float v) {
  Tensor<float> t({2, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < plane; ++i) {
    t[i] = u;
    t[plane + i] = v;
  }
  return FlowField(std::move(t));
}

ConfidenceMask::ConfidenceMask(Tensor<float> data) : data_(std::move(data)) {
  require(data_.rank() == 2, "confidence mask must be HxW, got " + shape_string(data_.shape()));
  for (float v : data_.values())
    if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::validation, "confidence values must lie in [0,1]");
}

namespace {

struct FloHeader {
  int width = 0;
  int height = 0;
  std::uintmax_t file_size = 0;
};

FloHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
  char head[12];
  in.read(head, sizeof head);
  if (in.gcount() != 12)
    fail(ErrorKind::format, "'" + path.string() + "' is truncated: expected a 12-byte header, got " +
                                std::to_string(in.gcount()) + " bytes");
  float sentinel;
  std::int32_t w, h;
  std::memcpy(&sentinel, head, 4);
  std::memcpy(&w, head + 4, 4);
  std::memcpy(&h, head + 8, 4);
  if (sentinel != kFloSentinel)
    fail(ErrorKind::format, "'" + path.string() + "' has flo sentinel " + std::to_string(sentinel) +
                                ", expected 202021.25");
  if (w < 1 || h < 1 || w > (1 << 16) || h > (1 << 16))
    fail(ErrorKind::format, "'" + path.string() + "' has implausible size " + std::to_string(w) + "x" + std::to_string(h));
  return {w, h, std::filesystem::file_size(path)};
}

std::ifstream open_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

Size2 read_flo_size(const std::filesystem::path& path) {
  std::ifstream in = open_flo(path);
  const FloHeader h = read_header(in, path);
  return {h.height, h.width};
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in = open_flo(path);
  const FloHeader h = read_header(in, path);
  const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
  const std::uintmax_t expected = plane * 8;
  const std::uintmax_t actual = h.file_size - 12;
  if (actual != expected)
    fail(ErrorKind::format, "'" + path.string() + "' payload is " + std::to_string(actual) + " bytes, expected " +
                                std::to_string(expected));
  std::vector<float> interleaved(plane * 2);
  in.read(reinterpret_cast<char*>(interleaved.data()), static_cast<std::streamsize>(expected));
  if (static_cast<std::uintmax_t>(in.gcount()) != expected)
    fail(ErrorKind::format, "'" + path.string() + "' payload is " + std::to_string(in.gcount()) +
                                " bytes, expected " + std::to_string(expected));
  Tensor<float> t({2, h.height, h.width});
  for (std::size_t i = 0; i < plane; ++i) {
    t[i] = interleaved[2 * i];
    t[plane + i] = interleaved[2 * i + 1];
  }
  return FlowField(std::move(t));
}

void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  if (!all_finite(flow.data())) fail(ErrorKind::validation, "flow field contains non-finite values");
  const std::size_t plane = static_cast<std::size_t>(flow.width()) * flow.height();
  std::vector<float> interleaved(plane * 2);
  for (std::size_t i = 0; i < plane; ++i) {
    interleaved[2 * i] = flow.data()[i];
    interleaved[2 * i + 1] = flow.data()[plane + i];
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  const float sentinel = kFloSentinel;
  const std::int32_t w = flow.width(), h = flow.height();
  out.write(reinterpret_cast<const char*>(&sentinel), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size() * 4));
  if (!out) fail(ErrorKind::io, "failed writing '" + path.string() + "'");
}

Tensor<float> backward_warp(const Tensor<float>& chw, const FlowField& flow) {
  require(chw.rank() >= 2, "backward_warp expects a ...xHxW tensor");
  const int h = chw.dim(chw.rank() - 2), w = chw.dim(chw.rank() - 1);
  require(h == flow.height() && w == flow.width(),
          "backward_warp: input " + shape_string(chw.shape()) + " does not match flow " +
              shape_string(flow.data().shape()));
  return apply_plan(warp_plan(flow.data()), chw);
}

Frame backward_warp(const Frame& frame, const FlowField& flow) { return Frame(backward_warp(frame.data(), flow)); }

ConfidenceMask confidence_mask(const FlowField& forward, const FlowField& backward) {
  require(forward.size() == backward.size(), "confidence_mask: forward and backward flows differ in size");
  const int h = backward.height(), w = backward.width();
  Tensor<float> mask({h, w}, 1.0f);

  // Other-direction flow sampled at each pixel's correspondence.
  const auto plan = warp_plan(backward.data());
  const Tensor<float> other = apply_plan(plan, forward.data());
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  auto at = [&](const Tensor<float>& t, int c, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(t[c * plane + static_cast<std::size_t>(y) * w + x]);
  };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double u = backward.data()[i], v = backward.data()[plane + i];
      const double ty = y + v, tx = x + u;
      if (ty < 0 || ty > h - 1 || tx < 0 || tx > w - 1) {
        mask[i] = 0.0f;
        continue;
      }
      const double ou = other[i], ov = other[plane + i];
      const double lhs = (u + ou) * (u + ou) + (v + ov) * (v + ov);
      const double rhs = 0.01 * (u * u + v * v + ou * ou + ov * ov) + 0.5;
      if (lhs > rhs) {
        mask[i] = 0.0f;
        continue;
      }
      double grad2 = 0;
      for (int c = 0; c < 2; ++c) {
        const double dx = 0.5 * (at(backward.data(), c, y, x + 1) - at(backward.data(), c, y, x - 1));
        const double dy = 0.5 * (at(backward.data(), c, y + 1, x) - at(backward.data(), c, y - 1, x));
        grad2 += dx * dx + dy * dy;
      }
      if (grad2 > 0.01 * (u * u + v * v) + 0.002) mask[i] = 0.0f;
    }
  }
  return ConfidenceMask(std::move(mask));
}

ConfidenceMask read_mask(const std::filesystem::path& path) {
  return ConfidenceMask(read_pgm(path));
}

void write_mask(const ConfidenceMask& mask, const std::filesystem::path& path) { write_pgm(mask.data(), path); }

FlowField resize_flow(const FlowField& flow, Size2 size) {
  if (flow.size() == size) return flow;
  Tensor<float> r = apply_plan(resize_plan<float>(flow.height(), flow.width(), size.height, size.width), flow.data());
  const std::size_t plane = static_cast<std::size_t>(size.height) * size.width;
  const float sx = static_cast<float>(size.width) / flow.width();
  const float sy = static_cast<float>(size.height) / flow.height();
  for (std::size_t i = 0; i < plane; ++i) {
    r[i] *= sx;
    r[plane + i] *= sy;
  }
  return FlowField(std::move(r));
}

ConfidenceMask resize_mask(const ConfidenceMask& mask, Size2 size) {
  if (mask.size() == size) return mask;
  const Tensor<float> m = mask.data().reshaped({1, mask.height(), mask.width()});
  Tensor<float> r = apply_plan(resize_plan<float>(mask.height(), mask.width(), size.height, size.width), m);
  return ConfidenceMask(r.reshaped({size.height, size.width}));
}

}  // namespace fdb
