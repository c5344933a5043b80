#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <png.h>

namespace fdb::testing {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Layer {
  bool disc = true;
  double cx = 0, cy = 0;   // position at t = 0
  double vx = 0, vy = 0;   // pixels per frame
  double rx = 0, ry = 0;   // radius or half extents
  double color[3] = {0, 0, 0};
  double freq = 0, angle = 0;
};

struct Scene {
  double bg_vx = 0, bg_vy = 0;
  double phase[3][3] = {};
  std::vector<Layer> objects;
};

Scene make_scene(const SyntheticClipSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s;
  s.bg_vx = 0.8 + 0.8 * u(rng);
  s.bg_vy = -0.5 + 1.0 * u(rng);
  for (auto& row : s.phase)
    for (double& p : row) p = 2 * kPi * u(rng);
  const int count = 3;
  for (int i = 0; i < count; ++i) {
    Layer l;
    l.disc = i % 2 == 0;
    l.cx = spec.width * (0.2 + 0.6 * u(rng));
    l.cy = spec.height * (0.25 + 0.5 * u(rng));
    l.vx = -2.5 + 5.0 * u(rng);
    l.vy = -1.2 + 2.4 * u(rng);
    l.rx = spec.height * (0.10 + 0.08 * u(rng));
    l.ry = l.disc ? l.rx : spec.height * (0.08 + 0.08 * u(rng));
    for (double& c : l.color) c = 0.15 + 0.7 * u(rng);
    l.freq = 0.3 + 0.4 * u(rng);
    l.angle = kPi * u(rng);
    s.objects.push_back(l);
  }
  return s;
}

double background(const Scene& s, int c, double x, double y) {
  return 0.5 + 0.18 * std::sin(0.045 * x + 0.031 * y + s.phase[c][0]) +
         0.12 * std::sin(0.11 * x - 0.083 * y + s.phase[c][1]) + 0.08 * std::sin(0.23 * x + 0.19 * y + s.phase[c][2]);
}

bool covers(const Layer& l, double dx, double dy) {
  if (l.disc) return dx * dx + dy * dy <= l.rx * l.rx;
  return std::abs(dx) <= l.rx && std::abs(dy) <= l.ry;
}

double object_value(const Layer& l, int c, double dx, double dy) {
  const double a = std::cos(l.angle) * dx + std::sin(l.angle) * dy;
  return std::clamp(l.color[c] + 0.15 * std::sin(l.freq * a + c), 0.0, 1.0);
}

// Index of the top-most object covering (x, y) at time t, or -1 for background.
int visible(const Scene& s, double x, double y, int t) {
  for (int i = static_cast<int>(s.objects.size()) - 1; i >= 0; --i) {
    const Layer& l = s.objects[i];
    if (covers(l, x - (l.cx + t * l.vx), y - (l.cy + t * l.vy))) return i;
  }
  return -1;
}

}  // namespace

SyntheticClip make_synthetic_clip(const SyntheticClipSpec& spec) {
  const Scene scene = make_scene(spec);
  const int h = spec.height, w = spec.width;
  SyntheticClip clip;
  clip.frames.source_id = spec.id;
  clip.frames.frame_rate = 24.0;
  std::mt19937_64 noise_rng(spec.seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);
  for (int t = 0; t < spec.frames; ++t) {
    Tensor<float> img({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int k = visible(scene, x, y, t);
        for (int c = 0; c < 3; ++c) {
          double v;
          if (k < 0) {
            v = background(scene, c, x - t * scene.bg_vx, y - t * scene.bg_vy);
          } else {
            const Layer& l = scene.objects[k];
            v = object_value(l, c, x - (l.cx + t * l.vx), y - (l.cy + t * l.vy));
          }
          if (spec.noise > 0) v += noise(noise_rng);
          img[(static_cast<std::size_t>(c) * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    clip.frames.frames.emplace_back(std::move(img));
  }
  auto velocity = [&](int k, double sign) {
    const double vx = k < 0 ? scene.bg_vx : scene.objects[k].vx;
    const double vy = k < 0 ? scene.bg_vy : scene.objects[k].vy;
    return std::pair<float, float>{static_cast<float>(sign * vx), static_cast<float>(sign * vy)};
  };
  for (int t = 0; t + 1 < spec.frames; ++t) {
    Tensor<float> back({2, h, w}), fwd({2, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const auto [bu, bv] = velocity(visible(scene, x, y, t + 1), -1.0);
        const auto [fu, fv] = velocity(visible(scene, x, y, t), 1.0);
        back[i] = bu;
        back[plane + i] = bv;
        fwd[i] = fu;
        fwd[plane + i] = fv;
      }
    clip.backward.emplace_back(std::move(back));
    clip.forward.emplace_back(std::move(fwd));
  }
  return clip;
}

Frame make_style_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double phase[3], swirl = 4 + 4 * u(rng);
  for (double& p : phase) p = 2 * kPi * u(rng);
  Tensor<float> img({3, height, width});
  const double cx = width * 0.5, cy = height * 0.5;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = (x - cx) / height, dy = (y - cy) / height;
      const double r = std::sqrt(dx * dx + dy * dy);
      const double th = std::atan2(dy, dx);
      const double stripes = std::sin(40.0 * r + swirl * th);
      const double blobs = std::sin(0.35 * x) * std::sin(0.29 * y);
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.4 * std::sin(3.0 * stripes + phase[c] + 1.5 * blobs);
        img[(static_cast<std::size_t>(c) * height + y) * width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return Frame(std::move(img));
}

void write_clip(const SyntheticClip& clip, const std::filesystem::path& root, int first, int last, bool with_flow) {
  namespace fs = std::filesystem;
  const std::string id = clip.frames.source_id;
  const fs::path frames_dir = root / id;
  const fs::path flow_dir = fs::path(root.string() + "_flow") / id;
  const fs::path mask_dir = fs::path(root.string() + "_mask") / id;
  fs::create_directories(frames_dir);
  char name[32];
  for (int t = first; t < last; ++t) {
    std::snprintf(name, sizeof name, "%05d.png", t - first);
    save_frame(clip.frames.frames[t], frames_dir / name);
  }
  if (!with_flow) return;
  fs::create_directories(flow_dir / "forward");
  fs::create_directories(mask_dir);
  for (int t = first; t + 1 < last; ++t) {
    std::snprintf(name, sizeof name, "%05d", t - first);
    write_flo(clip.backward[t], flow_dir / (std::string(name) + ".flo"));
    write_flo(clip.forward[t], flow_dir / "forward" / (std::string(name) + ".flo"));
    write_mask(confidence_mask(clip.forward[t], clip.backward[t]), mask_dir / (std::string(name) + ".pgm"));
  }
}

TempDir::TempDir(const std::string& prefix) {
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    char suffix[20];
    std::snprintf(suffix, sizeof suffix, "%08x", rd());
    const auto p = std::filesystem::temp_directory_path() / (prefix + "-" + suffix);
    if (std::filesystem::create_directory(p)) {
      path_ = p;
      return;
    }
  }
  fail(ErrorKind::io, "cannot create a temporary directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template Tensor<float> random_tensor<float>(const Shape&, std::uint64_t, double, double);
template Tensor<double> random_tensor<double>(const Shape&, std::uint64_t, double, double);

Frame random_frame(int height, int width, std::uint64_t seed) {
  return Frame(random_tensor<float>({3, height, width}, seed, 0.0, 1.0));
}

void write_png(const std::filesystem::path& path, int width, int height, int channels, int depth,
               const std::vector<std::uint16_t>& samples) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorKind::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  const int type = channels == 1   ? PNG_COLOR_TYPE_GRAY
                   : channels == 2 ? PNG_COLOR_TYPE_GRAY_ALPHA
                   : channels == 3 ? PNG_COLOR_TYPE_RGB
                                   : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, width, height, depth, type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bytes = depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels * bytes);
  for (int y = 0; y < height; ++y) {
    for (int i = 0; i < width * channels; ++i) {
      const std::uint16_t v = samples[static_cast<std::size_t>(y) * width * channels + i];
      if (bytes == 1) {
        row[i] = static_cast<unsigned char>(v);
      } else {
        row[2 * i] = static_cast<unsigned char>(v >> 8);
        row[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_frames(const std::vector<Frame>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t t = 0; t < frames.size(); ++t) {
    std::snprintf(name, sizeof name, "%05zu.png", t);
    save_frame(frames[t], dir / name);
  }
}

}  // namespace fdb::testing
