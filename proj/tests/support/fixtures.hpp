#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdb/flow.hpp"
#include "fdb/media_io.hpp"

namespace fdb::testing {

// Procedural video: a smooth multi-frequency background panning at a fixed
// velocity with textured discs and boxes moving on top. Because every layer
// translates rigidly, the flows between consecutive frames are known exactly.
struct SyntheticClipSpec {
  std::string id = "clip";
  int frames = 30;
  int height = 128;
  int width = 192;
  std::uint64_t seed = 1;
  double noise = 0.0;  // i.i.d. uniform noise amplitude added per frame
};

struct SyntheticClip {
  FrameSequence frames;
  std::vector<FlowField> backward;  // pair t: warps frame t onto frame t+1 (frame t+1 grid)
  std::vector<FlowField> forward;   // pair t: frame t → t+1 (frame t grid)
};

SyntheticClip make_synthetic_clip(const SyntheticClipSpec& spec);

// High-contrast swirl pattern used as the style image.
Frame make_style_image(int height, int width, std::uint64_t seed = 3);

// Writes `<root>/<id>/NNNNN.png`, `<root>_flow/<id>/NNNNN.flo` (backward),
// `<root>_flow/<id>/forward/NNNNN.flo` and `<root>_mask/<id>/NNNNN.pgm` for
// frames [first, last). Flows and masks cover the pairs inside that range.
void write_clip(const SyntheticClip& clip, const std::filesystem::path& root, int first, int last, bool with_flow);

// Fresh directory under the system temp dir, removed by the destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Random tensor with values uniform in [lo, hi).
template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

Frame random_frame(int height, int width, std::uint64_t seed);

// Raw PNG writer for inputs the library never produces itself (grey, RGBA,
// 16-bit). `samples` holds height·width·channels values, big-endian order is
// handled here.
void write_png(const std::filesystem::path& path, int width, int height, int channels, int depth,
               const std::vector<std::uint16_t>& samples);

// Writes `frames` as `<dir>/NNNNN.png`.
void write_frames(const std::vector<Frame>& frames, const std::filesystem::path& dir);

}  // namespace fdb::testing
