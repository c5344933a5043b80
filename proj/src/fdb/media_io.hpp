#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fdb/tensor.hpp"

namespace fdb {

struct Size2 {
  int height = 0;
  int width = 0;
  bool operator==(const Size2&) const = default;
};

// An RGB image stored as a 3×H×W float tensor. Loading yields values in
// [0,1]; intermediate results may leave that range and are clamped on save.
class Frame {
 public:
  Frame() = default;
  explicit Frame(Tensor<float> data);
  static Frame zeros(int height, int width) { return Frame(Tensor<float>({3, height, width})); }

  int height() const { return data_.dim(1); }
  int width() const { return data_.dim(2); }
  Size2 size() const { return {height(), width()}; }
  const Tensor<float>& data() const { return data_; }
  Tensor<float>& data() { return data_; }
  // 1×3×H×W view for the network and loss code.
  Tensor<float> batched() const { return data_.reshaped({1, 3, height(), width()}); }

  bool operator==(const Frame&) const = default;

 private:
  Tensor<float> data_;
};

struct FrameSequence {
  std::vector<Frame> frames;
  std::string source_id;
  double frame_rate = 0.0;  // metadata only

  std::size_t length() const { return frames.size(); }
  // Throws contract error unless non-empty with uniform frame sizes.
  void validate() const;
};

struct ClipEntry {
  std::string id;
  std::vector<std::filesystem::path> frame_paths;
  std::vector<std::filesystem::path> flow_paths;  // pair i = frames (i, i+1); empty when absent
  std::vector<std::filesystem::path> mask_paths;
  bool pairable = false;  // at least two frames
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<ClipEntry> clips;
  std::vector<std::string> warnings;

  bool has_flow() const;  // every pairable clip carries flow and masks
  const ClipEntry& clip(const std::string& id) const;
};

// Decodes PNG (8/16-bit) or JPEG into [0,1]; optional bilinear resize.
Frame load_frame(const std::filesystem::path& path, std::optional<Size2> target_size = std::nullopt);
// Writes an 8-bit RGB PNG, clamping values to [0,1] and rounding.
void save_frame(const Frame& frame, const std::filesystem::path& path);

Frame resize_frame(const Frame& frame, Size2 size);

// Binary greyscale (P5, maxval 255) used for confidence masks.
Tensor<float> read_pgm(const std::filesystem::path& path);   // values / 255, shape H×W
void write_pgm(const Tensor<float>& plane, const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

// Indexes `<root>/<clip>/<frame>.{png,jpg}` with optional
// `<root>_flow/<clip>/*.flo` and `<root>_mask/<clip>/*.pgm`. A root holding
// images directly is indexed as a single clip.
DatasetIndex index_dataset(const std::filesystem::path& root);

struct TupleRef {
  std::size_t clip = 0;
  int start = 0;
  int interval = 1;
  int length = 0;
  int frame(int i) const { return start + i * interval; }
};

// Every (clip, start) whose stride-`interval` tuple of `tuple_len` frames fits.
std::vector<TupleRef> enumerate_tuples(const DatasetIndex& index, int tuple_len, int interval);

TupleRef sample_tuple_ref(const DatasetIndex& index, int tuple_len, int interval, std::uint64_t seed);

FrameSequence load_tuple(const DatasetIndex& index, const TupleRef& ref, std::optional<Size2> target_size = std::nullopt);

FrameSequence sample_frame_tuple(const DatasetIndex& index, int tuple_len, int interval, std::uint64_t seed,
                                 std::optional<Size2> target_size = std::nullopt);

FrameSequence load_clip(const ClipEntry& clip, std::optional<Size2> target_size = std::nullopt);

}  // namespace fdb
