#include "fdb/media_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>

#include "fdb/flow.hpp"
#include "fdb/ops.hpp"

namespace fdb {

namespace fs = std::filesystem;

Frame::Frame(Tensor<float> data) : data_(std::move(data)) {
  require(data_.rank() == 3 && data_.dim(0) == 3,
          "frame data must be 3xHxW, got " + shape_string(data_.shape()));
  require(data_.dim(1) >= 1 && data_.dim(2) >= 1, "frame must be at least 1x1");
}

void FrameSequence::validate() const {
  require(!frames.empty(), "frame sequence '" + source_id + "' is empty");
  for (const auto& f : frames)
    require(f.size() == frames.front().size(), "frame sequence '" + source_id + "' has mixed frame sizes");
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  return f;
}

struct Decoded {
  int height = 0, width = 0;
  Tensor<float> data;  // empty when only the header was requested
};

Decoded decode_png(const fs::path& path, bool header_only) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::runtime, "libpng initialisation failed");
  }
  Decoded out;
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, "corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  const bool rgb = color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_PALETTE;
  if (!rgb || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::format, "'" + path.string() + "' is not a 3-channel RGB image");
  }
  if (header_only) {
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
  }
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    depth = 8;
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) png_set_swap(png);  // host order, little-endian hosts
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.data = Tensor<float>({3, out.height, out.width});
  const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v;
        if (depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, rows[y] + (x * 3 + c) * 2, 2);
          v = static_cast<float>(s) / 65535.0f;
        } else {
          v = static_cast<float>(rows[y][x * 3 + c]) / 255.0f;
        }
        out.data[c * plane + static_cast<std::size_t>(y) * out.width + x] = v;
      }
    }
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Decoded decode_jpeg(const fs::path& path, bool header_only) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Decoded out;
  std::vector<std::uint8_t> buffer;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::io, "corrupt JPEG '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.num_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::format, "'" + path.string() + "' is not a 3-channel RGB image");
  }
  out.width = static_cast<int>(cinfo.image_width);
  out.height = static_cast<int>(cinfo.image_height);
  if (header_only) {
    jpeg_destroy_decompress(&cinfo);
    return out;
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t stride = static_cast<std::size_t>(cinfo.output_width) * 3;
  buffer.resize(stride * cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  out.data = Tensor<float>({3, out.height, out.width});
  const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out.data[c * plane + i] = static_cast<float>(buffer[i * 3 + c]) / 255.0f;
  return out;
}

Decoded decode(const fs::path& path, bool header_only) {
  FilePtr file = open_file(path, "rb");
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof magic, file.get());
  file.reset();
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (got == 8 && std::equal(magic, magic + 8, png_sig)) return decode_png(path, header_only);
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return decode_jpeg(path, header_only);
  fail(ErrorKind::io, "'" + path.string() + "' is not a PNG or JPEG file");
}

std::uint8_t quantize(float v) {
  if (!(v > 0.0f)) return 0;  // also maps NaN to 0
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

std::vector<fs::path> sorted_files(const fs::path& dir, bool (*accept)(const fs::path&)) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && accept(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

bool is_flo_file(const fs::path& p) { return p.extension() == ".flo"; }
bool is_pgm_file(const fs::path& p) { return p.extension() == ".pgm"; }

fs::path sibling_dir(const fs::path& root, const char* suffix) {
  fs::path clean = root;
  if (!clean.has_filename()) clean = clean.parent_path();
  return clean.parent_path() / (clean.filename().string() + suffix);
}

}  // namespace

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Frame resize_frame(const Frame& frame, Size2 size) {
  if (frame.size() == size) return frame;
  const auto plan = resize_plan<float>(frame.height(), frame.width(), size.height, size.width);
  return Frame(apply_plan(plan, frame.data()));
}

Frame load_frame(const fs::path& path, std::optional<Size2> target_size) {
  Decoded d = decode(path, false);
  Frame f(std::move(d.data));
  if (target_size) {
    require(target_size->height >= 1 && target_size->width >= 1, "target size must be positive");
    f = resize_frame(f, *target_size);
  }
  return f;
}

void save_frame(const Frame& frame, const fs::path& path) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::runtime, "libpng initialisation failed");
  }
  const int h = frame.height(), w = frame.width();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(h) * w * 3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) buffer[i * 3 + c] = quantize(frame.data()[c * plane + i]);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    int v = -1;
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    in >> v;
    return v;
  };
  if (magic != "P5") fail(ErrorKind::format, "'" + path.string() + "' is not a binary PGM (P5)");
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (!in || w < 1 || h < 1 || maxval != 255)
    fail(ErrorKind::format, "'" + path.string() + "' has an unsupported PGM header");
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    fail(ErrorKind::format, "'" + path.string() + "' is truncated: expected " + std::to_string(bytes.size()) +
                                " pixel bytes, got " + std::to_string(in.gcount()));
  Tensor<float> out({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
  return out;
}

void write_pgm(const Tensor<float>& plane, const fs::path& path) {
  require(plane.rank() == 2, "write_pgm expects an HxW tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << "P5\n" << plane.dim(1) << ' ' << plane.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) bytes[i] = quantize(plane[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing '" + path.string() + "'");
}

bool DatasetIndex::has_flow() const {
  bool any = false;
  for (const auto& c : clips) {
    if (!c.pairable) continue;
    any = true;
    if (c.flow_paths.empty() || c.mask_paths.empty()) return false;
  }
  return any;
}

const ClipEntry& DatasetIndex::clip(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return c;
  fail(ErrorKind::data, "no clip '" + id + "' in dataset " + root.string());
}

DatasetIndex index_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorKind::io, "dataset root '" + root.string() + "' is not a directory");
  DatasetIndex index;
  index.root = root;
  const fs::path flow_root = sibling_dir(root, "_flow");
  const fs::path mask_root = sibling_dir(root, "_mask");

  std::vector<std::pair<std::string, fs::path>> clip_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) clip_dirs.emplace_back(e.path().filename().string(), e.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());

  if (clip_dirs.empty() && !sorted_files(root, is_image_file).empty()) {
    fs::path clean = root.has_filename() ? root : root.parent_path();
    clip_dirs.emplace_back(clean.filename().string(), root);
  }

  for (const auto& [id, dir] : clip_dirs) {
    ClipEntry clip;
    clip.id = id;
    clip.frame_paths = sorted_files(dir, is_image_file);
    if (clip.frame_paths.empty()) {
      index.warnings.push_back("clip '" + id + "' has no frames; skipped");
      continue;
    }
    clip.pairable = clip.frame_paths.size() >= 2;
    if (!clip.pairable) index.warnings.push_back("clip '" + id + "' has fewer than 2 frames; excluded from pairs");
    clip.flow_paths = sorted_files(flow_root / id, is_flo_file);
    clip.mask_paths = sorted_files(mask_root / id, is_pgm_file);
    const std::size_t expected = clip.frame_paths.size() - 1;
    if (!clip.flow_paths.empty() && clip.flow_paths.size() != expected)
      fail(ErrorKind::validation, "clip '" + id + "' has " + std::to_string(clip.flow_paths.size()) +
                                      " flow files for " + std::to_string(clip.frame_paths.size()) +
                                      " frames (expected " + std::to_string(expected) + ")");
    if (!clip.mask_paths.empty() && clip.mask_paths.size() != expected)
      fail(ErrorKind::validation, "clip '" + id + "' has " + std::to_string(clip.mask_paths.size()) +
                                      " mask files for " + std::to_string(clip.frame_paths.size()) +
                                      " frames (expected " + std::to_string(expected) + ")");
    if (!clip.flow_paths.empty()) {
      const Decoded head = decode(clip.frame_paths.front(), true);
      for (const auto& fp : clip.flow_paths) {
        const Size2 fsz = read_flo_size(fp);
        if (fsz.height != head.height || fsz.width != head.width)
          fail(ErrorKind::validation, "clip '" + id + "': flow '" + fp.filename().string() + "' is " +
                                          std::to_string(fsz.width) + "x" + std::to_string(fsz.height) +
                                          " but frames are " + std::to_string(head.width) + "x" +
                                          std::to_string(head.height));
      }
    }
    index.clips.push_back(std::move(clip));
  }
  return index;
}

std::vector<TupleRef> enumerate_tuples(const DatasetIndex& index, int tuple_len, int interval) {
  require(tuple_len >= 1 && interval >= 1, "tuple length and interval must be positive");
  std::vector<TupleRef> out;
  const int span = (tuple_len - 1) * interval;
  for (std::size_t c = 0; c < index.clips.size(); ++c) {
    const int n = static_cast<int>(index.clips[c].frame_paths.size());
    if (tuple_len >= 2 && !index.clips[c].pairable) continue;
    for (int s = 0; s + span < n; ++s) out.push_back({c, s, interval, tuple_len});
  }
  return out;
}

TupleRef sample_tuple_ref(const DatasetIndex& index, int tuple_len, int interval, std::uint64_t seed) {
  const auto tuples = enumerate_tuples(index, tuple_len, interval);
  if (tuples.empty())
    fail(ErrorKind::data, "no clip has the " + std::to_string((tuple_len - 1) * interval + 1) +
                              " frames needed for a tuple of " + std::to_string(tuple_len) + " at interval " +
                              std::to_string(interval));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, tuples.size() - 1);
  return tuples[pick(rng)];
}

FrameSequence load_tuple(const DatasetIndex& index, const TupleRef& ref, std::optional<Size2> target_size) {
  require(ref.clip < index.clips.size(), "tuple refers to a missing clip");
  const ClipEntry& clip = index.clips[ref.clip];
  FrameSequence seq;
  seq.source_id = clip.id;
  for (int i = 0; i < ref.length; ++i) {
    const int f = ref.frame(i);
    require(f >= 0 && f < static_cast<int>(clip.frame_paths.size()), "tuple frame index out of range");
    seq.frames.push_back(load_frame(clip.frame_paths[f], target_size));
  }
  seq.validate();
  return seq;
}

FrameSequence sample_frame_tuple(const DatasetIndex& index, int tuple_len, int interval, std::uint64_t seed,
                                 std::optional<Size2> target_size) {
  return load_tuple(index, sample_tuple_ref(index, tuple_len, interval, seed), target_size);
}

FrameSequence load_clip(const ClipEntry& clip, std::optional<Size2> target_size) {
  FrameSequence seq;
  seq.source_id = clip.id;
  for (const auto& p : clip.frame_paths) seq.frames.push_back(load_frame(p, target_size));
  seq.validate();
  return seq;
}

}  // namespace fdb
