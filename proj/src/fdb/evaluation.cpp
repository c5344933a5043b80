#include "fdb/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "fdb/temporal.hpp"

namespace fdb {

double warp_error(const FrameSequence& stylized, const std::vector<FlowField>& flows,
                  const std::vector<ConfidenceMask>& masks) {
  return ofb_loss(stylized, flows, masks);
}

double fdb_error(const FrameSequence& stylized, const FrameSequence& original, int interval) {
  return p_fdb_loss(stylized, original, interval);
}

FrameSequence stylize_clip(const StylizationNetwork<float>& net, const FrameSequence& clip) {
  if (!clip.frames.empty()) clip.validate();
  FrameSequence out;
  out.source_id = clip.source_id;
  out.frame_rate = clip.frame_rate;
  if (net.spec().variant == Variant::rnn) {
    out.frames = rnn_unroll(net, clip.frames);
  } else {
    for (const Frame& f : clip.frames) out.frames.push_back(net.stylize(f));
  }
  return out;
}

FrameSequence stylize_clip(const Checkpoint& ckpt, const FrameSequence& clip) {
  return stylize_clip(StylizationNetwork<float>::from_checkpoint(ckpt), clip);
}

Frame tile_frames(const std::vector<Frame>& members) {
  require(!members.empty(), "tile_frames: nothing to tile");
  int width = kTileSeparator * (static_cast<int>(members.size()) - 1), height = 0;
  for (const Frame& f : members) {
    width += f.width();
    height = std::max(height, f.height());
  }
  Tensor<float> out({3, height, width}, 1.0f);
  int x0 = 0;
  for (const Frame& f : members) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x)
          out[(static_cast<std::size_t>(c) * height + y) * width + x0 + x] =
              f.data()[(static_cast<std::size_t>(c) * f.height() + y) * f.width() + x];
    x0 += f.width() + kTileSeparator;
  }
  return Frame(std::move(out));
}

namespace {

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.png", t);
  return buf;
}

bool safe_component(const std::string& s) {
  return !s.empty() && s != "." && s != ".." && s.find('/') == std::string::npos && s.find('\\') == std::string::npos;
}

}  // namespace

void export_comparison(const std::vector<std::pair<std::string, FrameSequence>>& clips,
                       const std::filesystem::path& out_dir) {
  // Group members by clip, keeping list order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const std::pair<std::string, FrameSequence>*>> groups;
  for (const auto& entry : clips) {
    const auto& [label, seq] = entry;
    require(safe_component(label) && label != "tiled", "export_comparison: invalid method label '" + label + "'");
    const std::string clip = seq.source_id.empty() ? "clip" : seq.source_id;
    require(safe_component(clip), "export_comparison: invalid clip id '" + clip + "'");
    if (!groups.count(clip)) order.push_back(clip);
    for (const auto* other : groups[clip])
      require(other->first != label, "export_comparison: duplicate label '" + label + "' for clip '" + clip + "'");
    groups[clip].push_back(&entry);
  }
  for (const std::string& clip : order) {
    const auto& members = groups[clip];
    const std::size_t length = members.front()->second.length();
    for (const auto* m : members)
      require(m->second.length() == length, "export_comparison: sequences of clip '" + clip + "' differ in length");
    for (const auto* m : members) {
      const auto dir = out_dir / clip / m->first;
      std::filesystem::create_directories(dir);
      for (std::size_t t = 0; t < length; ++t) save_frame(m->second.frames[t], dir / frame_name(t));
    }
    const auto tiled = out_dir / clip / "tiled";
    std::filesystem::create_directories(tiled);
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<Frame> row;
      for (const auto* m : members) row.push_back(m->second.frames[t]);
      save_frame(tile_frames(row), tiled / frame_name(t));
    }
  }
}

std::optional<double> StabilityReport::mean_warp_error() const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& c : clips)
    if (c.warp_error) {
      sum += *c.warp_error;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double StabilityReport::mean_fdb_error() const {
  if (clips.empty()) return 0.0;
  double sum = 0;
  for (const auto& c : clips) sum += c.fdb_error;
  return sum / static_cast<double>(clips.size());
}

nlohmann::json StabilityReport::to_json() const {
  nlohmann::json per_clip = nlohmann::json::array();
  for (const auto& c : clips)
    per_clip.push_back({{"clip", c.clip},
                        {"warp_error", c.warp_error ? nlohmann::json(*c.warp_error) : nlohmann::json(nullptr)},
                        {"fdb_error", c.fdb_error}});
  const auto mw = mean_warp_error();
  return {{"metadata", metadata},
          {"clips", per_clip},
          {"mean_warp_error", mw ? nlohmann::json(*mw) : nlohmann::json(nullptr)},
          {"mean_fdb_error", mean_fdb_error()}};
}

void StabilityReport::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write report '" + path.string() + "'");
  out << to_json().dump(2) << '\n';
}

ClipMetrics evaluate_clip(const std::string& id, const FrameSequence& stylized, const FrameSequence& original,
                          int interval, const std::vector<FlowField>* flows, const std::vector<ConfidenceMask>* masks) {
  require(stylized.length() == original.length(), "evaluate_clip: '" + id + "' has " +
                                                      std::to_string(stylized.length()) + " stylized and " +
                                                      std::to_string(original.length()) + " original frames");
  ClipMetrics m;
  m.clip = id;
  if (stylized.length() > static_cast<std::size_t>(interval)) m.fdb_error = fdb_error(stylized, original, interval);
  if (flows && masks && stylized.length() >= 2) m.warp_error = warp_error(stylized, *flows, *masks);
  return m;
}

std::pair<std::vector<FlowField>, std::vector<ConfidenceMask>> load_clip_flows(const ClipEntry& clip,
                                                                               std::optional<Size2> size) {
  std::vector<FlowField> flows;
  std::vector<ConfidenceMask> masks;
  for (const auto& p : clip.flow_paths) flows.push_back(size ? resize_flow(read_flo(p), *size) : read_flo(p));
  for (const auto& p : clip.mask_paths) masks.push_back(size ? resize_mask(read_mask(p), *size) : read_mask(p));
  return {std::move(flows), std::move(masks)};
}

}  // namespace fdb
