#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fdb/flow.hpp"
#include "fdb/networks.hpp"

namespace fdb {

// Masked warp residual of the stylized clip, the optical-flow loss formula
// used as a metric. Lower is more stable.
double warp_error(const FrameSequence& stylized, const std::vector<FlowField>& flows,
                  const std::vector<ConfidenceMask>& masks);

// Pixel frame-difference loss between stylized and original clip, a
// flow-free stability score.
double fdb_error(const FrameSequence& stylized, const FrameSequence& original, int interval);

// SFN: every frame independently. RNN: threaded from the zero state.
FrameSequence stylize_clip(const StylizationNetwork<float>& net, const FrameSequence& clip);
FrameSequence stylize_clip(const Checkpoint& ckpt, const FrameSequence& clip);

// Per-method dumps `<out>/<clip>/<label>/NNNNN.png` plus side-by-side tiles
// `<out>/<clip>/tiled/NNNNN.png`, members left to right in list order and
// separated by kTileSeparator white columns. Sequences are grouped into clips
// by source_id.
inline constexpr int kTileSeparator = 4;
void export_comparison(const std::vector<std::pair<std::string, FrameSequence>>& clips,
                       const std::filesystem::path& out_dir);
Frame tile_frames(const std::vector<Frame>& members);

struct ClipMetrics {
  std::string clip;
  std::optional<double> warp_error;  // absent when the clip carries no flow
  double fdb_error = 0;
};

struct StabilityReport {
  std::vector<ClipMetrics> clips;
  nlohmann::json metadata = nlohmann::json::object();  // checkpoint, temporal_kind, style, interval

  std::optional<double> mean_warp_error() const;
  double mean_fdb_error() const;
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

ClipMetrics evaluate_clip(const std::string& id, const FrameSequence& stylized, const FrameSequence& original,
                          int interval, const std::vector<FlowField>* flows = nullptr,
                          const std::vector<ConfidenceMask>* masks = nullptr);

// Flows and masks of a clip, resampled to `size` when it differs.
std::pair<std::vector<FlowField>, std::vector<ConfidenceMask>> load_clip_flows(const ClipEntry& clip,
                                                                               std::optional<Size2> size);

}  // namespace fdb
