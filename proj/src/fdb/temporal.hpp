#pragma once

#include <string>
#include <vector>

#include "fdb/flow.hpp"
#include "fdb/perceptual.hpp"

namespace fdb {

enum class TemporalKind { none, p_fdb, f_fdb, c_fdb, ofb };

std::string to_string(TemporalKind kind);
TemporalKind parse_temporal_kind(const std::string& name);  // config error on unknown names

struct TemporalLossConfig {
  TemporalKind kind = TemporalKind::none;
  int feature_layer = 9;
  int frame_interval = 1;  // K
  double c_fdb_pixel_weight = 1.0 / 40.0;
  double c_fdb_feature_weight = 1.0;

  void validate() const;
  bool needs_features() const { return kind == TemporalKind::f_fdb || kind == TemporalKind::c_fdb; }
  bool needs_flow() const { return kind == TemporalKind::ofb; }
};

// Normalised frame-difference term over a sequence of maps (pixels or
// features). Each entry is N×C×h×w with N tuples in a batch:
//
//   1 / (2 · pixels · (T − K) · N) · Σ_t |(s[t+K] − s[t]) − (o[t+K] − o[t])|²
//
// `pixels` is H·W of the input frames, also for feature maps.
template <typename T>
Var<T> fdb_loss(const std::vector<Var<T>>& stylized, const std::vector<Var<T>>& original, int interval, double pixels);

// 1 / (2 · pixels · (T − 1) · N) · Σ_t |c_t ⊙ (s[t+1] − warp(s[t], flow_t))|²
// with flow_t (2×H×W) the displacement that pulls frame t onto t+1 and
// c_t (H×W) broadcast over channels.
template <typename T>
Var<T> ofb_loss(const std::vector<Var<T>>& stylized, const std::vector<Tensor<T>>& flows,
                const std::vector<Tensor<T>>& masks);

// Differentiable temporal loss of `cfg.kind` over a sequence of N×3×H×W
// frames. Flows and masks are only consulted for OFB.
template <typename T>
Var<T> temporal_loss(const LossNetwork<T>* net, const std::vector<Var<T>>& stylized, const std::vector<Var<T>>& original,
                     const TemporalLossConfig& cfg, const std::vector<Tensor<T>>& flows = {},
                     const std::vector<Tensor<T>>& masks = {});

// φ = f_l(x[t+K]) − f_l(x[t]), or the pixel difference for l = 0. C×h×w.
template <typename T>
Tensor<T> frame_difference(const LossNetwork<T>* net, const FrameSequence& seq, int t, int interval, int layer);

// Scalar evaluations over frame sequences.
double p_fdb_loss(const FrameSequence& stylized, const FrameSequence& original, int interval);
template <typename T>
double f_fdb_loss(const LossNetwork<T>& net, const FrameSequence& stylized, const FrameSequence& original, int layer,
                  int interval);
template <typename T>
double c_fdb_loss(const LossNetwork<T>& net, const FrameSequence& stylized, const FrameSequence& original,
                  const TemporalLossConfig& cfg);
double ofb_loss(const FrameSequence& stylized, const std::vector<FlowField>& flows,
                const std::vector<ConfidenceMask>& masks);

}  // namespace fdb
