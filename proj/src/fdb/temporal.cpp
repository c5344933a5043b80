#include "fdb/temporal.hpp"

#include <cmath>

#include "fdb/ops.hpp"

namespace fdb {

std::string to_string(TemporalKind kind) {
  switch (kind) {
    case TemporalKind::none: return "none";
    case TemporalKind::p_fdb: return "p_fdb";
    case TemporalKind::f_fdb: return "f_fdb";
    case TemporalKind::c_fdb: return "c_fdb";
    case TemporalKind::ofb: return "ofb";
  }
  return "?";
}

TemporalKind parse_temporal_kind(const std::string& name) {
  for (TemporalKind k : {TemporalKind::none, TemporalKind::p_fdb, TemporalKind::f_fdb, TemporalKind::c_fdb,
                         TemporalKind::ofb})
    if (to_string(k) == name) return k;
  fail(ErrorKind::config, "unknown temporal loss kind '" + name + "' (expected none, p_fdb, f_fdb, c_fdb or ofb)");
}

void TemporalLossConfig::validate() const {
  if (frame_interval < 1) fail(ErrorKind::config, "frame_interval must be >= 1");
  if (!(c_fdb_pixel_weight >= 0.0) || !(c_fdb_feature_weight >= 0.0) || !std::isfinite(c_fdb_pixel_weight) ||
      !std::isfinite(c_fdb_feature_weight))
    fail(ErrorKind::config, "C-FDB weights must be finite and >= 0");
  if (needs_features() && (feature_layer < 1 || feature_layer > kMaxLossLayer))
    fail(ErrorKind::config, "feature_layer " + std::to_string(feature_layer) + " is not a valid loss-network layer");
  if (kind == TemporalKind::ofb && frame_interval != 1)
    fail(ErrorKind::config, "the optical-flow loss is defined on consecutive frames only (frame_interval = 1)");
}

namespace {

template <typename T>
void check_sequences(const std::vector<Var<T>>& a, const std::vector<Var<T>>& b, int interval, const char* what) {
  require(interval >= 1, std::string(what) + ": frame interval must be >= 1");
  require(a.size() == b.size(), std::string(what) + ": sequence lengths differ (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
  require(a.size() >= static_cast<std::size_t>(interval) + 1,
          std::string(what) + ": need at least K+1 = " + std::to_string(interval + 1) + " frames, got " +
              std::to_string(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i].shape() == a[0].shape() && b[i].shape() == a[0].shape(),
            std::string(what) + ": frame shapes differ at index " + std::to_string(i));
}

template <typename T>
std::vector<Var<T>> as_vars(const FrameSequence& seq) {
  std::vector<Var<T>> out;
  for (const Frame& f : seq.frames) out.push_back(frame_var<T>(f));
  return out;
}

template <typename T>
std::vector<Var<T>> features_at(const LossNetwork<T>& net, const std::vector<Var<T>>& frames, int layer) {
  std::vector<Var<T>> out;
  for (const auto& f : frames) out.push_back(net.extract(f, {layer}).at(layer));
  return out;
}

}  // namespace

template <typename T>
Var<T> fdb_loss(const std::vector<Var<T>>& stylized, const std::vector<Var<T>>& original, int interval, double pixels) {
  check_sequences(stylized, original, interval, "fdb_loss");
  require(pixels > 0, "fdb_loss: pixel count must be positive");
  const std::size_t terms = stylized.size() - static_cast<std::size_t>(interval);
  const double batch = stylized[0].dim(0);
  Var<T> total = Var<T>::constant(Tensor<T>::scalar(0));
  for (std::size_t t = 0; t < terms; ++t) {
    const Var<T> ds = stylized[t + interval] - stylized[t];
    const Var<T> d_orig = original[t + interval] - original[t];
    total = total + ops::sum_squares(ds - d_orig);
  }
  return T(1.0 / (2.0 * pixels * static_cast<double>(terms) * batch)) * total;
}

template <typename T>
Var<T> ofb_loss(const std::vector<Var<T>>& stylized, const std::vector<Tensor<T>>& flows,
                const std::vector<Tensor<T>>& masks) {
  require(stylized.size() >= 2, "ofb_loss: need at least two frames");
  const std::size_t terms = stylized.size() - 1;
  require(flows.size() == terms && masks.size() == terms,
          "ofb_loss: expected " + std::to_string(terms) + " flows and masks, got " + std::to_string(flows.size()) +
              " and " + std::to_string(masks.size()));
  const Shape& s = stylized[0].shape();
  require(s.size() == 4, "ofb_loss: frames must be N×C×H×W");
  const double pixels = static_cast<double>(s[2]) * s[3];
  Var<T> total = Var<T>::constant(Tensor<T>::scalar(0));
  for (std::size_t t = 0; t < terms; ++t) {
    require(stylized[t + 1].shape() == s, "ofb_loss: frame shapes differ");
    require(masks[t].rank() == 2 && masks[t].dim(0) == s[2] && masks[t].dim(1) == s[3],
            "ofb_loss: mask " + shape_string(masks[t].shape()) + " does not match frames " + shape_string(s));
    const Var<T> residual = stylized[t + 1] - ops::warp(stylized[t], flows[t]);
    total = total + ops::sum_squares(ops::mul_mask(residual, masks[t]));
  }
  return T(1.0 / (2.0 * pixels * static_cast<double>(terms) * s[0])) * total;
}

template <typename T>
Var<T> temporal_loss(const LossNetwork<T>* net, const std::vector<Var<T>>& stylized, const std::vector<Var<T>>& original,
                     const TemporalLossConfig& cfg, const std::vector<Tensor<T>>& flows,
                     const std::vector<Tensor<T>>& masks) {
  const int k = cfg.frame_interval;
  switch (cfg.kind) {
    case TemporalKind::none:
      return Var<T>::constant(Tensor<T>::scalar(0));
    case TemporalKind::ofb:
      return ofb_loss(stylized, flows, masks);
    default:
      break;
  }
  check_sequences(stylized, original, k, "temporal_loss");
  const double pixels = static_cast<double>(stylized[0].dim(2)) * stylized[0].dim(3);
  if (cfg.kind == TemporalKind::p_fdb) return fdb_loss(stylized, original, k, pixels);
  require(net != nullptr, "temporal_loss: feature-space loss needs a loss network");
  const Var<T> feature = fdb_loss(features_at(*net, stylized, cfg.feature_layer),
                                  features_at(*net, original, cfg.feature_layer), k, pixels);
  if (cfg.kind == TemporalKind::f_fdb) return feature;
  const Var<T> pixel = fdb_loss(stylized, original, k, pixels);
  return T(cfg.c_fdb_pixel_weight) * pixel + T(cfg.c_fdb_feature_weight) * feature;
}

template <typename T>
Tensor<T> frame_difference(const LossNetwork<T>* net, const FrameSequence& seq, int t, int interval, int layer) {
  require(interval >= 1, "frame_difference: interval must be >= 1");
  require(t >= 0 && static_cast<std::size_t>(t) + interval < seq.length(),
          "frame_difference: t + K = " + std::to_string(t + interval) + " is outside a sequence of length " +
              std::to_string(seq.length()));
  NoGradGuard guard;
  Var<T> a = frame_var<T>(seq.frames[t]);
  Var<T> b = frame_var<T>(seq.frames[t + interval]);
  if (layer > 0) {
    require(net != nullptr, "frame_difference: feature layer needs a loss network");
    a = net->extract(a, {layer}).at(layer);
    b = net->extract(b, {layer}).at(layer);
  }
  const Shape& s = a.shape();
  return (b - a).value().reshaped({s[1], s[2], s[3]});
}

double p_fdb_loss(const FrameSequence& stylized, const FrameSequence& original, int interval) {
  NoGradGuard guard;
  TemporalLossConfig cfg;
  cfg.kind = TemporalKind::p_fdb;
  cfg.frame_interval = interval;
  return temporal_loss<double>(nullptr, as_vars<double>(stylized), as_vars<double>(original), cfg).item();
}

template <typename T>
double f_fdb_loss(const LossNetwork<T>& net, const FrameSequence& stylized, const FrameSequence& original, int layer,
                  int interval) {
  NoGradGuard guard;
  TemporalLossConfig cfg;
  cfg.kind = TemporalKind::f_fdb;
  cfg.feature_layer = layer;
  cfg.frame_interval = interval;
  require(layer >= 1 && layer <= kMaxLossLayer, "f_fdb_loss: invalid layer id " + std::to_string(layer));
  return temporal_loss<T>(&net, as_vars<T>(stylized), as_vars<T>(original), cfg).item();
}

template <typename T>
double c_fdb_loss(const LossNetwork<T>& net, const FrameSequence& stylized, const FrameSequence& original,
                  const TemporalLossConfig& cfg) {
  NoGradGuard guard;
  TemporalLossConfig c = cfg;
  c.kind = TemporalKind::c_fdb;
  return temporal_loss<T>(&net, as_vars<T>(stylized), as_vars<T>(original), c).item();
}

double ofb_loss(const FrameSequence& stylized, const std::vector<FlowField>& flows,
                const std::vector<ConfidenceMask>& masks) {
  NoGradGuard guard;
  std::vector<Tensor<double>> f, m;
  for (const auto& x : flows) f.push_back(x.data().cast<double>());
  for (const auto& x : masks) m.push_back(x.data().cast<double>());
  return ofb_loss<double>(as_vars<double>(stylized), f, m).item();
}

#define FDB_INSTANTIATE_TEMPORAL(T)                                                                                 \
  template Var<T> fdb_loss<T>(const std::vector<Var<T>>&, const std::vector<Var<T>>&, int, double);                \
  template Var<T> ofb_loss<T>(const std::vector<Var<T>>&, const std::vector<Tensor<T>>&,                           \
                              const std::vector<Tensor<T>>&);                                                       \
  template Var<T> temporal_loss<T>(const LossNetwork<T>*, const std::vector<Var<T>>&, const std::vector<Var<T>>&,   \
                                   const TemporalLossConfig&, const std::vector<Tensor<T>>&,                        \
                                   const std::vector<Tensor<T>>&);                                                  \
  template Tensor<T> frame_difference<T>(const LossNetwork<T>*, const FrameSequence&, int, int, int);              \
  template double f_fdb_loss<T>(const LossNetwork<T>&, const FrameSequence&, const FrameSequence&, int, int);      \
  template double c_fdb_loss<T>(const LossNetwork<T>&, const FrameSequence&, const FrameSequence&,                 \
                                const TemporalLossConfig&);

FDB_INSTANTIATE_TEMPORAL(float)
FDB_INSTANTIATE_TEMPORAL(double)

}  // namespace fdb
