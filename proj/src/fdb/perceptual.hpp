#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fdb/autograd.hpp"
#include "fdb/media_io.hpp"

namespace fdb {

// Units of the VGG-16 feature stack, numbered 1..31 in execution order with
// every convolution, ReLU and pooling unit counted:
//
//    1 conv1_1   2 relu1_1   3 conv1_2   4 relu1_2   5 pool1
//    6 conv2_1   7 relu2_1   8 conv2_2   9 relu2_2  10 pool2
//   11 conv3_1  12 relu3_1  13 conv3_2  14 relu3_2  15 conv3_3  16 relu3_3  17 pool3
//   18 conv4_1  19 relu4_1  20 conv4_2  21 relu4_2  22 conv4_3  23 relu4_3  24 pool4
//   25 conv5_1  ...         31 pool5
//
// Id 0 denotes pixel space. Pooling is 2×2 average pooling throughout.
enum class UnitKind { conv, relu, pool };

struct LayerInfo {
  int id = 0;
  UnitKind kind = UnitKind::conv;
  int channels = 0;   // output channels
  int pools_before = 0;  // average-pool stages up to and including this unit
  std::string name;
};

inline constexpr int kMaxLossLayer = 31;

const std::vector<LayerInfo>& loss_network_layers();
const LayerInfo& loss_network_layer(int id);  // contract error for ids outside 1..31

template <typename T>
struct FeatureMap {
  Tensor<T> data;  // C×H×W
  int layer_id = 0;
  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

template <typename T>
struct GramMatrix {
  Tensor<T> data;  // C×C
  int layer_id = 0;
};

// Frozen VGG-16 feature extractor. Inputs are RGB in [0,1]; the ImageNet
// mean/std normalisation happens inside. Parameters never receive gradients.
template <typename T>
class LossNetwork {
 public:
  // Weights from an archive written by tools/convert_vgg16.py.
  static LossNetwork load(const std::filesystem::path& path);
  // Deterministic He-normal initialisation, for tests and weight-free runs.
  static LossNetwork random(std::uint64_t seed);

  template <typename U>
  LossNetwork<U> cast() const;

  // image: N×3×H×W. Runs only as deep as the largest requested id.
  std::map<int, Var<T>> extract(const Var<T>& image, const std::set<int>& layers) const;

  std::uint64_t checksum() const;
  const std::string& origin() const { return origin_; }
  const std::vector<Tensor<T>>& weights() const { return weights_; }
  const std::vector<Tensor<T>>& biases() const { return biases_; }

 private:
  template <typename U>
  friend class LossNetwork;

  std::vector<Tensor<T>> weights_;  // 13 kernels [Co,Ci,3,3]
  std::vector<Tensor<T>> biases_;
  std::string origin_;
};

struct SpatialLossConfig {
  std::map<int, double> content_layers{{16, 1.0}};
  std::map<int, double> style_layers{{4, 1.0}, {9, 1.0}, {16, 1.0}, {23, 1.0}};

  void validate() const;
  std::set<int> layer_ids() const;
};

// Extracts C×H×W feature maps from a single frame.
template <typename T>
std::map<int, FeatureMap<T>> extract_features(const LossNetwork<T>& net, const Frame& frame, const std::set<int>& layers);

template <typename T>
GramMatrix<T> gram(const FeatureMap<T>& feature);

// Per-layer terms on batch-1 NCHW feature variables:
//   content: |a - b|² / (2 C H W)        style: |G(a) - G_ref|² / (2 C²)
template <typename T>
Var<T> content_layer_loss(const Var<T>& stylized, const Var<T>& content);
template <typename T>
Var<T> style_layer_loss(const Var<T>& stylized, const Tensor<T>& reference_gram);

// Weighted sums over the configured layers. Feature maps are keyed by id.
template <typename T>
Var<T> content_loss_from_features(const std::map<int, Var<T>>& stylized, const std::map<int, Var<T>>& content,
                                  const SpatialLossConfig& cfg);
template <typename T>
Var<T> style_loss_from_features(const std::map<int, Var<T>>& stylized, const std::map<int, GramMatrix<T>>& style_grams,
                                const SpatialLossConfig& cfg);

template <typename T>
std::map<int, GramMatrix<T>> style_grams(const LossNetwork<T>& net, const Frame& style, const SpatialLossConfig& cfg);

// Scalar evaluations on frames.
template <typename T>
double content_loss(const LossNetwork<T>& net, const Frame& stylized, const Frame& content, const SpatialLossConfig& cfg);
template <typename T>
double style_loss(const LossNetwork<T>& net, const Frame& stylized, const std::map<int, GramMatrix<T>>& style_grams,
                  const SpatialLossConfig& cfg);

// 1×3×H×W variable from a frame.
template <typename T>
Var<T> frame_var(const Frame& frame, bool requires_grad = false);

}  // namespace fdb
