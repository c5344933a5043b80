#include "fdb/perceptual.hpp"

#include <cmath>
#include <random>

#include "fdb/archive.hpp"
#include "fdb/ops.hpp"

namespace fdb {

namespace {

// torchvision `features.<i>` indices of the 13 convolutions.
constexpr int kTorchConvIndex[13] = {0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28};
constexpr int kConvChannels[13] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};

std::vector<LayerInfo> build_layers() {
  // Block sizes in convolutions: 2, 2, 3, 3, 3.
  const int block_convs[5] = {2, 2, 3, 3, 3};
  std::vector<LayerInfo> out;
  int conv = 0, id = 0, pools = 0;
  for (int b = 0; b < 5; ++b) {
    for (int j = 0; j < block_convs[b]; ++j) {
      const int ch = kConvChannels[conv++];
      const std::string suffix = std::to_string(b + 1) + "_" + std::to_string(j + 1);
      out.push_back({++id, UnitKind::conv, ch, pools, "conv" + suffix});
      out.push_back({++id, UnitKind::relu, ch, pools, "relu" + suffix});
    }
    ++pools;
    out.push_back({++id, UnitKind::pool, out.back().channels, pools, "pool" + std::to_string(b + 1)});
  }
  return out;
}

template <typename T>
const std::vector<T>& imagenet_scale() {
  static const std::vector<T> v{T(1 / 0.229), T(1 / 0.224), T(1 / 0.225)};
  return v;
}

template <typename T>
const std::vector<T>& imagenet_shift() {
  static const std::vector<T> v{T(-0.485 / 0.229), T(-0.456 / 0.224), T(-0.406 / 0.225)};
  return v;
}

void check_layer_id(int id) {
  require(id >= 1 && id <= kMaxLossLayer,
          "invalid loss-network layer id " + std::to_string(id) + " (valid: 1.." + std::to_string(kMaxLossLayer) + ")");
}

}  // namespace

const std::vector<LayerInfo>& loss_network_layers() {
  static const std::vector<LayerInfo> layers = build_layers();
  return layers;
}

const LayerInfo& loss_network_layer(int id) {
  check_layer_id(id);
  return loss_network_layers()[static_cast<std::size_t>(id - 1)];
}

template <typename T>
LossNetwork<T> LossNetwork<T>::load(const std::filesystem::path& path) {
  const Archive archive = read_archive(path);
  LossNetwork net;
  int in_ch = 3;
  for (int i = 0; i < 13; ++i) {
    const std::string base = "features." + std::to_string(kTorchConvIndex[i]);
    const Tensor<float>& w = archive.get(base + ".weight");
    const Tensor<float>& b = archive.get(base + ".bias");
    const Shape want{kConvChannels[i], in_ch, 3, 3};
    if (w.shape() != want || b.shape() != Shape{kConvChannels[i]})
      fail(ErrorKind::format, "loss-network weights '" + path.string() + "': " + base + " has shape " +
                                  shape_string(w.shape()) + ", expected " + shape_string(want));
    net.weights_.push_back(w.cast<T>());
    net.biases_.push_back(b.cast<T>());
    in_ch = kConvChannels[i];
  }
  net.origin_ = path.string();
  return net;
}

template <typename T>
LossNetwork<T> LossNetwork<T>::random(std::uint64_t seed) {
  LossNetwork net;
  std::mt19937_64 rng(seed);
  int in_ch = 3;
  for (int i = 0; i < 13; ++i) {
    const int out_ch = kConvChannels[i];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_ch * 9)));
    Tensor<T> w({out_ch, in_ch, 3, 3});
    for (auto& v : w.values()) v = static_cast<T>(dist(rng));
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(Tensor<T>({out_ch}));
    in_ch = out_ch;
  }
  net.origin_ = "random:" + std::to_string(seed);
  return net;
}

template <typename T>
template <typename U>
LossNetwork<U> LossNetwork<T>::cast() const {
  LossNetwork<U> out;
  for (const auto& w : weights_) out.weights_.push_back(w.template cast<U>());
  for (const auto& b : biases_) out.biases_.push_back(b.template cast<U>());
  out.origin_ = origin_;
  return out;
}

template <typename T>
std::map<int, Var<T>> LossNetwork<T>::extract(const Var<T>& image, const std::set<int>& layers) const {
  require(image.value().rank() == 4 && image.dim(1) == 3, "loss network expects N×3×H×W input, got " +
                                                              shape_string(image.shape()));
  std::map<int, Var<T>> out;
  if (layers.empty()) return out;
  for (int id : layers) check_layer_id(id);
  const int deepest = *layers.rbegin();

  Var<T> x = ops::channel_affine(image, imagenet_scale<T>(), imagenet_shift<T>());
  int conv = 0;
  for (const LayerInfo& unit : loss_network_layers()) {
    if (unit.id > deepest) break;
    switch (unit.kind) {
      case UnitKind::conv:
        x = ops::conv2d(x, Var<T>::constant(weights_[conv]), Var<T>::constant(biases_[conv]), 1, 1);
        ++conv;
        break;
      case UnitKind::relu:
        x = ops::relu(x);
        break;
      case UnitKind::pool:
        x = ops::avg_pool2(x);
        break;
    }
    if (layers.count(unit.id)) out.emplace(unit.id, x);
  }
  return out;
}

template <typename T>
std::uint64_t LossNetwork<T>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = fdb::checksum(weights_[i], h);
    h = fdb::checksum(biases_[i], h);
  }
  return h;
}

void SpatialLossConfig::validate() const {
  for (const auto* group : {&content_layers, &style_layers})
    for (const auto& [id, w] : *group) {
      if (id < 1 || id > kMaxLossLayer)
        fail(ErrorKind::config, "invalid loss-network layer id " + std::to_string(id));
      if (!(w >= 0.0) || !std::isfinite(w))
        fail(ErrorKind::config, "layer weight for id " + std::to_string(id) + " must be finite and >= 0");
    }
}

std::set<int> SpatialLossConfig::layer_ids() const {
  std::set<int> ids;
  for (const auto& [id, w] : content_layers) ids.insert(id);
  for (const auto& [id, w] : style_layers) ids.insert(id);
  return ids;
}

template <typename T>
Var<T> frame_var(const Frame& frame, bool requires_grad) {
  Tensor<T> t = frame.batched().template cast<T>();
  return requires_grad ? Var<T>::leaf(std::move(t), true) : Var<T>::constant(std::move(t));
}

template <typename T>
std::map<int, FeatureMap<T>> extract_features(const LossNetwork<T>& net, const Frame& frame, const std::set<int>& layers) {
  NoGradGuard guard;
  std::map<int, FeatureMap<T>> out;
  for (auto& [id, v] : net.extract(frame_var<T>(frame), layers)) {
    const Shape& s = v.shape();
    out.emplace(id, FeatureMap<T>{v.value().reshaped({s[1], s[2], s[3]}), id});
  }
  return out;
}

template <typename T>
GramMatrix<T> gram(const FeatureMap<T>& feature) {
  const Shape& s = feature.data.shape();
  require(feature.data.rank() == 3, "gram: feature map must be C×H×W");
  NoGradGuard guard;
  Var<T> g = ops::gram(Var<T>::constant(feature.data.reshaped({1, s[0], s[1], s[2]})));
  return {g.value(), feature.layer_id};
}

template <typename T>
Var<T> content_layer_loss(const Var<T>& stylized, const Var<T>& content) {
  require(stylized.shape() == content.shape(), "content loss: feature shapes differ " + shape_string(stylized.shape()) +
                                                   " vs " + shape_string(content.shape()));
  const double n = static_cast<double>(stylized.value().size()) / stylized.dim(0);  // C·H·W
  return T(1.0 / (2.0 * n)) * ops::sum_squares(stylized - content);
}

template <typename T>
Var<T> style_layer_loss(const Var<T>& stylized, const Tensor<T>& reference_gram) {
  Var<T> g = ops::gram(stylized);
  require(g.shape() == reference_gram.shape(), "style loss: Gram shapes differ " + shape_string(g.shape()) + " vs " +
                                                   shape_string(reference_gram.shape()));
  const double c = stylized.dim(1);
  return T(1.0 / (2.0 * c * c)) * ops::sum_squares(g - Var<T>::constant(reference_gram));
}

template <typename T>
Var<T> content_loss_from_features(const std::map<int, Var<T>>& stylized, const std::map<int, Var<T>>& content,
                                  const SpatialLossConfig& cfg) {
  Var<T> total = Var<T>::constant(Tensor<T>::scalar(0));
  for (const auto& [id, w] : cfg.content_layers) {
    auto a = stylized.find(id);
    auto b = content.find(id);
    require(a != stylized.end() && b != content.end(), "content loss: features for layer " + std::to_string(id) + " missing");
    total = total + T(w) * content_layer_loss(a->second, b->second);
  }
  return total;
}

template <typename T>
Var<T> style_loss_from_features(const std::map<int, Var<T>>& stylized, const std::map<int, GramMatrix<T>>& grams,
                                const SpatialLossConfig& cfg) {
  Var<T> total = Var<T>::constant(Tensor<T>::scalar(0));
  for (const auto& [id, w] : cfg.style_layers) {
    auto a = stylized.find(id);
    auto g = grams.find(id);
    require(a != stylized.end(), "style loss: features for layer " + std::to_string(id) + " missing");
    require(g != grams.end(), "style loss: no style Gram for layer " + std::to_string(id));
    total = total + T(w) * style_layer_loss(a->second, g->second.data);
  }
  return total;
}

template <typename T>
std::map<int, GramMatrix<T>> style_grams(const LossNetwork<T>& net, const Frame& style, const SpatialLossConfig& cfg) {
  std::set<int> ids;
  for (const auto& [id, w] : cfg.style_layers) ids.insert(id);
  std::map<int, GramMatrix<T>> out;
  for (const auto& [id, f] : extract_features(net, style, ids)) out.emplace(id, gram(f));
  return out;
}

template <typename T>
double content_loss(const LossNetwork<T>& net, const Frame& stylized, const Frame& content, const SpatialLossConfig& cfg) {
  require(stylized.size() == content.size(), "content loss: frame sizes differ");
  NoGradGuard guard;
  std::set<int> ids;
  for (const auto& [id, w] : cfg.content_layers) ids.insert(id);
  auto a = net.extract(frame_var<T>(stylized), ids);
  auto b = net.extract(frame_var<T>(content), ids);
  return content_loss_from_features(a, b, cfg).item();
}

template <typename T>
double style_loss(const LossNetwork<T>& net, const Frame& stylized, const std::map<int, GramMatrix<T>>& grams,
                  const SpatialLossConfig& cfg) {
  NoGradGuard guard;
  std::set<int> ids;
  for (const auto& [id, w] : cfg.style_layers) {
    require(grams.count(id) > 0, "style loss: no style Gram for layer " + std::to_string(id));
    ids.insert(id);
  }
  return style_loss_from_features(net.extract(frame_var<T>(stylized), ids), grams, cfg).item();
}

#define FDB_INSTANTIATE_PERCEPTUAL(T)                                                                              \
  template class LossNetwork<T>;                                                                                  \
  template Var<T> frame_var<T>(const Frame&, bool);                                                               \
  template std::map<int, FeatureMap<T>> extract_features<T>(const LossNetwork<T>&, const Frame&, const std::set<int>&); \
  template GramMatrix<T> gram<T>(const FeatureMap<T>&);                                                           \
  template Var<T> content_layer_loss<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> style_layer_loss<T>(const Var<T>&, const Tensor<T>&);                                           \
  template Var<T> content_loss_from_features<T>(const std::map<int, Var<T>>&, const std::map<int, Var<T>>&,       \
                                                const SpatialLossConfig&);                                        \
  template Var<T> style_loss_from_features<T>(const std::map<int, Var<T>>&, const std::map<int, GramMatrix<T>>&,  \
                                              const SpatialLossConfig&);                                          \
  template std::map<int, GramMatrix<T>> style_grams<T>(const LossNetwork<T>&, const Frame&, const SpatialLossConfig&); \
  template double content_loss<T>(const LossNetwork<T>&, const Frame&, const Frame&, const SpatialLossConfig&);   \
  template double style_loss<T>(const LossNetwork<T>&, const Frame&, const std::map<int, GramMatrix<T>>&,         \
                                const SpatialLossConfig&);

FDB_INSTANTIATE_PERCEPTUAL(float)
FDB_INSTANTIATE_PERCEPTUAL(double)

template LossNetwork<double> LossNetwork<float>::cast<double>() const;
template LossNetwork<float> LossNetwork<double>::cast<float>() const;

}  // namespace fdb
