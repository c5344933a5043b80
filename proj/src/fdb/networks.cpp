#include "fdb/networks.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "fdb/archive.hpp"
#include "fdb/ops.hpp"

namespace fdb {

std::string to_string(Variant v) { return v == Variant::rnn ? "rnn" : "sfn"; }

std::string to_string(PaddingMode p) {
  switch (p) {
    case PaddingMode::interpolation: return "interpolation";
    case PaddingMode::zero: return "zero";
    case PaddingMode::replicate: return "replicate";
    case PaddingMode::reflective: return "reflective";
    case PaddingMode::reflective_at_input: return "reflective_at_input";
    case PaddingMode::none: return "none";
  }
  return "?";
}

const std::vector<PaddingMode>& all_padding_modes() {
  static const std::vector<PaddingMode> modes{PaddingMode::interpolation, PaddingMode::zero,
                                              PaddingMode::replicate,     PaddingMode::reflective,
                                              PaddingMode::reflective_at_input, PaddingMode::none};
  return modes;
}

Variant parse_variant(const std::string& name) {
  if (name == "sfn") return Variant::sfn;
  if (name == "rnn") return Variant::rnn;
  fail(ErrorKind::config, "unknown network variant '" + name + "' (expected sfn or rnn)");
}

PaddingMode parse_padding_mode(const std::string& name) {
  for (PaddingMode p : all_padding_modes())
    if (to_string(p) == name) return p;
  fail(ErrorKind::config, "unknown padding mode '" + name +
                              "' (expected interpolation, zero, replicate, reflective, reflective_at_input or none)");
}

void NetworkSpec::validate() const {
  if (base_channels < 1) fail(ErrorKind::config, "base_channels must be >= 1");
  if (residual_blocks < 0) fail(ErrorKind::config, "residual_blocks must be >= 0");
  if (variant == Variant::rnn && padding == PaddingMode::none)
    fail(ErrorKind::config, "the recurrent network needs a size-preserving padding mode (not 'none')");
}

nlohmann::json NetworkSpec::to_json() const {
  return {{"variant", to_string(variant)},
          {"padding", to_string(padding)},
          {"base_channels", base_channels},
          {"residual_blocks", residual_blocks}};
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.padding = parse_padding_mode(j.at("padding").get<std::string>());
  s.base_channels = j.at("base_channels").get<int>();
  s.residual_blocks = j.at("residual_blocks").get<int>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint

const Tensor<float>& Checkpoint::parameter(const std::string& name) const {
  for (const auto& [n, t] : parameters)
    if (n == name) return t;
  fail(ErrorKind::contract, "checkpoint has no parameter '" + name + "'");
}

std::string Checkpoint::config_hash() const {
  const std::string text = train_config.dump() + spec.to_json().dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

std::uint64_t Checkpoint::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [n, t] : parameters) h = checksum(t, fnv1a(n.data(), n.size(), h));
  return h;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  Archive a;
  a.meta = {{"format", "fdbstyle-checkpoint"},
            {"version", 1},
            {"network", spec.to_json()},
            {"stage", stage},
            {"iteration", iteration},
            {"train_config", train_config},
            {"config_hash", config_hash()},
            {"optimizer_step", optimizer_step},
            {"extra", extra}};
  for (const auto& [n, t] : parameters) a.tensors.emplace_back("param/" + n, t);
  for (const auto& [n, t] : optimizer_state) a.tensors.emplace_back("optim/" + n, t);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_archive(a, tmp);
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  if (a.meta.value("format", "") != "fdbstyle-checkpoint")
    fail(ErrorKind::format, "'" + path.string() + "' is not a stylization-network checkpoint");
  Checkpoint c;
  try {
    c.spec = NetworkSpec::from_json(a.meta.at("network"));
    c.stage = a.meta.at("stage").get<std::string>();
    c.iteration = a.meta.at("iteration").get<std::int64_t>();
    c.train_config = a.meta.at("train_config");
    c.optimizer_step = a.meta.value("optimizer_step", std::int64_t{0});
    c.extra = a.meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "'" + path.string() + "' has malformed metadata: " + e.what());
  }
  for (auto& [n, t] : a.tensors) {
    if (n.rfind("param/", 0) == 0)
      c.parameters.emplace_back(n.substr(6), std::move(t));
    else if (n.rfind("optim/", 0) == 0)
      c.optimizer_state.emplace_back(n.substr(6), std::move(t));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Network

namespace {

struct ConvDef {
  std::string name;
  int in, out, k;
};

std::vector<ConvDef> conv_defs(const NetworkSpec& s) {
  const int c = s.base_channels;
  std::vector<ConvDef> d{{"c1", s.input_channels(), c, 9}, {"c2", c, 2 * c, 3}, {"c3", 2 * c, 4 * c, 3}};
  for (int r = 0; r < s.residual_blocks; ++r) {
    const std::string p = "r" + std::to_string(r + 1);
    d.push_back({p + ".c1", 4 * c, 4 * c, 3});
    d.push_back({p + ".c2", 4 * c, 4 * c, 3});
  }
  d.push_back({"u1", 4 * c, 2 * c, 3});
  d.push_back({"u2", 2 * c, c, 3});
  d.push_back({"out", c, 3, 9});
  return d;
}

// Instance norms follow every convolution except the output one; the norm
// shares the convolution's prefix: "c1" → "c1.norm".
bool has_norm(const std::string& conv) { return conv != "out"; }

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Output extent of the unpadded network along one axis, or -1 when a stage
// would collapse.
int none_extent(int h, int blocks) {
  auto valid = [](int x) { return x >= 1; };
  h -= 8;
  if (!valid(h)) return -1;
  for (int i = 0; i < 2; ++i) {
    if (h < 3) return -1;
    h = (h - 3) / 2 + 1;
  }
  h -= 4 * blocks;
  if (!valid(h)) return -1;
  for (int i = 0; i < 2; ++i) {
    h = 2 * h - 2;
    if (!valid(h)) return -1;
  }
  h -= 8;
  return valid(h) ? h : -1;
}

// Smallest input margin for which the unpadded network covers `h`.
int input_margin(int h, int blocks) {
  for (int p = 0; p < 4096; ++p) {
    const int e = none_extent(h + 2 * p, blocks);
    if (e >= h) return p;
  }
  fail(ErrorKind::contract, "no input margin found for extent " + std::to_string(h));
}

template <typename T>
Var<T> center_crop(const Var<T>& x, int h, int w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  return ops::crop(x, (x.dim(2) - h) / 2, (x.dim(3) - w) / 2, h, w);
}

}  // namespace

template <typename T>
StylizationNetwork<T> StylizationNetwork<T>::create(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  StylizationNetwork net;
  net.spec_ = spec;
  std::mt19937_64 rng(seed);
  for (const ConvDef& d : conv_defs(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.in * d.k * d.k));
    net.params_.push_back({d.name + ".weight", Var<T>::leaf(uniform_tensor<T>({d.out, d.in, d.k, d.k}, bound, rng))});
    net.params_.push_back({d.name + ".bias", Var<T>::leaf(uniform_tensor<T>({d.out}, bound, rng))});
    if (has_norm(d.name)) {
      net.params_.push_back({d.name + ".norm.gamma", Var<T>::leaf(Tensor<T>({d.out}, T(1)))});
      net.params_.push_back({d.name + ".norm.beta", Var<T>::leaf(Tensor<T>({d.out}, T(0)))});
    }
  }
  return net;
}

template <typename T>
StylizationNetwork<T> StylizationNetwork<T>::from_checkpoint(const Checkpoint& ckpt) {
  StylizationNetwork net = create(ckpt.spec, 0);
  require(ckpt.parameters.size() == net.params_.size(),
          "checkpoint holds " + std::to_string(ckpt.parameters.size()) + " parameters, the " +
              to_string(ckpt.spec.variant) + " network needs " + std::to_string(net.params_.size()));
  for (auto& p : net.params_) {
    const Tensor<float>& src = ckpt.parameter(p.name);
    require(src.shape() == p.value.shape(), "checkpoint parameter '" + p.name + "' has shape " +
                                                shape_string(src.shape()) + ", expected " +
                                                shape_string(p.value.shape()));
    p.value.mutable_value() = src.template cast<T>();
  }
  return net;
}

template <typename T>
const Var<T>& StylizationNetwork<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  fail(ErrorKind::contract, "network has no parameter '" + name + "'");
}

template <typename T>
Var<T> StylizationNetwork<T>::conv(const Var<T>& x, const std::string& name, int stride, bool same_size) const {
  const Var<T>& w = parameter(name + ".weight");
  const Var<T>& b = parameter(name + ".bias");
  const int k = w.dim(2);
  Var<T> in = x;
  if (same_size) {
    const int h = x.dim(2), wd = x.dim(3);
    // Input extent at which a valid convolution yields ceil(h / stride).
    const int ph = ((h + stride - 1) / stride - 1) * stride + k - h;
    const int pw = ((wd + stride - 1) / stride - 1) * stride + k - wd;
    switch (spec_.padding) {
      case PaddingMode::interpolation:
        in = ops::interpolation_pad(x, h + ph, wd + pw);
        break;
      case PaddingMode::zero:
        in = ops::pad(x, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2, BorderPad::zero);
        break;
      case PaddingMode::replicate:
        in = ops::pad(x, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2, BorderPad::replicate);
        break;
      case PaddingMode::reflective:
        in = ops::pad(x, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2, BorderPad::reflect);
        break;
      default:
        break;
    }
  }
  return ops::conv2d(in, w, b, stride, 0);
}

template <typename T>
Var<T> StylizationNetwork<T>::norm_relu(const Var<T>& x, const std::string& name, bool relu) const {
  Var<T> y = ops::instance_norm(x, parameter(name + ".norm.gamma"), parameter(name + ".norm.beta"), T(1e-5));
  return relu ? ops::relu(y) : y;
}

template <typename T>
Var<T> StylizationNetwork<T>::body(const Var<T>& x, PaddingMode mode) const {
  const bool same = mode != PaddingMode::none;
  Var<T> h = norm_relu(conv(x, "c1", 1, same), "c1", true);
  h = norm_relu(conv(h, "c2", 2, same), "c2", true);
  h = norm_relu(conv(h, "c3", 2, same), "c3", true);
  for (int r = 0; r < spec_.residual_blocks; ++r) {
    const std::string p = "r" + std::to_string(r + 1);
    Var<T> y = norm_relu(conv(h, p + ".c1", 1, same), p + ".c1", true);
    y = norm_relu(conv(y, p + ".c2", 1, same), p + ".c2", false);
    h = center_crop(h, y.dim(2), y.dim(3)) + y;
  }
  h = norm_relu(conv(ops::upsample_nearest(h, 2), "u1", 1, same), "u1", true);
  h = norm_relu(conv(ops::upsample_nearest(h, 2), "u2", 1, same), "u2", true);
  return ops::unit_tanh(conv(h, "out", 1, same));
}

template <typename T>
Var<T> StylizationNetwork<T>::forward(const Var<T>& x) const {
  require(x.value().rank() == 4 && x.dim(1) == spec_.input_channels(),
          "stylization network (" + to_string(spec_.variant) + ") expects N×" +
              std::to_string(spec_.input_channels()) + "×H×W input, got " + shape_string(x.shape()));
  const Size2 out = output_size({x.dim(2), x.dim(3)});
  if (spec_.padding == PaddingMode::none) return body(x, PaddingMode::none);
  if (spec_.padding == PaddingMode::reflective_at_input) {
    const int p = std::max(input_margin(x.dim(2), spec_.residual_blocks), input_margin(x.dim(3), spec_.residual_blocks));
    return center_crop(body(ops::pad(x, p, p, p, p, BorderPad::reflect), PaddingMode::none), out.height, out.width);
  }
  return center_crop(body(x, spec_.padding), out.height, out.width);
}

template <typename T>
Size2 StylizationNetwork<T>::output_size(Size2 input) const {
  require(input.height >= 1 && input.width >= 1, "output_size: empty input");
  if (spec_.padding != PaddingMode::none) return input;
  const int h = none_extent(input.height, spec_.residual_blocks);
  const int w = none_extent(input.width, spec_.residual_blocks);
  require(h >= 1 && w >= 1, "input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                                " is too small for the unpadded network");
  return {h, w};
}

template <typename T>
Frame StylizationNetwork<T>::stylize(const Frame& frame) const {
  require(spec_.variant == Variant::sfn, "stylize: network is not an SFN");
  NoGradGuard guard;
  Var<T> y = forward(Var<T>::constant(frame.batched().template cast<T>()));
  return Frame(y.value().reshaped({3, y.dim(2), y.dim(3)}).template cast<float>());
}

template <typename T>
std::pair<Frame, RnnState> StylizationNetwork<T>::step(const RnnState& state, const Frame& frame) const {
  require(spec_.variant == Variant::rnn, "step: network is not an RNN");
  const Frame prev = state.previous_stylized.data().empty() ? Frame::zeros(frame.height(), frame.width())
                                                            : state.previous_stylized;
  require(prev.size() == frame.size(), "RNN state is " + std::to_string(prev.height()) + "x" +
                                           std::to_string(prev.width()) + " but the frame is " +
                                           std::to_string(frame.height()) + "x" + std::to_string(frame.width()));
  NoGradGuard guard;
  Var<T> x = ops::concat_channels(Var<T>::constant(prev.batched().template cast<T>()),
                                  Var<T>::constant(frame.batched().template cast<T>()));
  Var<T> y = forward(x);
  Frame out(y.value().reshaped({3, y.dim(2), y.dim(3)}).template cast<float>());
  return {out, RnnState{out}};
}

template <typename T>
NamedTensors StylizationNetwork<T>::export_parameters() const {
  NamedTensors out;
  for (const auto& p : params_) out.emplace_back(p.name, p.value.value().template cast<float>());
  return out;
}

template <typename T>
std::uint64_t StylizationNetwork<T>::parameter_checksum() const {
  Checkpoint c;
  c.parameters = export_parameters();
  return c.parameter_checksum();
}

template <typename T>
StylizationNetwork<T> init_rnn_from_sfn(const Checkpoint& sfn, std::uint64_t seed) {
  require(sfn.spec.variant == Variant::sfn, "init_rnn_from_sfn: checkpoint holds an " + to_string(sfn.spec.variant) +
                                                " network, expected sfn");
  // Validates shapes and completeness of the source.
  StylizationNetwork<T> source = StylizationNetwork<T>::from_checkpoint(sfn);
  NetworkSpec spec = sfn.spec;
  spec.variant = Variant::rnn;
  StylizationNetwork<T> rnn = StylizationNetwork<T>::create(spec, seed);
  for (auto& p : rnn.parameters()) {
    if (p.name == "c1.weight" || p.name == "c1.bias") continue;
    p.value.mutable_value() = source.parameter(p.name).value();
  }
  return rnn;
}

template <typename T>
std::vector<Frame> rnn_unroll(const StylizationNetwork<T>& net, const std::vector<Frame>& frames) {
  std::vector<Frame> out;
  RnnState state;
  for (const Frame& f : frames) {
    auto [y, next] = net.step(state, f);
    out.push_back(std::move(y));
    state = std::move(next);
  }
  return out;
}

template class StylizationNetwork<float>;
template class StylizationNetwork<double>;
template StylizationNetwork<float> init_rnn_from_sfn<float>(const Checkpoint&, std::uint64_t);
template StylizationNetwork<double> init_rnn_from_sfn<double>(const Checkpoint&, std::uint64_t);
template std::vector<Frame> rnn_unroll<float>(const StylizationNetwork<float>&, const std::vector<Frame>&);
template std::vector<Frame> rnn_unroll<double>(const StylizationNetwork<double>&, const std::vector<Frame>&);

}  // namespace fdb
