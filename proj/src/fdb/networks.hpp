#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fdb/autograd.hpp"
#include "fdb/media_io.hpp"

namespace fdb {

enum class Variant { sfn, rnn };
enum class PaddingMode { interpolation, zero, replicate, reflective, reflective_at_input, none };

std::string to_string(Variant v);
std::string to_string(PaddingMode p);
Variant parse_variant(const std::string& name);
PaddingMode parse_padding_mode(const std::string& name);
const std::vector<PaddingMode>& all_padding_modes();

// Johnson-style transformer: conv9×9 → conv3×3/2 → conv3×3/2, residual
// blocks, two (nearest ×2 upsample + conv3×3) stages and a conv9×9 output
// squashed to (0,1). Every hidden convolution is followed by instance norm
// and ReLU.
struct NetworkSpec {
  Variant variant = Variant::sfn;
  PaddingMode padding = PaddingMode::interpolation;
  int base_channels = 32;
  int residual_blocks = 5;

  int input_channels() const { return variant == Variant::rnn ? 6 : 3; }
  void validate() const;
  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

// Everything needed to rebuild a network and continue training it.
struct Checkpoint {
  NetworkSpec spec;
  std::string stage = "init";  // init, stage1 or finetuned
  std::int64_t iteration = 0;
  nlohmann::json train_config = nlohmann::json::object();
  NamedTensors parameters;
  NamedTensors optimizer_state;
  std::int64_t optimizer_step = 0;
  nlohmann::json extra = nlohmann::json::object();

  const Tensor<float>& parameter(const std::string& name) const;
  std::string config_hash() const;
  std::uint64_t parameter_checksum() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct RnnState {
  Frame previous_stylized;  // empty until the first step, then the last output

  static RnnState zeros(Size2 size) { return {Frame::zeros(size.height, size.width)}; }
};

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> value;
};

template <typename T>
class StylizationNetwork {
 public:
  // Fresh network with PyTorch-default initialisation from `seed`.
  static StylizationNetwork create(const NetworkSpec& spec, std::uint64_t seed);
  static StylizationNetwork from_checkpoint(const Checkpoint& ckpt);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<NamedParam<T>>& parameters() { return params_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }
  const Var<T>& parameter(const std::string& name) const;

  // N×C×H×W → N×3×H'×W'. H' = H except for the `none` padding mode.
  Var<T> forward(const Var<T>& x) const;
  Size2 output_size(Size2 input) const;

  // One-frame convenience wrappers (no graph recording).
  Frame stylize(const Frame& frame) const;
  std::pair<Frame, RnnState> step(const RnnState& state, const Frame& frame) const;

  // Parameters (and nothing else) as float tensors.
  NamedTensors export_parameters() const;
  std::uint64_t parameter_checksum() const;

 private:
  Var<T> conv(const Var<T>& x, const std::string& name, int stride, bool same_size) const;
  Var<T> norm_relu(const Var<T>& x, const std::string& name, bool relu) const;
  Var<T> body(const Var<T>& x, PaddingMode mode) const;

  NetworkSpec spec_;
  std::vector<NamedParam<T>> params_;
};

// Copies every parameter of a stage-1 SFN except the first convolution, which
// is re-initialised for six input channels from `seed`.
template <typename T>
StylizationNetwork<T> init_rnn_from_sfn(const Checkpoint& sfn, std::uint64_t seed);

// Frames-only RNN unroll over a clip from the zero state.
template <typename T>
std::vector<Frame> rnn_unroll(const StylizationNetwork<T>& net, const std::vector<Frame>& frames);

}  // namespace fdb
