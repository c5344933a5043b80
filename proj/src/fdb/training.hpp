#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdb/networks.hpp"
#include "fdb/temporal.hpp"

namespace fdb {

struct TrainConfig {
  double lambda1 = 1.0;   // content
  double lambda2 = 10.0;  // style
  double lambda3 = 400.0; // temporal

  int stage1_iters = 20000;
  double stage1_lr = 1e-3;
  int stage1_batch = 4;

  int finetune_epochs = 2;
  int finetune_iters = 0;  // > 0 overrides the epoch-derived count
  double finetune_lr = 1e-4;
  // SFN: frame pairs per iteration. RNN: length of the consecutive-frame
  // tuple that is unrolled per iteration. 0 selects 2 (SFN) or 4 (RNN).
  int finetune_batch = 0;

  std::optional<Size2> train_size;  // frames and style image are resized to this; native size when unset

  NetworkSpec network;
  SpatialLossConfig spatial;
  TemporalLossConfig temporal;
  std::uint64_t seed = 0;

  int finetune_batch_for(Variant v) const { return finetune_batch > 0 ? finetune_batch : (v == Variant::rnn ? 4 : 2); }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double total = 0;
  double content = 0;
  double style = 0;
  double temporal = 0;
  int temporal_pairs = 0;  // frame-pair terms inside the temporal loss
};

// Frozen pieces shared by every iteration.
template <typename T>
struct LossContext {
  const LossNetwork<T>* net = nullptr;
  std::map<int, GramMatrix<T>> style_grams;
  SpatialLossConfig spatial;
};

template <typename T>
LossContext<T> make_loss_context(const LossNetwork<T>& net, const Frame& style, const SpatialLossConfig& spatial);

// λ1 · mean content loss + λ2 · mean style loss + λ3 · temporal loss over a
// tuple. Each entry of `stylized`/`content` is one time step, N×3×H×W with
// N tuples in the batch; content and style are averaged over all N·T frames.
// OFB needs one flow (2×H×W) and mask (H×W) per adjacent pair; flows and
// masks are indexed [pair][batch item].
template <typename T>
std::pair<Var<T>, LossBreakdown> total_loss(const LossContext<T>& ctx, const std::vector<Var<T>>& stylized,
                                            const std::vector<Var<T>>& content, const TrainConfig& cfg,
                                            const std::vector<std::vector<Tensor<T>>>& flows = {},
                                            const std::vector<std::vector<Tensor<T>>>& masks = {},
                                            const std::string& label = "");

struct IterationLog {
  std::int64_t iter = 0;
  LossBreakdown loss;
  double wall_ms = 0;
  nlohmann::json to_json() const;
};

struct TrainHooks {
  std::filesystem::path log_path;          // JSON lines, appended; empty disables
  std::filesystem::path checkpoint_path;   // periodic checkpoints; empty disables
  int checkpoint_every = 0;
  std::int64_t stop_after = 0;             // > 0: stop once this iteration is done (for resume tests)
  std::function<void(const IterationLog&)> on_iteration;
};

// Adam with bias correction; one moment pair per parameter.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::vector<NamedParam<float>>& params);
  std::int64_t steps() const { return t_; }
  NamedTensors state() const;
  void load_state(const NamedTensors& state, std::int64_t steps, const std::vector<NamedParam<float>>& params);

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
  std::vector<std::string> names_;
};

// Iterations of one finetuning run: finetune_iters, or epochs × floor(tuples / batch).
std::int64_t finetune_iterations(const TrainConfig& cfg, std::size_t eligible_tuples, Variant variant);

// Stage 1: single-image stylization without a temporal term.
Checkpoint train_sfn_stage1(const DatasetIndex& images, const TrainConfig& cfg, const Frame& style,
                            const LossNetwork<float>& net, const TrainHooks& hooks = {},
                            const Checkpoint* resume = nullptr);

// Stage 2 for the SFN: pairs (t, t+K) with the configured temporal loss.
Checkpoint finetune_sfn(const Checkpoint& stage1, const DatasetIndex& video, const TrainConfig& cfg, const Frame& style,
                        const LossNetwork<float>& net, const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// The network finetune_rnn starts from: the stage-1 SFN with a fresh
// six-channel first convolution seeded from `cfg.seed`.
StylizationNetwork<float> initial_rnn(const Checkpoint& stage1, const TrainConfig& cfg);

// Stage 2 for the RNN: built from the SFN via init_rnn_from_sfn, unrolled
// over tuples of consecutive frames with full backpropagation.
Checkpoint finetune_rnn(const Checkpoint& stage1, const DatasetIndex& video, const TrainConfig& cfg, const Frame& style,
                        const LossNetwork<float>& net, const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

}  // namespace fdb
