#include "fdb/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "fdb/ops.hpp"

namespace fdb {

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  for (double l : {lambda1, lambda2, lambda3})
    if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorKind::config, "loss weights lambda1..3 must be finite and >= 0");
  if (stage1_iters < 1 || stage1_batch < 1 || finetune_epochs < 1 || finetune_iters < 0 || finetune_batch < 0)
    fail(ErrorKind::config, "iteration counts, epochs and batch sizes must be positive");
  if (!(stage1_lr > 0.0) || !(finetune_lr > 0.0)) fail(ErrorKind::config, "learning rates must be > 0");
  if (train_size && (train_size->height < 1 || train_size->width < 1))
    fail(ErrorKind::config, "train_size must be positive");
  network.validate();
  spatial.validate();
  temporal.validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json content = nlohmann::json::object(), style = nlohmann::json::object();
  for (const auto& [id, w] : spatial.content_layers) content[std::to_string(id)] = w;
  for (const auto& [id, w] : spatial.style_layers) style[std::to_string(id)] = w;
  nlohmann::json j = {
      {"lambda1", lambda1},
      {"lambda2", lambda2},
      {"lambda3", lambda3},
      {"stage1_iters", stage1_iters},
      {"stage1_lr", stage1_lr},
      {"stage1_batch", stage1_batch},
      {"finetune_epochs", finetune_epochs},
      {"finetune_iters", finetune_iters},
      {"finetune_lr", finetune_lr},
      {"finetune_batch", finetune_batch},
      {"network", network.to_json()},
      {"content_layers", content},
      {"style_layers", style},
      {"temporal",
       {{"kind", to_string(temporal.kind)},
        {"feature_layer", temporal.feature_layer},
        {"frame_interval", temporal.frame_interval},
        {"c_fdb_pixel_weight", temporal.c_fdb_pixel_weight},
        {"c_fdb_feature_weight", temporal.c_fdb_feature_weight}}},
      {"seed", seed},
  };
  j["train_size"] = train_size ? nlohmann::json{train_size->height, train_size->width} : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lambda1 = j.at("lambda1");
    c.lambda2 = j.at("lambda2");
    c.lambda3 = j.at("lambda3");
    c.stage1_iters = j.at("stage1_iters");
    c.stage1_lr = j.at("stage1_lr");
    c.stage1_batch = j.at("stage1_batch");
    c.finetune_epochs = j.at("finetune_epochs");
    c.finetune_iters = j.at("finetune_iters");
    c.finetune_lr = j.at("finetune_lr");
    c.finetune_batch = j.at("finetune_batch");
    c.network = NetworkSpec::from_json(j.at("network"));
    c.spatial.content_layers.clear();
    c.spatial.style_layers.clear();
    for (const auto& [k, v] : j.at("content_layers").items()) c.spatial.content_layers[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("style_layers").items()) c.spatial.style_layers[std::stoi(k)] = v.get<double>();
    const auto& t = j.at("temporal");
    c.temporal.kind = parse_temporal_kind(t.at("kind"));
    c.temporal.feature_layer = t.at("feature_layer");
    c.temporal.frame_interval = t.at("frame_interval");
    c.temporal.c_fdb_pixel_weight = t.at("c_fdb_pixel_weight");
    c.temporal.c_fdb_feature_weight = t.at("c_fdb_feature_weight");
    c.seed = j.at("seed");
    if (!j.at("train_size").is_null()) c.train_size = Size2{j.at("train_size")[0], j.at("train_size")[1]};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed training-config snapshot: ") + e.what());
  }
  return c;
}

nlohmann::json IterationLog::to_json() const {
  return {{"iter", iter},          {"L_total", loss.total}, {"L_cont", loss.content},
          {"L_sty", loss.style},   {"L_temp", loss.temporal}, {"wall_ms", wall_ms}};
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
LossContext<T> make_loss_context(const LossNetwork<T>& net, const Frame& style, const SpatialLossConfig& spatial) {
  spatial.validate();
  return {&net, style_grams(net, style, spatial), spatial};
}

namespace {

template <typename T>
Var<T> center_crop_to(const Var<T>& x, int h, int w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  return ops::crop(x, (x.dim(2) - h) / 2, (x.dim(3) - w) / 2, h, w);
}

template <typename T>
std::map<int, Var<T>> slice_features(const std::map<int, Var<T>>& f, int n) {
  std::map<int, Var<T>> out;
  for (const auto& [id, v] : f) out.emplace(id, v.dim(0) == 1 ? v : ops::slice_batch(v, n));
  return out;
}

}  // namespace

template <typename T>
std::pair<Var<T>, LossBreakdown> total_loss(const LossContext<T>& ctx, const std::vector<Var<T>>& stylized,
                                            const std::vector<Var<T>>& content_in, const TrainConfig& cfg,
                                            const std::vector<std::vector<Tensor<T>>>& flows,
                                            const std::vector<std::vector<Tensor<T>>>& masks,
                                            const std::string& label) {
  require(ctx.net != nullptr, "total_loss: loss context has no network");
  require(!stylized.empty() && stylized.size() == content_in.size(),
          "total_loss: stylized and content tuples must be non-empty and of equal length");
  const TemporalLossConfig& tc = cfg.temporal;
  const int steps = static_cast<int>(stylized.size());
  if (tc.kind != TemporalKind::none)
    require(steps >= tc.frame_interval + 1, "total_loss: a temporal loss needs at least " +
                                                std::to_string(tc.frame_interval + 1) + " frames per tuple");
  const int batch = stylized[0].dim(0);
  const int h = stylized[0].dim(2), w = stylized[0].dim(3);

  // Unpadded networks shrink their output; compare against the matching centre.
  std::vector<Var<T>> content;
  for (const auto& c : content_in) {
    require(c.dim(0) == batch, "total_loss: batch sizes differ");
    content.push_back(center_crop_to(c, h, w));
  }

  std::set<int> stylized_ids = ctx.spatial.layer_ids();
  std::set<int> content_ids;
  for (const auto& [id, wt] : ctx.spatial.content_layers) content_ids.insert(id);
  if (tc.needs_features()) {
    stylized_ids.insert(tc.feature_layer);
    content_ids.insert(tc.feature_layer);
  }

  Var<T> content_sum = Var<T>::constant(Tensor<T>::scalar(0));
  Var<T> style_sum = Var<T>::constant(Tensor<T>::scalar(0));
  std::vector<Var<T>> stylized_feat, content_feat;
  for (int t = 0; t < steps; ++t) {
    std::map<int, Var<T>> sf = ctx.net->extract(stylized[t], stylized_ids);
    std::map<int, Var<T>> cf;
    {
      NoGradGuard guard;
      cf = ctx.net->extract(content[t], content_ids);
    }
    content_sum = content_sum + content_loss_from_features(sf, cf, ctx.spatial);
    for (int n = 0; n < batch; ++n)
      style_sum = style_sum + style_loss_from_features(slice_features(sf, n), ctx.style_grams, ctx.spatial);
    if (tc.needs_features()) {
      stylized_feat.push_back(sf.at(tc.feature_layer));
      content_feat.push_back(cf.at(tc.feature_layer));
    }
  }
  const T frames = static_cast<T>(steps * batch);
  const Var<T> l_content = (T(1) / frames) * content_sum;
  const Var<T> l_style = (T(1) / frames) * style_sum;

  LossBreakdown br;
  Var<T> l_temp = Var<T>::constant(Tensor<T>::scalar(0));
  const double pixels = static_cast<double>(h) * w;
  switch (tc.kind) {
    case TemporalKind::none:
      break;
    case TemporalKind::p_fdb:
      l_temp = fdb_loss(stylized, content, tc.frame_interval, pixels);
      br.temporal_pairs = steps - tc.frame_interval;
      break;
    case TemporalKind::f_fdb:
      l_temp = fdb_loss(stylized_feat, content_feat, tc.frame_interval, pixels);
      br.temporal_pairs = steps - tc.frame_interval;
      break;
    case TemporalKind::c_fdb:
      l_temp = T(tc.c_fdb_pixel_weight) * fdb_loss(stylized, content, tc.frame_interval, pixels) +
               T(tc.c_fdb_feature_weight) * fdb_loss(stylized_feat, content_feat, tc.frame_interval, pixels);
      br.temporal_pairs = steps - tc.frame_interval;
      break;
    case TemporalKind::ofb: {
      const std::string where = label.empty() ? std::string("tuple") : "'" + label + "'";
      for (int p = 0; p + 1 < steps; ++p) {
        if (p >= static_cast<int>(flows.size()) || p >= static_cast<int>(masks.size()) ||
            static_cast<int>(flows[p].size()) != batch || static_cast<int>(masks[p].size()) != batch)
          fail(ErrorKind::data, "optical-flow loss: missing flow or mask for " + where + " pair index " +
                                    std::to_string(p));
      }
      for (int n = 0; n < batch; ++n) {
        std::vector<Var<T>> seq;
        std::vector<Tensor<T>> f, m;
        for (int t = 0; t < steps; ++t) seq.push_back(batch == 1 ? stylized[t] : ops::slice_batch(stylized[t], n));
        for (int p = 0; p + 1 < steps; ++p) {
          f.push_back(flows[p][n]);
          m.push_back(masks[p][n]);
        }
        l_temp = l_temp + ofb_loss(seq, f, m);
      }
      l_temp = (T(1) / T(batch)) * l_temp;
      br.temporal_pairs = steps - 1;
      break;
    }
  }

  Var<T> total = T(cfg.lambda1) * l_content + T(cfg.lambda2) * l_style + T(cfg.lambda3) * l_temp;
  br.content = l_content.item();
  br.style = l_style.item();
  br.temporal = l_temp.item();
  br.total = total.item();
  return {total, br};
}

// ---------------------------------------------------------------------------
// Optimiser

void Adam::step(std::vector<NamedParam<float>>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
      names_.push_back(p.name);
    }
  }
  require(m_.size() == params.size(), "Adam: parameter set changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float step_size = static_cast<float>(lr_ / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_), eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& var = params[i].value;
    if (!var.has_grad()) continue;
    const Tensor<float>& g = var.node()->grad;
    Tensor<float>& p = var.mutable_value();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.emplace_back("m/" + names_[i], m_[i]);
    out.emplace_back("v/" + names_[i], v_[i]);
  }
  return out;
}

void Adam::load_state(const NamedTensors& state, std::int64_t steps, const std::vector<NamedParam<float>>& params) {
  m_.clear();
  v_.clear();
  names_.clear();
  t_ = steps;
  if (state.empty()) return;
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [n, t] : state) by_name[n] = &t;
  for (const auto& p : params) {
    auto m = by_name.find("m/" + p.name);
    auto v = by_name.find("v/" + p.name);
    require(m != by_name.end() && v != by_name.end(), "optimizer state lacks moments for '" + p.name + "'");
    require(m->second->shape() == p.value.shape() && v->second->shape() == p.value.shape(),
            "optimizer state for '" + p.name + "' has the wrong shape");
    m_.push_back(*m->second);
    v_.push_back(*v->second);
    names_.push_back(p.name);
  }
}

// ---------------------------------------------------------------------------
// Training loops

std::int64_t finetune_iterations(const TrainConfig& cfg, std::size_t eligible_tuples, Variant variant) {
  if (cfg.finetune_iters > 0) return cfg.finetune_iters;
  const std::size_t per_iter = variant == Variant::rnn ? 1 : static_cast<std::size_t>(cfg.finetune_batch_for(variant));
  return static_cast<std::int64_t>(cfg.finetune_epochs) *
         static_cast<std::int64_t>(std::max<std::size_t>(1, eligible_tuples / per_iter));
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, purpose, a, b); resuming never needs saved RNG state.
std::uint64_t derive_seed(std::uint64_t seed, const char* purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix(seed ^ fnv1a(purpose, std::char_traits<char>::length(purpose)));
  h = mix(h ^ a);
  return mix(h ^ (b * 0x2545f4914f6cdd1dULL));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class FrameCache {
 public:
  explicit FrameCache(std::optional<Size2> size) : size_(size) {}
  const Frame& get(const std::filesystem::path& path) {
    auto it = frames_.find(path.string());
    if (it != frames_.end()) return it->second;
    Frame f = load_frame(path, size_);
    if (frames_.size() >= kCapacity) frames_.clear();
    return frames_.emplace(path.string(), std::move(f)).first->second;
  }

 private:
  static constexpr std::size_t kCapacity = 1024;
  std::optional<Size2> size_;
  std::map<std::string, Frame> frames_;
};

Var<float> batch_var(const std::vector<const Frame*>& frames) {
  const Frame& first = *frames.front();
  for (const Frame* f : frames)
    if (f->size() != first.size())
      fail(ErrorKind::data, "frames in one batch differ in size; set train_size to resize them");
  Tensor<float> t({static_cast<int>(frames.size()), 3, first.height(), first.width()});
  const std::size_t plane = first.data().size();
  for (std::size_t i = 0; i < frames.size(); ++i)
    std::copy(frames[i]->data().data(), frames[i]->data().data() + plane, t.data() + i * plane);
  return Var<float>::constant(std::move(t));
}

Size2 training_size(const TrainConfig& cfg, const DatasetIndex& index) {
  if (cfg.train_size) return *cfg.train_size;
  for (const auto& c : index.clips)
    if (!c.frame_paths.empty()) return load_frame(c.frame_paths.front()).size();
  fail(ErrorKind::data, "dataset '" + index.root.string() + "' is empty");
}

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const LossNetwork<float>& net, const Frame& style, Size2 size, const TrainHooks& hooks)
      : cfg_(cfg), net_(net), hooks_(hooks), size_(size) {
    ctx_ = make_loss_context(net, resize_frame(style, size), cfg.spatial);
    net_checksum_ = net.checksum();
    if (!hooks.log_path.empty()) {
      if (hooks.log_path.has_parent_path()) std::filesystem::create_directories(hooks.log_path.parent_path());
      log_.open(hooks.log_path, std::ios::app);
      if (!log_) fail(ErrorKind::io, "cannot open training log '" + hooks.log_path.string() + "'");
    }
  }

  // One optimisation step over a tuple; returns the breakdown.
  LossBreakdown step(StylizationNetwork<float>& model, Adam& opt, const std::vector<Var<float>>& stylized,
                     const std::vector<Var<float>>& content, const TrainConfig& loss_cfg,
                     const std::vector<std::vector<Tensor<float>>>& flows,
                     const std::vector<std::vector<Tensor<float>>>& masks, const std::string& label) {
    auto [loss, br] = total_loss(ctx_, stylized, content, loss_cfg, flows, masks, label);
    if (!std::isfinite(br.total)) fail(ErrorKind::runtime, "training diverged: non-finite loss");
    for (auto& p : model.parameters()) p.value.zero_grad();
    backward(loss);
    opt.step(model.parameters());
    return br;
  }

  void record(std::int64_t iter, const LossBreakdown& br, double ms) {
    IterationLog entry{iter, br, ms};
    if (log_.is_open()) log_ << entry.to_json().dump() << '\n' << std::flush;
    if (hooks_.on_iteration) hooks_.on_iteration(entry);
  }

  bool should_stop(std::int64_t iter) const { return hooks_.stop_after > 0 && iter >= hooks_.stop_after; }

  void maybe_checkpoint(std::int64_t iter, const std::function<Checkpoint()>& make) const {
    if (hooks_.checkpoint_every > 0 && !hooks_.checkpoint_path.empty() && iter % hooks_.checkpoint_every == 0)
      make().save(hooks_.checkpoint_path);
  }

  Checkpoint finish(const StylizationNetwork<float>& model, const Adam& opt, const std::string& stage,
                    std::int64_t iter, std::int64_t total) const {
    if (net_.checksum() != net_checksum_)
      fail(ErrorKind::runtime, "loss-network parameters changed during training");
    Checkpoint c;
    c.spec = model.spec();
    c.stage = stage;
    c.iteration = iter;
    c.train_config = cfg_.to_json();
    c.parameters = model.export_parameters();
    c.optimizer_state = opt.state();
    c.optimizer_step = opt.steps();
    c.extra = {{"loss_network_checksum", hex64(net_checksum_)},
               {"loss_network_origin", net_.origin()},
               {"total_iterations", total},
               {"complete", iter >= total}};
    return c;
  }

  Size2 size() const { return size_; }

 private:
  TrainConfig cfg_;
  const LossNetwork<float>& net_;
  TrainHooks hooks_;
  Size2 size_;
  LossContext<float> ctx_;
  std::uint64_t net_checksum_ = 0;
  std::ofstream log_;
};

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void check_resume(const Checkpoint& resume, const TrainConfig& cfg, const std::string& stage, Variant variant) {
  if (resume.stage != stage || resume.spec.variant != variant)
    fail(ErrorKind::config, "cannot resume a " + resume.stage + "/" + to_string(resume.spec.variant) +
                                " checkpoint as " + stage + "/" + to_string(variant));
  if (resume.train_config != cfg.to_json())
    fail(ErrorKind::config, "resume checkpoint was produced with a different training configuration");
}

void check_spatial_carry_over(const Checkpoint& stage1, const TrainConfig& cfg) {
  if (!stage1.train_config.is_object() || !stage1.train_config.contains("lambda1")) return;
  const TrainConfig s = TrainConfig::from_json(stage1.train_config);
  if (s.lambda1 != cfg.lambda1 || s.lambda2 != cfg.lambda2 || s.spatial.content_layers != cfg.spatial.content_layers ||
      s.spatial.style_layers != cfg.spatial.style_layers)
    fail(ErrorKind::config, "finetuning must keep the stage-1 content and style weights (lambda1 = " +
                                std::to_string(s.lambda1) + ", lambda2 = " + std::to_string(s.lambda2) + ")");
}

void check_finetune_inputs(const Checkpoint& stage1, const DatasetIndex& video, const TrainConfig& cfg) {
  if (stage1.spec.variant != Variant::sfn)
    fail(ErrorKind::contract, "finetuning starts from a stage-1 SFN checkpoint, got an " +
                                  to_string(stage1.spec.variant) + " network");
  if (cfg.temporal.kind == TemporalKind::none)
    fail(ErrorKind::config, "finetuning needs a temporal loss; temporal kind 'none' only applies to stage 1");
  if (cfg.temporal.needs_flow() && !video.has_flow())
    fail(ErrorKind::data, "the optical-flow loss needs flow and mask files for every clip of '" +
                              video.root.string() + "' (expected " + video.root.string() + "_flow and " +
                              video.root.string() + "_mask)");
  check_spatial_carry_over(stage1, cfg);
}

// Flow and mask tensors for the adjacent pairs of a tuple.
void load_pair_flows(const DatasetIndex& video, const TupleRef& ref, int pairs, Size2 size,
                     std::vector<std::vector<Tensor<float>>>& flows, std::vector<std::vector<Tensor<float>>>& masks) {
  const ClipEntry& clip = video.clips[ref.clip];
  if (flows.size() < static_cast<std::size_t>(pairs)) {
    flows.resize(pairs);
    masks.resize(pairs);
  }
  for (int p = 0; p < pairs; ++p) {
    const int f = ref.frame(p);
    if (f >= static_cast<int>(clip.flow_paths.size()) || f >= static_cast<int>(clip.mask_paths.size()))
      fail(ErrorKind::data, "clip '" + clip.id + "' has no flow/mask for frame pair " + std::to_string(f));
    flows[p].push_back(resize_flow(read_flo(clip.flow_paths[f]), size).data());
    masks[p].push_back(resize_mask(read_mask(clip.mask_paths[f]), size).data());
  }
}

}  // namespace

Checkpoint train_sfn_stage1(const DatasetIndex& images, const TrainConfig& cfg_in, const Frame& style,
                            const LossNetwork<float>& net, const TrainHooks& hooks, const Checkpoint* resume) {
  TrainConfig cfg = cfg_in;
  cfg.temporal.kind = TemporalKind::none;
  cfg.network.variant = Variant::sfn;
  cfg.validate();
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t c = 0; c < images.clips.size(); ++c)
    for (std::size_t f = 0; f < images.clips[c].frame_paths.size(); ++f) pool.emplace_back(c, f);
  if (pool.empty()) fail(ErrorKind::data, "stage-1 dataset '" + images.root.string() + "' holds no images");

  Trainer trainer(cfg, net, style, training_size(cfg, images), hooks);
  FrameCache cache(cfg.train_size);
  StylizationNetwork<float> model = StylizationNetwork<float>::create(cfg.network, derive_seed(cfg.seed, "sfn-init"));
  Adam opt(cfg.stage1_lr);
  std::int64_t iter = 0;
  if (resume) {
    check_resume(*resume, cfg, "stage1", Variant::sfn);
    model = StylizationNetwork<float>::from_checkpoint(*resume);
    opt.load_state(resume->optimizer_state, resume->optimizer_step, model.parameters());
    iter = resume->iteration;
  }
  const std::int64_t total = cfg.stage1_iters;
  auto snapshot = [&] { return trainer.finish(model, opt, "stage1", iter, total); };
  while (iter < total) {
    ++iter;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<const Frame*> frames;
    for (int b = 0; b < cfg.stage1_batch; ++b) {
      std::mt19937_64 rng(derive_seed(cfg.seed, "stage1-sample", static_cast<std::uint64_t>(iter), b));
      const auto [c, f] = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      frames.push_back(&cache.get(images.clips[c].frame_paths[f]));
    }
    const Var<float> x = batch_var(frames);
    const LossBreakdown br = trainer.step(model, opt, {model.forward(x)}, {x}, cfg, {}, {}, "");
    trainer.record(iter, br, elapsed_ms(t0));
    trainer.maybe_checkpoint(iter, snapshot);
    if (trainer.should_stop(iter)) break;
  }
  return snapshot();
}

Checkpoint finetune_sfn(const Checkpoint& stage1, const DatasetIndex& video, const TrainConfig& cfg_in,
                        const Frame& style, const LossNetwork<float>& net, const TrainHooks& hooks,
                        const Checkpoint* resume) {
  TrainConfig cfg = cfg_in;
  cfg.network = stage1.spec;
  cfg.validate();
  check_finetune_inputs(stage1, video, cfg);
  const int k = cfg.temporal.frame_interval;
  const int batch = cfg.finetune_batch_for(Variant::sfn);
  const std::vector<TupleRef> tuples = enumerate_tuples(video, 2, k);
  if (tuples.empty())
    fail(ErrorKind::data, "no clip in '" + video.root.string() + "' has a frame pair at interval " + std::to_string(k));

  Trainer trainer(cfg, net, style, training_size(cfg, video), hooks);
  FrameCache cache(cfg.train_size);
  StylizationNetwork<float> model = StylizationNetwork<float>::from_checkpoint(stage1);
  Adam opt(cfg.finetune_lr);
  std::int64_t iter = 0;
  if (resume) {
    check_resume(*resume, cfg, "finetuned", Variant::sfn);
    model = StylizationNetwork<float>::from_checkpoint(*resume);
    opt.load_state(resume->optimizer_state, resume->optimizer_step, model.parameters());
    iter = resume->iteration;
  }
  // Each pair tuple is a two-frame sequence, so the temporal term spans one step.
  TrainConfig loss_cfg = cfg;
  loss_cfg.temporal.frame_interval = 1;

  const std::int64_t total = finetune_iterations(cfg, tuples.size(), Variant::sfn);
  const std::int64_t per_epoch = std::max<std::int64_t>(1, static_cast<std::int64_t>(tuples.size()) / batch);
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order(tuples.size());
  auto snapshot = [&] { return trainer.finish(model, opt, "finetuned", iter, total); };
  while (iter < total) {
    ++iter;
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t epoch = (iter - 1) / per_epoch;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(cfg.seed, "finetune-epoch", static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    const std::int64_t slot = ((iter - 1) % per_epoch) * batch;
    std::vector<const Frame*> first, second;
    std::vector<std::vector<Tensor<float>>> flows, masks;
    std::string label;
    for (int b = 0; b < batch; ++b) {
      const TupleRef& ref = tuples[order[static_cast<std::size_t>(slot + b) % order.size()]];
      const ClipEntry& clip = video.clips[ref.clip];
      first.push_back(&cache.get(clip.frame_paths[ref.frame(0)]));
      second.push_back(&cache.get(clip.frame_paths[ref.frame(1)]));
      if (cfg.temporal.needs_flow()) load_pair_flows(video, ref, 1, trainer.size(), flows, masks);
      if (b == 0) label = clip.id + ":" + std::to_string(ref.start);
    }
    const Var<float> x0 = batch_var(first);
    const Var<float> x1 = batch_var(second);
    const LossBreakdown br =
        trainer.step(model, opt, {model.forward(x0), model.forward(x1)}, {x0, x1}, loss_cfg, flows, masks, label);
    trainer.record(iter, br, elapsed_ms(t0));
    trainer.maybe_checkpoint(iter, snapshot);
    if (trainer.should_stop(iter)) break;
  }
  return snapshot();
}

StylizationNetwork<float> initial_rnn(const Checkpoint& stage1, const TrainConfig& cfg) {
  return init_rnn_from_sfn<float>(stage1, derive_seed(cfg.seed, "rnn-init"));
}

Checkpoint finetune_rnn(const Checkpoint& stage1, const DatasetIndex& video, const TrainConfig& cfg_in,
                        const Frame& style, const LossNetwork<float>& net, const TrainHooks& hooks,
                        const Checkpoint* resume) {
  TrainConfig cfg = cfg_in;
  cfg.network = stage1.spec;
  cfg.network.variant = Variant::rnn;
  cfg.validate();
  check_finetune_inputs(stage1, video, cfg);
  const int length = cfg.finetune_batch_for(Variant::rnn);
  if (length < cfg.temporal.frame_interval + 1)
    fail(ErrorKind::config, "RNN tuples of " + std::to_string(length) + " frames cannot hold a pair at interval " +
                                std::to_string(cfg.temporal.frame_interval));
  const std::vector<TupleRef> tuples = enumerate_tuples(video, length, 1);
  if (tuples.empty())
    fail(ErrorKind::data, "no clip in '" + video.root.string() + "' has " + std::to_string(length) +
                              " consecutive frames");

  Trainer trainer(cfg, net, style, training_size(cfg, video), hooks);
  FrameCache cache(cfg.train_size);
  StylizationNetwork<float> model = initial_rnn(stage1, cfg);
  Adam opt(cfg.finetune_lr);
  std::int64_t iter = 0;
  if (resume) {
    check_resume(*resume, cfg, "finetuned", Variant::rnn);
    model = StylizationNetwork<float>::from_checkpoint(*resume);
    opt.load_state(resume->optimizer_state, resume->optimizer_step, model.parameters());
    iter = resume->iteration;
  }
  const std::int64_t total = finetune_iterations(cfg, tuples.size(), Variant::rnn);
  const std::int64_t per_epoch = static_cast<std::int64_t>(tuples.size());
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order(tuples.size());
  auto snapshot = [&] { return trainer.finish(model, opt, "finetuned", iter, total); };
  while (iter < total) {
    ++iter;
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t epoch = (iter - 1) / per_epoch;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(cfg.seed, "rnn-epoch", static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    const TupleRef& ref = tuples[order[static_cast<std::size_t>((iter - 1) % per_epoch)]];
    const ClipEntry& clip = video.clips[ref.clip];
    std::vector<Var<float>> content, stylized;
    Var<float> previous;
    for (int t = 0; t < length; ++t) {
      const Var<float> x = batch_var({&cache.get(clip.frame_paths[ref.frame(t)])});
      if (!previous.defined()) previous = Var<float>::constant(Tensor<float>(x.shape()));
      const Var<float> y = model.forward(ops::concat_channels(previous, x));
      content.push_back(x);
      stylized.push_back(y);
      previous = y;
    }
    std::vector<std::vector<Tensor<float>>> flows, masks;
    if (cfg.temporal.needs_flow()) load_pair_flows(video, ref, length - 1, trainer.size(), flows, masks);
    const LossBreakdown br = trainer.step(model, opt, stylized, content, cfg, flows, masks,
                                          clip.id + ":" + std::to_string(ref.start));
    trainer.record(iter, br, elapsed_ms(t0));
    trainer.maybe_checkpoint(iter, snapshot);
    if (trainer.should_stop(iter)) break;
  }
  return snapshot();
}

template LossContext<float> make_loss_context<float>(const LossNetwork<float>&, const Frame&, const SpatialLossConfig&);
template LossContext<double> make_loss_context<double>(const LossNetwork<double>&, const Frame&,
                                                       const SpatialLossConfig&);
template std::pair<Var<float>, LossBreakdown> total_loss<float>(const LossContext<float>&,
                                                                const std::vector<Var<float>>&,
                                                                const std::vector<Var<float>>&, const TrainConfig&,
                                                                const std::vector<std::vector<Tensor<float>>>&,
                                                                const std::vector<std::vector<Tensor<float>>>&,
                                                                const std::string&);
template std::pair<Var<double>, LossBreakdown> total_loss<double>(const LossContext<double>&,
                                                                  const std::vector<Var<double>>&,
                                                                  const std::vector<Var<double>>&, const TrainConfig&,
                                                                  const std::vector<std::vector<Tensor<double>>>&,
                                                                  const std::vector<std::vector<Tensor<double>>>&,
                                                                  const std::string&);

}  // namespace fdb
