#include "fdb/driver.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace fdb {

namespace fs = std::filesystem;

const char* to_string(LogLevel level) {
  switch (level) {
    case LogLevel::error: return "error";
    case LogLevel::warn: return "warn";
    case LogLevel::info: return "info";
    case LogLevel::debug: return "debug";
  }
  return "info";
}

LogLevel parse_log_level(const std::string& s) {
  for (LogLevel l : {LogLevel::error, LogLevel::warn, LogLevel::info, LogLevel::debug})
    if (s == to_string(l)) return l;
  fail(ErrorKind::config, "unknown log level '" + s + "' (expected error, warn, info or debug)");
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::validation:
    case ErrorKind::data: return 3;
    case ErrorKind::contract:
    case ErrorKind::runtime: return 4;
  }
  return 4;
}

// ---------------------------------------------------------------------------
// TOML schema

namespace {

std::string join(const std::string& where, std::string_view key) {
  return where.empty() ? std::string(key) : where + "." + std::string(key);
}

void reject_unknown(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : t)
    if (!allowed.count(std::string(k.str())))
      fail(ErrorKind::config, "unknown config key '" + join(where, k.str()) + "'");
}

const toml::table* section(const toml::table& t, const std::string& key) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) fail(ErrorKind::config, "config key '" + key + "' must be a table");
  return n->as_table();
}

template <typename T>
void read_int(const toml::table& t, const std::string& where, const std::string& key, T& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  if (!n->is_integer()) fail(ErrorKind::config, "config key '" + join(where, key) + "' must be an integer");
  const std::int64_t v = n->as_integer()->get();
  if constexpr (std::is_unsigned_v<T>) {
    if (v < 0) fail(ErrorKind::config, "config key '" + join(where, key) + "' must be >= 0");
  } else {
    if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max())
      fail(ErrorKind::config, "config key '" + join(where, key) + "' is out of range");
  }
  out = static_cast<T>(v);
}

double as_number(const toml::node& n, const std::string& name) {
  if (n.is_integer()) return static_cast<double>(n.as_integer()->get());
  if (n.is_floating_point()) return n.as_floating_point()->get();
  fail(ErrorKind::config, "config key '" + name + "' must be a number");
}

void read_double(const toml::table& t, const std::string& where, const std::string& key, double& out) {
  if (const toml::node* n = t.get(key)) out = as_number(*n, join(where, key));
}

void read_string(const toml::table& t, const std::string& where, const std::string& key, std::string& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  if (!n->is_string()) fail(ErrorKind::config, "config key '" + join(where, key) + "' must be a string");
  out = n->as_string()->get();
}

void read_path(const toml::table& t, const std::string& where, const std::string& key, const fs::path& base,
               fs::path& out) {
  std::string s;
  if (!t.get(key)) return;
  read_string(t, where, key, s);
  if (s.empty()) {
    out.clear();
    return;
  }
  fs::path p(s);
  out = p.is_absolute() ? p : (base / p).lexically_normal();
}

int layer_ref(const std::string& ref, const std::string& name) {
  for (const LayerInfo& l : loss_network_layers())
    if (l.name == ref) return l.id;
  try {
    std::size_t used = 0;
    const int id = std::stoi(ref, &used);
    if (used == ref.size() && id >= 1 && id <= kMaxLossLayer) return id;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::config, "config key '" + name + "': unknown loss-network layer '" + ref + "'");
}

int layer_node(const toml::node& n, const std::string& name) {
  if (n.is_integer()) return layer_ref(std::to_string(n.as_integer()->get()), name);
  if (n.is_string()) return layer_ref(n.as_string()->get(), name);
  fail(ErrorKind::config, "config key '" + name + "' must be a layer name or id");
}

std::map<int, double> read_layers(const toml::table& t, const std::string& where, const std::string& key,
                                  std::map<int, double> fallback) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (!n->is_table()) fail(ErrorKind::config, "config key '" + join(where, key) + "' must be a table of layer weights");
  std::map<int, double> out;
  for (const auto& [k, v] : *n->as_table()) {
    const std::string name = join(join(where, key), k.str());
    out[layer_ref(std::string(k.str()), name)] = as_number(v, name);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base) {
  toml::table doc;
  try {
    doc = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config is not valid TOML: " << e.description() << " (line " << e.source().begin.line << ")";
    fail(ErrorKind::config, msg.str());
  }
  reject_unknown(doc, "", {"mode", "device", "log_level", "seed", "data", "output", "init", "loss_network",
                           "network", "loss", "temporal", "stage1", "finetune", "eval"});
  RunConfig c;
  TrainConfig& tc = c.train;
  read_string(doc, "", "mode", c.mode);
  read_string(doc, "", "device", c.device);
  if (doc.get("log_level")) {
    std::string s;
    read_string(doc, "", "log_level", s);
    c.log_level = parse_log_level(s);
  }
  read_int(doc, "", "seed", tc.seed);

  if (const auto* t = section(doc, "data")) {
    reject_unknown(*t, "data", {"images", "video", "style", "size"});
    read_path(*t, "data", "images", base, c.images);
    read_path(*t, "data", "video", base, c.video);
    read_path(*t, "data", "style", base, c.style);
    if (const toml::node* n = t->get("size")) {
      const toml::array* a = n->as_array();
      if (!a || a->size() != 2 || !(*a)[0].is_integer() || !(*a)[1].is_integer())
        fail(ErrorKind::config, "config key 'data.size' must be [height, width]");
      tc.train_size = Size2{static_cast<int>((*a)[0].as_integer()->get()), static_cast<int>((*a)[1].as_integer()->get())};
    }
  }
  if (const auto* t = section(doc, "output")) {
    reject_unknown(*t, "output", {"dir", "checkpoint_every"});
    read_path(*t, "output", "dir", base, c.output_dir);
    read_int(*t, "output", "checkpoint_every", c.checkpoint_every);
  }
  if (c.output_dir.is_relative()) c.output_dir = (base / c.output_dir).lexically_normal();
  if (const auto* t = section(doc, "init")) {
    reject_unknown(*t, "init", {"checkpoint", "resume"});
    read_path(*t, "init", "checkpoint", base, c.init_checkpoint);
    read_path(*t, "init", "resume", base, c.resume);
  }
  if (const auto* t = section(doc, "loss_network")) {
    reject_unknown(*t, "loss_network", {"weights", "seed"});
    read_path(*t, "loss_network", "weights", base, c.loss_network_weights);
    read_int(*t, "loss_network", "seed", c.loss_network_seed);
  }
  if (const auto* t = section(doc, "network")) {
    reject_unknown(*t, "network", {"variant", "padding", "base_channels", "residual_blocks"});
    std::string s;
    if (t->get("variant")) {
      read_string(*t, "network", "variant", s);
      tc.network.variant = parse_variant(s);
    }
    if (t->get("padding")) {
      read_string(*t, "network", "padding", s);
      tc.network.padding = parse_padding_mode(s);
    }
    read_int(*t, "network", "base_channels", tc.network.base_channels);
    read_int(*t, "network", "residual_blocks", tc.network.residual_blocks);
  }
  if (const auto* t = section(doc, "loss")) {
    reject_unknown(*t, "loss", {"lambda1", "lambda2", "lambda3", "content_layers", "style_layers"});
    read_double(*t, "loss", "lambda1", tc.lambda1);
    read_double(*t, "loss", "lambda2", tc.lambda2);
    read_double(*t, "loss", "lambda3", tc.lambda3);
    tc.spatial.content_layers = read_layers(*t, "loss", "content_layers", tc.spatial.content_layers);
    tc.spatial.style_layers = read_layers(*t, "loss", "style_layers", tc.spatial.style_layers);
  }
  if (const auto* t = section(doc, "temporal")) {
    reject_unknown(*t, "temporal", {"kind", "feature_layer", "frame_interval", "pixel_weight", "feature_weight"});
    if (t->get("kind")) {
      std::string s;
      read_string(*t, "temporal", "kind", s);
      tc.temporal.kind = parse_temporal_kind(s);
    }
    if (const toml::node* n = t->get("feature_layer")) tc.temporal.feature_layer = layer_node(*n, "temporal.feature_layer");
    read_int(*t, "temporal", "frame_interval", tc.temporal.frame_interval);
    read_double(*t, "temporal", "pixel_weight", tc.temporal.c_fdb_pixel_weight);
    read_double(*t, "temporal", "feature_weight", tc.temporal.c_fdb_feature_weight);
  }
  if (const auto* t = section(doc, "stage1")) {
    reject_unknown(*t, "stage1", {"iters", "lr", "batch"});
    read_int(*t, "stage1", "iters", tc.stage1_iters);
    read_double(*t, "stage1", "lr", tc.stage1_lr);
    read_int(*t, "stage1", "batch", tc.stage1_batch);
  }
  if (const auto* t = section(doc, "finetune")) {
    reject_unknown(*t, "finetune", {"epochs", "iters", "lr", "batch"});
    read_int(*t, "finetune", "epochs", tc.finetune_epochs);
    read_int(*t, "finetune", "iters", tc.finetune_iters);
    read_double(*t, "finetune", "lr", tc.finetune_lr);
    read_int(*t, "finetune", "batch", tc.finetune_batch);
  }
  if (const auto* t = section(doc, "eval")) {
    reject_unknown(*t, "eval", {"interval"});
    read_int(*t, "eval", "interval", c.eval_interval);
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  const fs::path base = fs::absolute(path).parent_path();
  return parse_run_config(text.str(), base);
}

void RunConfig::validate() const {
  if (mode != "stage1" && mode != "finetune")
    fail(ErrorKind::config, "mode must be 'stage1' or 'finetune', got '" + mode + "'");
  if (device != "cpu") fail(ErrorKind::config, "device '" + device + "' is not available; this build runs on 'cpu'");
  if (checkpoint_every < 0) fail(ErrorKind::config, "output.checkpoint_every must be >= 0");
  if (eval_interval < 1) fail(ErrorKind::config, "eval.interval must be >= 1");
  train.validate();
}

std::string RunConfig::to_toml() const {
  auto layers = [](const std::map<int, double>& m) {
    toml::table t;
    for (const auto& [id, w] : m) t.insert(loss_network_layer(id).name, w);
    return t;
  };
  auto path = [](const fs::path& p) { return p.string(); };
  const TrainConfig& tc = train;
  toml::table data{{"images", path(images)}, {"video", path(video)}, {"style", path(style)}};
  if (tc.train_size) data.insert("size", toml::array{tc.train_size->height, tc.train_size->width});
  toml::table doc{
      {"mode", mode},
      {"device", device},
      {"log_level", to_string(log_level)},
      {"seed", static_cast<std::int64_t>(tc.seed)},
      {"data", data},
      {"output", toml::table{{"dir", path(output_dir)}, {"checkpoint_every", checkpoint_every}}},
      {"init", toml::table{{"checkpoint", path(init_checkpoint)}, {"resume", path(resume)}}},
      {"loss_network",
       toml::table{{"weights", path(loss_network_weights)}, {"seed", static_cast<std::int64_t>(loss_network_seed)}}},
      {"network", toml::table{{"variant", to_string(tc.network.variant)},
                              {"padding", to_string(tc.network.padding)},
                              {"base_channels", tc.network.base_channels},
                              {"residual_blocks", tc.network.residual_blocks}}},
      {"loss", toml::table{{"lambda1", tc.lambda1},
                           {"lambda2", tc.lambda2},
                           {"lambda3", tc.lambda3},
                           {"content_layers", layers(tc.spatial.content_layers)},
                           {"style_layers", layers(tc.spatial.style_layers)}}},
      {"temporal", toml::table{{"kind", to_string(tc.temporal.kind)},
                               {"feature_layer", loss_network_layer(tc.temporal.feature_layer).name},
                               {"frame_interval", tc.temporal.frame_interval},
                               {"pixel_weight", tc.temporal.c_fdb_pixel_weight},
                               {"feature_weight", tc.temporal.c_fdb_feature_weight}}},
      {"stage1", toml::table{{"iters", tc.stage1_iters}, {"lr", tc.stage1_lr}, {"batch", tc.stage1_batch}}},
      {"finetune", toml::table{{"epochs", tc.finetune_epochs},
                               {"iters", tc.finetune_iters},
                               {"lr", tc.finetune_lr},
                               {"batch", tc.finetune_batch}}},
      {"eval", toml::table{{"interval", eval_interval}}},
  };
  std::ostringstream out;
  out << doc << '\n';
  return out.str();
}

RunConfig resolve_config(const GlobalOptions& opts) {
  RunConfig c = opts.config.empty() ? RunConfig{} : load_run_config(opts.config);
  if (opts.config.empty()) c.output_dir = fs::absolute(c.output_dir);
  if (opts.seed) c.train.seed = *opts.seed;
  if (opts.device) c.device = *opts.device;
  if (opts.log_level) c.log_level = *opts.log_level;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

class Logger {
 public:
  Logger(const LogSink& sink, LogLevel level) : sink_(sink), level_(level) {}
  void operator()(LogLevel l, const std::string& msg) const {
    if (sink_ && l <= level_) sink_(l, msg);
  }

 private:
  const LogSink& sink_;
  LogLevel level_;
};

LogLevel effective_level(const GlobalOptions& opts) {
  return opts.log_level.value_or(LogLevel::info);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::string quoted(const std::string& s) {
  std::ostringstream out;
  out << toml::value<std::string>(s);
  return out.str();
}

std::string frame_file(std::size_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", t, ext);
  return buf;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool want_dirs, const std::string& ext = "") {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (want_dirs ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ext)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Frame center_crop(const Frame& f, Size2 size) {
  const int top = (f.height() - size.height) / 2, left = (f.width() - size.width) / 2;
  Tensor<float> out({3, size.height, size.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x)
        out[(static_cast<std::size_t>(c) * size.height + y) * size.width + x] =
            f.data()[(static_cast<std::size_t>(c) * f.height() + top + y) * f.width() + left + x];
  return Frame(std::move(out));
}

void log_warnings(const Logger& log, const DatasetIndex& index) {
  for (const auto& w : index.warnings) log(LogLevel::warn, w);
}

}  // namespace

std::size_t cmd_preprocess_masks(const fs::path& flow_dir, const fs::path& out_dir, const GlobalOptions& opts) {
  const Logger log(opts.sink, effective_level(opts));
  if (!fs::is_directory(flow_dir)) fail(ErrorKind::data, "flow directory '" + flow_dir.string() + "' does not exist");

  struct Job {
    fs::path backward, forward, out;
  };
  std::vector<Job> jobs;
  std::vector<std::string> missing;
  for (const fs::path& clip : sorted_entries(flow_dir, true)) {
    const std::string id = clip.filename().string();
    const auto forward = sorted_entries(clip / "forward", false, ".flo");
    for (const fs::path& fwd : forward) {
      const fs::path bwd = clip / fwd.filename();
      if (!fs::is_regular_file(bwd)) {
        missing.push_back((clip / fwd.filename()).string());
        continue;
      }
      jobs.push_back({bwd, fwd, out_dir / id / fwd.filename().replace_extension(".pgm")});
    }
    for (const fs::path& bwd : sorted_entries(clip, false, ".flo"))
      if (!fs::is_regular_file(clip / "forward" / bwd.filename()))
        missing.push_back((clip / "forward" / bwd.filename()).string());
  }
  if (!missing.empty()) {
    std::string msg = "missing flow files (every pair needs a backward and a forward flow):";
    for (const auto& m : missing) msg += "\n  " + m;
    fail(ErrorKind::data, msg);
  }
  if (jobs.empty()) log(LogLevel::warn, "no flow pairs under '" + flow_dir.string() + "'");

  // Decode everything first so a bad file leaves no partial output behind.
  std::vector<ConfidenceMask> masks;
  masks.reserve(jobs.size());
  for (const Job& j : jobs) masks.push_back(confidence_mask(read_flo(j.forward), read_flo(j.backward)));

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    fs::create_directories(jobs[i].out.parent_path());
    write_mask(masks[i], jobs[i].out);
    log(LogLevel::debug, "wrote " + jobs[i].out.string());
  }
  write_text(out_dir / "resolved_preprocess-masks.toml",
             "command = \"preprocess-masks\"\nflow_dir = " + quoted(fs::absolute(flow_dir).string()) +
                 "\nout_dir = " + quoted(fs::absolute(out_dir).string()) + "\nmasks = " +
                 std::to_string(jobs.size()) + "\n");
  log(LogLevel::info, "wrote " + std::to_string(jobs.size()) + " masks to " + out_dir.string());
  return jobs.size();
}

TrainResult cmd_train(const GlobalOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const Logger log(opts.sink, cfg.log_level);
  const TrainConfig& tc = cfg.train;
  const bool finetune = cfg.mode == "finetune";

  // Validate everything before the first write.
  if (cfg.style.empty()) fail(ErrorKind::config, "data.style is required");
  const fs::path& data_root = finetune ? cfg.video : cfg.images;
  if (data_root.empty()) fail(ErrorKind::config, finetune ? "data.video is required for finetuning" : "data.images is required for stage 1");
  if (!finetune && tc.network.variant != Variant::sfn)
    fail(ErrorKind::config, "stage 1 trains the sfn; set network.variant = \"sfn\" (the rnn is built during finetuning)");
  if (finetune && cfg.init_checkpoint.empty()) fail(ErrorKind::config, "init.checkpoint is required for finetuning");
  if (!fs::exists(cfg.style)) fail(ErrorKind::data, "style image '" + cfg.style.string() + "' does not exist");

  const DatasetIndex data = index_dataset(data_root);
  log_warnings(log, data);
  if (data.clips.empty()) fail(ErrorKind::data, "dataset '" + data_root.string() + "' holds no frames");
  if (finetune && tc.temporal.needs_flow() && !data.has_flow())
    fail(ErrorKind::data, "temporal.kind = \"" + to_string(tc.temporal.kind) + "\" needs flow and mask files for every clip under '" +
                              data_root.string() + "' (run preprocess-masks first)");
  const Frame style = load_frame(cfg.style);
  const LossNetwork<float> net = cfg.loss_network_weights.empty() ? LossNetwork<float>::random(cfg.loss_network_seed)
                                                                  : LossNetwork<float>::load(cfg.loss_network_weights);
  if (cfg.loss_network_weights.empty())
    log(LogLevel::warn, "no loss_network.weights given; using seeded random loss-network weights");
  std::optional<Checkpoint> init, resume;
  if (finetune) init = Checkpoint::load(cfg.init_checkpoint);
  if (!cfg.resume.empty()) resume = Checkpoint::load(cfg.resume);

  TrainResult result;
  result.checkpoint = cfg.output_dir / "checkpoint.fdbck";
  result.log = cfg.output_dir / "train_log.jsonl";
  result.resolved_config = cfg.output_dir / "resolved_train.toml";
  write_text(result.resolved_config, cfg.to_toml());
  if (!resume) std::filesystem::remove(result.log);

  TrainHooks hooks;
  hooks.log_path = result.log;
  hooks.checkpoint_path = result.checkpoint;
  hooks.checkpoint_every = cfg.checkpoint_every;
  const auto start = std::chrono::steady_clock::now();
  hooks.on_iteration = [&](const IterationLog& it) {
    const bool milestone = it.iter == 1 || it.iter % 10 == 0;
    log(milestone ? LogLevel::info : LogLevel::debug, "iter " + std::to_string(it.iter) + " " + it.to_json().dump());
  };

  log(LogLevel::info, std::string(finetune ? "finetuning " : "stage-1 training ") + to_string(tc.network.variant) +
                          " on " + data_root.string());
  const Checkpoint* resume_ptr = resume ? &*resume : nullptr;
  Checkpoint out;
  if (!finetune)
    out = train_sfn_stage1(data, tc, style, net, hooks, resume_ptr);
  else if (tc.network.variant == Variant::rnn)
    out = finetune_rnn(*init, data, tc, style, net, hooks, resume_ptr);
  else
    out = finetune_sfn(*init, data, tc, style, net, hooks, resume_ptr);
  out.extra["style"] = cfg.style.stem().string();
  out.save(result.checkpoint);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log(LogLevel::info, "saved " + result.checkpoint.string() + " after " + std::to_string(out.iteration) +
                          " iterations (" + std::to_string(secs) + " s)");
  return result;
}

std::size_t cmd_stylize(const fs::path& checkpoint, const fs::path& input_dir, const fs::path& output_dir,
                        const GlobalOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const Logger log(opts.sink, cfg.log_level);
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  const DatasetIndex input = index_dataset(input_dir);
  log_warnings(log, input);
  const auto model = StylizationNetwork<float>::from_checkpoint(ckpt);

  // Decode every frame once up front so unreadable input fails before any write.
  for (const ClipEntry& clip : input.clips) load_clip(clip).validate();

  std::size_t written = 0;
  if (input.clips.empty()) log(LogLevel::warn, "no frames under '" + input_dir.string() + "'; nothing to stylize");
  for (const ClipEntry& clip : input.clips) {
    const FrameSequence seq = load_clip(clip);
    const FrameSequence out = stylize_clip(model, seq);
    const fs::path dir = output_dir / clip.id;
    fs::create_directories(dir);
    for (std::size_t t = 0; t < out.length(); ++t) save_frame(out.frames[t], dir / frame_file(t, "png"));
    written += out.length();
    log(LogLevel::info, "stylized " + clip.id + " (" + std::to_string(out.length()) + " frames, " +
                            to_string(model.spec().variant) + ")");
  }
  write_text(output_dir / "resolved_stylize.toml",
             "command = \"stylize\"\ncheckpoint = " + quoted(fs::absolute(checkpoint).string()) +
                 "\ninput_dir = " + quoted(fs::absolute(input_dir).string()) + "\noutput_dir = " +
                 quoted(fs::absolute(output_dir).string()) + "\nvariant = \"" + to_string(model.spec().variant) +
                 "\"\ndevice = \"" + cfg.device + "\"\nframes = " + std::to_string(written) + "\n");
  return written;
}

StabilityReport cmd_eval(const fs::path& source, const fs::path& dataset, const EvalOptions& eval,
                         const GlobalOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const Logger log(opts.sink, cfg.log_level);
  const int interval = eval.interval.value_or(cfg.eval_interval);
  if (interval < 1) fail(ErrorKind::config, "eval interval must be >= 1");
  const DatasetIndex data = index_dataset(dataset);
  log_warnings(log, data);
  if (data.clips.empty()) fail(ErrorKind::data, "dataset '" + dataset.string() + "' holds no clips to evaluate");

  const bool from_checkpoint = fs::is_regular_file(source);
  std::optional<Checkpoint> ckpt;
  std::optional<DatasetIndex> stylized_index;
  if (from_checkpoint) {
    ckpt = Checkpoint::load(source);
  } else {
    if (!fs::is_directory(source)) fail(ErrorKind::data, "'" + source.string() + "' is neither a checkpoint nor a directory");
    stylized_index = index_dataset(source);
    for (const ClipEntry& c : data.clips) stylized_index->clip(c.id);  // data error when absent
  }

  StabilityReport report;
  report.metadata = {{"source", fs::absolute(source).string()},
                     {"dataset", fs::absolute(dataset).string()},
                     {"interval", interval}};
  if (ckpt) {
    report.metadata["checkpoint"] = fs::absolute(source).string();
    report.metadata["stage"] = ckpt->stage;
    report.metadata["variant"] = to_string(ckpt->spec.variant);
    if (ckpt->train_config.contains("temporal")) report.metadata["temporal_kind"] = ckpt->train_config["temporal"]["kind"];
    if (ckpt->extra.contains("style")) report.metadata["style"] = ckpt->extra["style"];
  }
  std::optional<StylizationNetwork<float>> model;
  if (ckpt) model = StylizationNetwork<float>::from_checkpoint(*ckpt);

  std::vector<std::pair<std::string, FrameSequence>> exports;
  for (const ClipEntry& clip : data.clips) {
    FrameSequence original = load_clip(clip);
    FrameSequence stylized = model ? stylize_clip(*model, original) : load_clip(stylized_index->clip(clip.id));
    if (stylized.length() != original.length())
      fail(ErrorKind::data, "clip '" + clip.id + "': " + std::to_string(stylized.length()) + " stylized frames for " +
                                std::to_string(original.length()) + " originals");
    const Size2 size = stylized.frames.front().size();
    if (original.frames.front().size() != size) {
      // `none` padding shrinks the output; compare against the matching centre.
      for (Frame& f : original.frames) f = center_crop(f, size);
    }
    ClipMetrics m;
    if (!clip.flow_paths.empty() && !clip.mask_paths.empty() && original.length() >= 2) {
      auto [flows, masks] = load_clip_flows(clip, size);
      m = evaluate_clip(clip.id, stylized, original, interval, &flows, &masks);
    } else {
      m = evaluate_clip(clip.id, stylized, original, interval);
    }
    report.clips.push_back(m);
    log(LogLevel::info, "clip " + clip.id + ": fdb_error " + std::to_string(m.fdb_error) +
                            (m.warp_error ? ", warp_error " + std::to_string(*m.warp_error) : ""));
    if (!eval.export_dir.empty()) {
      original.source_id = stylized.source_id = clip.id;
      exports.emplace_back("original", std::move(original));
      exports.emplace_back(ckpt ? ckpt->stage : std::string("stylized"), std::move(stylized));
    }
  }

  const fs::path report_path = eval.report.empty() ? fs::absolute("stability_report.json") : eval.report;
  report.save(report_path);
  if (!eval.export_dir.empty()) export_comparison(exports, eval.export_dir);
  std::string echo = "command = \"eval\"\nsource = " + quoted(fs::absolute(source).string()) + "\ndataset = " +
                     quoted(fs::absolute(dataset).string()) + "\ninterval = " + std::to_string(interval) +
                     "\nreport = " + quoted(fs::absolute(report_path).string()) + "\ndevice = \"" + cfg.device + "\"\n";
  if (!eval.export_dir.empty()) echo += "export_dir = " + quoted(fs::absolute(eval.export_dir).string()) + "\n";
  write_text(fs::absolute(report_path).parent_path() / "resolved_eval.toml", echo);
  return report;
}

}  // namespace fdb
