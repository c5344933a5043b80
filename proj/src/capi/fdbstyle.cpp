#include "fdbstyle/fdbstyle.h"

#include <cstring>
#include <optional>
#include <string>

#include "fdb/driver.hpp"

using namespace fdb;

struct fdb_options {
  GlobalOptions opts;
  fdb_log_fn log_fn = nullptr;
  void* log_user = nullptr;
};

struct fdb_report {
  StabilityReport report;
  std::string json;
};

struct fdb_checkpoint {
  Checkpoint ckpt;
  std::string variant;
};

struct fdb_model {
  std::optional<StylizationNetwork<float>> net;
  RnnState state;
};

namespace {

thread_local std::string g_last_error;

fdb_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return FDB_ERR_IO;
    case ErrorKind::format: return FDB_ERR_FORMAT;
    case ErrorKind::contract: return FDB_ERR_CONTRACT;
    case ErrorKind::validation: return FDB_ERR_VALIDATION;
    case ErrorKind::data: return FDB_ERR_DATA;
    case ErrorKind::config: return FDB_ERR_CONFIG;
    case ErrorKind::runtime: return FDB_ERR_RUNTIME;
  }
  return FDB_ERR_RUNTIME;
}

template <typename F>
fdb_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return FDB_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FDB_ERR_RUNTIME;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return FDB_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FDB_ERR_RUNTIME;
  }
}

fdb_status invalid(const char* what) {
  g_last_error = what;
  return FDB_ERR_INVALID_ARGUMENT;
}

// Options with the C callback bound into the sink.
GlobalOptions bound(const fdb_options* o) {
  if (!o) return {};
  GlobalOptions g = o->opts;
  if (o->log_fn) {
    fdb_log_fn fn = o->log_fn;
    void* user = o->log_user;
    g.sink = [fn, user](LogLevel l, const std::string& msg) { fn(static_cast<fdb_log_level>(l), msg.c_str(), user); };
  }
  return g;
}

}  // namespace

extern "C" {

const char* fdb_version(void) { return "0.1.0"; }

const char* fdb_status_name(fdb_status status) {
  switch (status) {
    case FDB_OK: return "ok";
    case FDB_ERR_IO: return "io";
    case FDB_ERR_FORMAT: return "format";
    case FDB_ERR_CONTRACT: return "contract";
    case FDB_ERR_VALIDATION: return "validation";
    case FDB_ERR_DATA: return "data";
    case FDB_ERR_CONFIG: return "config";
    case FDB_ERR_RUNTIME: return "runtime";
    case FDB_ERR_INVALID_ARGUMENT: return "invalid_argument";
  }
  return "unknown";
}

const char* fdb_last_error(void) { return g_last_error.c_str(); }

int fdb_exit_code(fdb_status status) {
  switch (status) {
    case FDB_OK: return 0;
    case FDB_ERR_IO: return exit_code(ErrorKind::io);
    case FDB_ERR_FORMAT: return exit_code(ErrorKind::format);
    case FDB_ERR_CONTRACT: return exit_code(ErrorKind::contract);
    case FDB_ERR_VALIDATION: return exit_code(ErrorKind::validation);
    case FDB_ERR_DATA: return exit_code(ErrorKind::data);
    case FDB_ERR_CONFIG: return exit_code(ErrorKind::config);
    case FDB_ERR_INVALID_ARGUMENT: return exit_code(ErrorKind::contract);
    case FDB_ERR_RUNTIME: break;
  }
  return exit_code(ErrorKind::runtime);
}

fdb_status fdb_options_create(fdb_options** out) {
  if (!out) return invalid("fdb_options_create: null output pointer");
  return guarded([&] { *out = new fdb_options(); });
}

void fdb_options_destroy(fdb_options* opts) { delete opts; }

fdb_status fdb_options_set_config(fdb_options* opts, const char* path) {
  if (!opts || !path) return invalid("fdb_options_set_config: null argument");
  return guarded([&] { opts->opts.config = path; });
}

fdb_status fdb_options_set_seed(fdb_options* opts, uint64_t seed) {
  if (!opts) return invalid("fdb_options_set_seed: null options");
  opts->opts.seed = seed;
  g_last_error.clear();
  return FDB_OK;
}

fdb_status fdb_options_set_device(fdb_options* opts, const char* device) {
  if (!opts || !device) return invalid("fdb_options_set_device: null argument");
  return guarded([&] { opts->opts.device = std::string(device); });
}

fdb_status fdb_options_set_log_level(fdb_options* opts, fdb_log_level level) {
  if (!opts) return invalid("fdb_options_set_log_level: null options");
  if (level < FDB_LOG_ERROR || level > FDB_LOG_DEBUG) return invalid("fdb_options_set_log_level: unknown level");
  opts->opts.log_level = static_cast<LogLevel>(level);
  g_last_error.clear();
  return FDB_OK;
}

fdb_status fdb_options_parse_log_level(const char* name, fdb_log_level* out) {
  if (!name || !out) return invalid("fdb_options_parse_log_level: null argument");
  return guarded([&] { *out = static_cast<fdb_log_level>(parse_log_level(name)); });
}

fdb_status fdb_options_set_logger(fdb_options* opts, fdb_log_fn fn, void* user) {
  if (!opts) return invalid("fdb_options_set_logger: null options");
  opts->log_fn = fn;
  opts->log_user = user;
  g_last_error.clear();
  return FDB_OK;
}

fdb_status fdb_preprocess_masks(const fdb_options* opts, const char* flow_dir, const char* out_dir,
                                size_t* masks_written) {
  if (!flow_dir || !out_dir) return invalid("fdb_preprocess_masks: null path");
  return guarded([&] {
    const std::size_t n = cmd_preprocess_masks(flow_dir, out_dir, bound(opts));
    if (masks_written) *masks_written = n;
  });
}

fdb_status fdb_train(const fdb_options* opts, char* checkpoint_out, size_t checkpoint_out_len) {
  if (!opts) return invalid("fdb_train: null options");
  return guarded([&] {
    const TrainResult r = cmd_train(bound(opts));
    if (checkpoint_out && checkpoint_out_len > 0) {
      const std::string p = r.checkpoint.string();
      std::strncpy(checkpoint_out, p.c_str(), checkpoint_out_len - 1);
      checkpoint_out[checkpoint_out_len - 1] = '\0';
    }
  });
}

fdb_status fdb_stylize(const fdb_options* opts, const char* checkpoint, const char* input_dir, const char* output_dir,
                       size_t* frames_written) {
  if (!checkpoint || !input_dir || !output_dir) return invalid("fdb_stylize: null path");
  return guarded([&] {
    const std::size_t n = cmd_stylize(checkpoint, input_dir, output_dir, bound(opts));
    if (frames_written) *frames_written = n;
  });
}

fdb_status fdb_eval(const fdb_options* opts, const char* source, const char* dataset, const fdb_eval_params* params,
                    fdb_report** out) {
  if (!source || !dataset) return invalid("fdb_eval: null path");
  return guarded([&] {
    EvalOptions e;
    if (params) {
      if (params->interval > 0) e.interval = params->interval;
      if (params->report && *params->report) e.report = params->report;
      if (params->export_dir && *params->export_dir) e.export_dir = params->export_dir;
    }
    StabilityReport r = cmd_eval(source, dataset, e, bound(opts));
    if (out) {
      auto* h = new fdb_report();
      h->json = r.to_json().dump(2);
      h->report = std::move(r);
      *out = h;
    }
  });
}

void fdb_report_destroy(fdb_report* report) { delete report; }

size_t fdb_report_clip_count(const fdb_report* report) { return report ? report->report.clips.size() : 0; }

const char* fdb_report_clip_id(const fdb_report* report, size_t index) {
  if (!report || index >= report->report.clips.size()) return nullptr;
  return report->report.clips[index].clip.c_str();
}

double fdb_report_fdb_error(const fdb_report* report, size_t index) {
  if (!report || index >= report->report.clips.size()) return 0.0;
  return report->report.clips[index].fdb_error;
}

int fdb_report_warp_error(const fdb_report* report, size_t index, double* out) {
  if (!report || index >= report->report.clips.size() || !out) return 0;
  const auto& w = report->report.clips[index].warp_error;
  if (!w) return 0;
  *out = *w;
  return 1;
}

double fdb_report_mean_fdb_error(const fdb_report* report) { return report ? report->report.mean_fdb_error() : 0.0; }

const char* fdb_report_json(const fdb_report* report) { return report ? report->json.c_str() : nullptr; }

fdb_status fdb_checkpoint_load(const char* path, fdb_checkpoint** out) {
  if (!path || !out) return invalid("fdb_checkpoint_load: null argument");
  return guarded([&] {
    auto h = std::make_unique<fdb_checkpoint>();
    h->ckpt = Checkpoint::load(path);
    h->variant = to_string(h->ckpt.spec.variant);
    *out = h.release();
  });
}

void fdb_checkpoint_destroy(fdb_checkpoint* ckpt) { delete ckpt; }

const char* fdb_checkpoint_variant(const fdb_checkpoint* ckpt) { return ckpt ? ckpt->variant.c_str() : nullptr; }

const char* fdb_checkpoint_stage(const fdb_checkpoint* ckpt) { return ckpt ? ckpt->ckpt.stage.c_str() : nullptr; }

int64_t fdb_checkpoint_iteration(const fdb_checkpoint* ckpt) { return ckpt ? ckpt->ckpt.iteration : -1; }

fdb_status fdb_model_create(const fdb_checkpoint* ckpt, fdb_model** out) {
  if (!ckpt || !out) return invalid("fdb_model_create: null argument");
  return guarded([&] {
    auto h = std::make_unique<fdb_model>();
    h->net.emplace(StylizationNetwork<float>::from_checkpoint(ckpt->ckpt));
    *out = h.release();
  });
}

void fdb_model_destroy(fdb_model* model) { delete model; }

fdb_status fdb_model_output_size(const fdb_model* model, int height, int width, int* out_height, int* out_width) {
  if (!model || !out_height || !out_width) return invalid("fdb_model_output_size: null argument");
  return guarded([&] {
    const Size2 s = model->net->output_size({height, width});
    *out_height = s.height;
    *out_width = s.width;
  });
}

fdb_status fdb_model_stylize(fdb_model* model, const float* rgb, int height, int width, float* out, size_t out_len) {
  if (!model || !rgb || !out) return invalid("fdb_model_stylize: null argument");
  return guarded([&] {
    require(height > 0 && width > 0, "fdb_model_stylize: frame size must be positive");
    const Size2 os = model->net->output_size({height, width});
    const std::size_t need = 3 * static_cast<std::size_t>(os.height) * os.width;
    require(out_len >= need, "fdb_model_stylize: output buffer holds " + std::to_string(out_len) + " floats, needs " +
                                 std::to_string(need));
    Tensor<float> data({3, height, width});
    std::memcpy(data.data(), rgb, data.size() * sizeof(float));
    const Frame in(std::move(data));
    Frame result;
    if (model->net->spec().variant == Variant::rnn) {
      if (model->state.previous_stylized.data().size() == 0 || model->state.previous_stylized.size() != in.size())
        model->state = RnnState::zeros(in.size());
      auto [frame, next] = model->net->step(model->state, in);
      model->state = std::move(next);
      result = std::move(frame);
    } else {
      result = model->net->stylize(in);
    }
    std::memcpy(out, result.data().data(), result.data().size() * sizeof(float));
  });
}

fdb_status fdb_model_reset(fdb_model* model) {
  if (!model) return invalid("fdb_model_reset: null model");
  model->state = RnnState{};
  g_last_error.clear();
  return FDB_OK;
}

fdb_status fdb_p_fdb_loss(const float* stylized, const float* original, int frames, int height, int width,
                          int interval, double* out) {
  if (!stylized || !original || !out) return invalid("fdb_p_fdb_loss: null argument");
  return guarded([&] {
    require(frames > 0 && height > 0 && width > 0, "fdb_p_fdb_loss: dimensions must be positive");
    const std::size_t plane = 3 * static_cast<std::size_t>(height) * width;
    auto seq = [&](const float* src) {
      FrameSequence s;
      for (int t = 0; t < frames; ++t) {
        Tensor<float> d({3, height, width});
        std::memcpy(d.data(), src + t * plane, plane * sizeof(float));
        s.frames.emplace_back(std::move(d));
      }
      return s;
    };
    *out = p_fdb_loss(seq(stylized), seq(original), interval);
  });
}

}  // extern "C"
