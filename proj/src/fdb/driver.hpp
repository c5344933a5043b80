#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "fdb/evaluation.hpp"
#include "fdb/training.hpp"

namespace fdb {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
const char* to_string(LogLevel level);
LogLevel parse_log_level(const std::string& s);  // config error on unknown names

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Everything a run can be configured with. Loaded from one TOML document;
// relative paths are resolved against the directory holding that document.
struct RunConfig {
  std::string mode = "stage1";  // stage1 | finetune
  std::string device = "cpu";
  LogLevel log_level = LogLevel::info;

  std::filesystem::path images;  // stage-1 dataset root
  std::filesystem::path video;   // finetuning dataset root
  std::filesystem::path style;   // style image

  std::filesystem::path output_dir = "run";
  int checkpoint_every = 0;

  std::filesystem::path init_checkpoint;  // stage-1 snapshot to finetune from
  std::filesystem::path resume;           // interrupted checkpoint of this same run

  std::filesystem::path loss_network_weights;  // empty: seeded random weights
  std::uint64_t loss_network_seed = 0;

  int eval_interval = 1;

  TrainConfig train;

  void validate() const;
  // Canonical TOML; parse_run_config(to_toml()) reproduces this config.
  std::string to_toml() const;
};

RunConfig parse_run_config(const std::string& toml_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Command-line values that override the config document.
struct GlobalOptions {
  std::filesystem::path config;  // empty: defaults only
  std::optional<std::uint64_t> seed;
  std::optional<std::string> device;
  std::optional<LogLevel> log_level;
  LogSink sink;  // messages at or below the effective level; null discards
};

// Config file, then flag overrides, then validation.
RunConfig resolve_config(const GlobalOptions& opts);

// 0 success, 2 config, 3 data (also I/O and malformed files), 4 runtime.
int exit_code(ErrorKind kind);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path resolved_config;
};

struct EvalOptions {
  std::optional<int> interval;            // overrides eval.interval
  std::filesystem::path report;           // default `<cwd>/stability_report.json`
  std::filesystem::path export_dir;       // non-empty: comparison frames
};

// Masks for every clip under `<flow_dir>/<clip>/NNNNN.flo` (backward) with the
// forward partner `<flow_dir>/<clip>/forward/NNNNN.flo`, written to
// `<out_dir>/<clip>/NNNNN.pgm`. Returns the number of masks written.
std::size_t cmd_preprocess_masks(const std::filesystem::path& flow_dir, const std::filesystem::path& out_dir,
                                 const GlobalOptions& opts = {});

TrainResult cmd_train(const GlobalOptions& opts);

// Writes `<output_dir>/<clip>/NNNNN.png`. Returns the number of frames written.
std::size_t cmd_stylize(const std::filesystem::path& checkpoint, const std::filesystem::path& input_dir,
                        const std::filesystem::path& output_dir, const GlobalOptions& opts = {});

// `source` is a checkpoint file (clips are stylized first) or a directory of
// already stylized clips laid out like the dataset.
StabilityReport cmd_eval(const std::filesystem::path& source, const std::filesystem::path& dataset,
                         const EvalOptions& eval, const GlobalOptions& opts = {});

}  // namespace fdb
