// fdbstyle command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "fdbstyle/fdbstyle.h"

namespace {

void print_log(fdb_log_level level, const char* message, void*) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[%s] %s\n", names[level], message);
}

int report(fdb_status st) {
  if (st != FDB_OK) std::fprintf(stderr, "error (%s): %s\n", fdb_status_name(st), fdb_last_error());
  return fdb_exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video style transfer with frame-difference temporal losses"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fdb_version()));

  std::string config, device, log_level;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--config", config, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--device", device, "Compute device (only 'cpu' is available)");
  app.add_option("--log-level", log_level, "error, warn, info or debug");

  std::string flow_dir, mask_dir;
  auto* pre = app.add_subcommand("preprocess-masks", "Write confidence masks from forward/backward flow pairs");
  pre->add_option("flow_dir", flow_dir, "Directory of <clip>/NNNNN.flo and <clip>/forward/NNNNN.flo")->required();
  pre->add_option("out_dir", mask_dir, "Directory receiving <clip>/NNNNN.pgm")->required();

  auto* train = app.add_subcommand("train", "Stage-1 training or finetuning as set by the config");

  std::string checkpoint, input_dir, output_dir;
  auto* sty = app.add_subcommand("stylize", "Stylize every clip under a directory");
  sty->add_option("checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  sty->add_option("input_dir", input_dir, "Directory of <clip>/<frame>.png")->required();
  sty->add_option("output_dir", output_dir, "Directory receiving <clip>/NNNNN.png")->required();

  std::string source, dataset, report_path, export_dir;
  int interval = 0;
  auto* ev = app.add_subcommand("eval", "Stability metrics for a checkpoint or stylized frames");
  ev->add_option("source", source, "Checkpoint file or directory of stylized clips")->required();
  ev->add_option("dataset", dataset, "Original clips (with optional _flow/_mask siblings)")->required();
  ev->add_option("--interval", interval, "Frame interval K of fdb_error (default: eval.interval)")
      ->check(CLI::PositiveNumber);
  ev->add_option("--report", report_path, "Report path (default ./stability_report.json)");
  ev->add_option("--export", export_dir, "Write per-method frames and side-by-side tiles here");

  // Usage mistakes are configuration errors; --help and --version still exit 0.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  fdb_options* opts = nullptr;
  if (fdb_options_create(&opts) != FDB_OK) return report(FDB_ERR_RUNTIME);
  struct Guard {
    fdb_options* o;
    ~Guard() { fdb_options_destroy(o); }
  } guard{opts};

  fdb_status st = FDB_OK;
  if (!config.empty()) st = fdb_options_set_config(opts, config.c_str());
  if (st == FDB_OK && *seed_opt) st = fdb_options_set_seed(opts, seed);
  if (st == FDB_OK && !device.empty()) st = fdb_options_set_device(opts, device.c_str());
  if (st == FDB_OK && !log_level.empty()) {
    fdb_log_level level;
    st = fdb_options_parse_log_level(log_level.c_str(), &level);
    if (st == FDB_OK) st = fdb_options_set_log_level(opts, level);
  }
  if (st == FDB_OK) st = fdb_options_set_logger(opts, print_log, nullptr);
  if (st != FDB_OK) return report(st);

  if (*pre) {
    std::size_t n = 0;
    st = fdb_preprocess_masks(opts, flow_dir.c_str(), mask_dir.c_str(), &n);
    if (st == FDB_OK) std::printf("%zu masks written to %s\n", n, mask_dir.c_str());
  } else if (*train) {
    char path[4096] = {0};
    st = fdb_train(opts, path, sizeof path);
    if (st == FDB_OK) std::printf("%s\n", path);
  } else if (*sty) {
    std::size_t n = 0;
    st = fdb_stylize(opts, checkpoint.c_str(), input_dir.c_str(), output_dir.c_str(), &n);
    if (st == FDB_OK) std::printf("%zu frames written to %s\n", n, output_dir.c_str());
  } else if (*ev) {
    fdb_eval_params params{interval, report_path.c_str(), export_dir.c_str()};
    fdb_report* rep = nullptr;
    st = fdb_eval(opts, source.c_str(), dataset.c_str(), &params, &rep);
    if (st == FDB_OK) {
      for (std::size_t i = 0; i < fdb_report_clip_count(rep); ++i) {
        double warp = 0;
        if (fdb_report_warp_error(rep, i, &warp))
          std::printf("%s fdb_error=%.6g warp_error=%.6g\n", fdb_report_clip_id(rep, i), fdb_report_fdb_error(rep, i), warp);
        else
          std::printf("%s fdb_error=%.6g\n", fdb_report_clip_id(rep, i), fdb_report_fdb_error(rep, i));
      }
      std::printf("mean fdb_error=%.6g\n", fdb_report_mean_fdb_error(rep));
      fdb_report_destroy(rep);
    }
  }
  return report(st);
}
