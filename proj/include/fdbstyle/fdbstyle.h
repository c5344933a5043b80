#ifndef FDBSTYLE_FDBSTYLE_H
#define FDBSTYLE_FDBSTYLE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FDB_API __declspec(dllexport)
#elif defined(__GNUC__)
#define FDB_API __attribute__((visibility("default")))
#else
#define FDB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fdb_status {
  FDB_OK = 0,
  FDB_ERR_IO = 1,
  FDB_ERR_FORMAT = 2,
  FDB_ERR_CONTRACT = 3,
  FDB_ERR_VALIDATION = 4,
  FDB_ERR_DATA = 5,
  FDB_ERR_CONFIG = 6,
  FDB_ERR_RUNTIME = 7,
  FDB_ERR_INVALID_ARGUMENT = 8 /* null handle or pointer */
} fdb_status;

typedef enum fdb_log_level {
  FDB_LOG_ERROR = 0,
  FDB_LOG_WARN = 1,
  FDB_LOG_INFO = 2,
  FDB_LOG_DEBUG = 3
} fdb_log_level;

typedef void (*fdb_log_fn)(fdb_log_level level, const char* message, void* user);

FDB_API const char* fdb_version(void);
FDB_API const char* fdb_status_name(fdb_status status);
/* Message of the last failing call on this thread; "" after a success. */
FDB_API const char* fdb_last_error(void);
/* Process exit code for a status: 0 ok, 2 config, 3 data, 4 runtime. */
FDB_API int fdb_exit_code(fdb_status status);

/* ---- Run options shared by the commands ---- */

typedef struct fdb_options fdb_options;

FDB_API fdb_status fdb_options_create(fdb_options** out);
FDB_API void fdb_options_destroy(fdb_options* opts);
FDB_API fdb_status fdb_options_set_config(fdb_options* opts, const char* path);
FDB_API fdb_status fdb_options_set_seed(fdb_options* opts, uint64_t seed);
FDB_API fdb_status fdb_options_set_device(fdb_options* opts, const char* device);
/* Overrides the config document's log_level. */
FDB_API fdb_status fdb_options_set_log_level(fdb_options* opts, fdb_log_level level);
FDB_API fdb_status fdb_options_parse_log_level(const char* name, fdb_log_level* out);
FDB_API fdb_status fdb_options_set_logger(fdb_options* opts, fdb_log_fn fn, void* user);

/* ---- Commands ---- */

FDB_API fdb_status fdb_preprocess_masks(const fdb_options* opts, const char* flow_dir, const char* out_dir,
                                        size_t* masks_written);
/* Stage-1 training or finetuning as selected by the config. The written
   checkpoint path is copied into `checkpoint_out` when it is non-null. */
FDB_API fdb_status fdb_train(const fdb_options* opts, char* checkpoint_out, size_t checkpoint_out_len);
FDB_API fdb_status fdb_stylize(const fdb_options* opts, const char* checkpoint, const char* input_dir,
                               const char* output_dir, size_t* frames_written);

typedef struct fdb_eval_params {
  int interval;           /* <= 0: take eval.interval from the config */
  const char* report;     /* null or "": ./stability_report.json */
  const char* export_dir; /* null or "": no comparison export */
} fdb_eval_params;

typedef struct fdb_report fdb_report;

/* `source` is a checkpoint file or a directory of stylized clips. */
FDB_API fdb_status fdb_eval(const fdb_options* opts, const char* source, const char* dataset,
                            const fdb_eval_params* params, fdb_report** out);
FDB_API void fdb_report_destroy(fdb_report* report);
FDB_API size_t fdb_report_clip_count(const fdb_report* report);
FDB_API const char* fdb_report_clip_id(const fdb_report* report, size_t index);
FDB_API double fdb_report_fdb_error(const fdb_report* report, size_t index);
/* Returns 0 and leaves *out untouched when the clip had no flow. */
FDB_API int fdb_report_warp_error(const fdb_report* report, size_t index, double* out);
FDB_API double fdb_report_mean_fdb_error(const fdb_report* report);
/* Full JSON document; owned by the report. */
FDB_API const char* fdb_report_json(const fdb_report* report);

/* ---- Checkpoints and models ---- */

typedef struct fdb_checkpoint fdb_checkpoint;
typedef struct fdb_model fdb_model;

FDB_API fdb_status fdb_checkpoint_load(const char* path, fdb_checkpoint** out);
FDB_API void fdb_checkpoint_destroy(fdb_checkpoint* ckpt);
FDB_API const char* fdb_checkpoint_variant(const fdb_checkpoint* ckpt); /* "sfn" or "rnn" */
FDB_API const char* fdb_checkpoint_stage(const fdb_checkpoint* ckpt);   /* "stage1" or "finetuned" */
FDB_API int64_t fdb_checkpoint_iteration(const fdb_checkpoint* ckpt);

FDB_API fdb_status fdb_model_create(const fdb_checkpoint* ckpt, fdb_model** out);
FDB_API void fdb_model_destroy(fdb_model* model);
FDB_API fdb_status fdb_model_output_size(const fdb_model* model, int height, int width, int* out_height,
                                         int* out_width);
/* Stylizes one planar RGB frame (3×H×W floats in [0,1]). The RNN carries its
   previous output between calls until fdb_model_reset. */
FDB_API fdb_status fdb_model_stylize(fdb_model* model, const float* rgb, int height, int width, float* out,
                                     size_t out_len);
FDB_API fdb_status fdb_model_reset(fdb_model* model);

/* ---- Metrics on planar float frames (T×3×H×W) ---- */

FDB_API fdb_status fdb_p_fdb_loss(const float* stylized, const float* original, int frames, int height, int width,
                                  int interval, double* out);

#ifdef __cplusplus
}
#endif

#endif
