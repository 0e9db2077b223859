#ifndef PRNET_H
#define PRNET_H

/* C interface to the PRNet library: a small-object detector built around a
 * progressive-refinement neck and a detail-preserving downsampler, together
 * with its synthetic benchmark, trainer, evaluator and static cost analyzer.
 *
 * All functions return PRNET_OK on success; on failure they return a status
 * code and leave a human-readable message in prnet_last_error() (thread
 * local). Strings returned through char** out-parameters are heap-allocated
 * and must be released with prnet_string_free().
 */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prnet_status {
  PRNET_OK = 0,
  PRNET_ERR_INVALID_ARGUMENT = 1, /* bad scalar argument or malformed config */
  PRNET_ERR_CONTRACT = 2,         /* incompatible shapes/wiring */
  PRNET_ERR_IO = 3,               /* missing, unwritable or corrupt files */
  PRNET_ERR_RUNTIME = 4           /* anything else (non-finite loss, ...) */
} prnet_status;

/* Opaque model handle. */
typedef struct prnet_model prnet_model;

const char* prnet_version(void);
const char* prnet_last_error(void);
void prnet_string_free(char* s);

/* Generates a synthetic small-object dataset described by a spec JSON text
 * into out_dir (images/ + manifest.json). write_ppm != 0 also writes 8-bit
 * PPM mirrors of every image. */
prnet_status prnet_gen_dataset(const char* spec_json, const char* out_dir,
                               int write_ppm);

/* Builds a freshly initialized model from a model-config JSON text. */
prnet_status prnet_model_build(const char* config_json, prnet_model** out);

/* Loads a checkpoint (the .json index written next to its .bin). */
prnet_status prnet_model_load(const char* ckpt_json_path, prnet_model** out);

prnet_status prnet_model_save(prnet_model* model, const char* ckpt_json_path);

void prnet_model_free(prnet_model* model);

prnet_status prnet_model_param_count(prnet_model* model, long long* out);

/* Trains the model on data_dir. The directory holds either a single dataset
 * (manifest.json; the last fifth of the images is the validation split) or
 * explicit train/ and val/ datasets. Writes history.csv and the best-AP50
 * checkpoint (ckpt_best.json/.bin) under out_dir. override_epochs >= 0
 * replaces the epoch count from the train-config JSON. */
prnet_status prnet_train(prnet_model* model, const char* data_dir,
                         const char* train_config_json, const char* out_dir,
                         int override_epochs);

/* Evaluates on the validation split of data_dir. Writes a JSON report to
 * report_json_path when non-NULL; *summary_out (optional) receives an
 * aligned text summary. */
prnet_status prnet_eval(prnet_model* model, const char* data_dir,
                        const char* report_json_path, char** summary_out);

/* Static parameter/MAC analysis of the model described by config_json at a
 * square input size. sweep: NULL for a per-module table, "stages" for
 * prn.stages in {0,1,2,3}, "depth" for essamp.d in {1,2,3}. Optionally
 * writes CSV rows (path,params,macs,flops) to csv_path. */
prnet_status prnet_analyze(const char* config_json, int input_size,
                           const char* sweep, const char* csv_path,
                           char** table_out);

/* Objectness heatmap of one image tensor file at level "P2" | "P3" | "P4",
 * upsampled to input resolution and written as a binary PGM. */
prnet_status prnet_export_heatmap(prnet_model* model, const char* image_path,
                                  const char* level, const char* out_path);

/* Resolution-degradation demo: writes full.ppm, 160.ppm and 80.ppm renders
 * of an image tensor file into out_dir. */
prnet_status prnet_demo_degrade(const char* image_path, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* PRNET_H */
