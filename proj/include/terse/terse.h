#ifndef TERSE_TERSE_H
#define TERSE_TERSE_H

/* C interface to the TERSE library. Every call returns a status; on failure
 * terse_last_error() describes it until the next call on the same thread.
 * Strings handed out through char** must be released with terse_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TERSE_API __declspec(dllexport)
#else
#define TERSE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum terse_status {
    TERSE_OK = 0,
    TERSE_ERR_INTERNAL = 1,
    TERSE_ERR_CONFIG = 2,
    TERSE_ERR_DATA = 3,
    TERSE_ERR_NUMERIC = 4,
} terse_status;

typedef struct terse_model terse_model;
typedef struct terse_dataset terse_dataset;

TERSE_API const char* terse_version(void);
TERSE_API const char* terse_last_error(void);
TERSE_API void terse_string_free(char* s);

/* Writes <out_dir>/source and <out_dir>/target. spec_json may be NULL. */
TERSE_API terse_status terse_synth(const char* spec_json, int64_t n_per_class, uint64_t seed, const char* out_dir);

/* Long-format CSV import. labels_csv may be NULL. options_json keys:
 * name, split, classes, channels, length. */
TERSE_API terse_status terse_import_csv(const char* values_csv, const char* labels_csv, const char* out_dir,
                                        const char* options_json);

/* Loads one split. With normalize != 0 the values are z-scored with
 * statistics fitted on the same dataset's train split. */
TERSE_API terse_status terse_dataset_load(const char* dir, const char* split, int normalize, terse_dataset** out);
TERSE_API terse_status terse_dataset_info(const terse_dataset* d, int64_t* samples, int64_t* channels, int64_t* length,
                                          int64_t* classes, int* has_labels);
TERSE_API void terse_dataset_free(terse_dataset* d);

/* config_json follows the experiment config schema and may be NULL.
 * log_path and checkpoint_path may be NULL. */
TERSE_API terse_status terse_pretrain(const terse_dataset* source, const char* config_json, uint64_t seed,
                                      const char* log_path, const char* checkpoint_path, terse_model** out);
/* Uses the dataset's values only; its labels are never read. */
TERSE_API terse_status terse_adapt(terse_model* model, const terse_dataset* target, const char* config_json,
                                   uint64_t seed, const char* log_path, const char* checkpoint_path);

TERSE_API terse_status terse_model_load(const char* path, terse_model** out);
TERSE_API terse_status terse_model_save(const terse_model* model, const char* path);
TERSE_API void terse_model_free(terse_model* model);

/* out must hold at least `capacity` entries; capacity must cover every sample. */
TERSE_API terse_status terse_predict(terse_model* model, const terse_dataset* d, int32_t* out, size_t capacity);
/* Result JSON: macro_f1, per_class_f1, confusion. */
TERSE_API terse_status terse_evaluate(terse_model* model, const terse_dataset* d, char** result_json);
TERSE_API terse_status terse_export_features(terse_model* model, const terse_dataset* d, const char* domain,
                                             const char* path, int append);

/* Experiment drivers. Each returns a JSON report that includes a formatted
 * "table" and a "csv" rendering. out_dir may be NULL. */
TERSE_API terse_status terse_run_scenarios(const char* config_json, const char* out_dir, char** report_json);
TERSE_API terse_status terse_run_ablation(const char* config_json, const char* source_dir, const char* target_dir,
                                          char** report_json);
TERSE_API terse_status terse_run_search(const char* config_json, const char* source_dir, const char* target_dir,
                                        char** report_json);
TERSE_API terse_status terse_run_sweep(const char* config_json, const char* source_dir, const char* target_dir,
                                       char** report_json);

#ifdef __cplusplus
}
#endif

#endif
