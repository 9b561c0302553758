/*
 * modalfuse C API.
 *
 * Every function that can fail returns an mf_status; on failure
 * mf_last_error() describes the problem (thread-local, valid until the next
 * failing call on the same thread). Handles are opaque and owned by the
 * caller unless documented as borrowed; free them with the matching
 * mf_*_free function (NULL is accepted).
 */
#ifndef MODALFUSE_MODALFUSE_H
#define MODALFUSE_MODALFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MODALFUSE_BUILDING_LIBRARY)
#    define MF_API __declspec(dllexport)
#  else
#    define MF_API __declspec(dllimport)
#  endif
#else
#  define MF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mf_status {
    MF_OK = 0,
    MF_ERR_INVALID_ARGUMENT = 1,
    MF_ERR_IO = 2,
    MF_ERR_CONFIG = 3,
    MF_ERR_DATA = 4,
    MF_ERR_CORRUPT_ARTIFACT = 5,
    MF_ERR_CONFIG_DRIFT = 6,
    MF_ERR_DIVERGED = 7,
    MF_ERR_MISSING_ARTIFACT = 8,
    MF_ERR_INCOMPLETE_MODALITIES = 9,
    MF_ERR_UNSUPPORTED = 10,
    MF_ERR_INTERNAL = 99
} mf_status;

typedef enum mf_modality {
    MF_CLINICAL = 0,
    MF_RADIOLOGICAL = 1,
    MF_HISTOPATHOLOGICAL = 2
} mf_modality;

#define MF_MODALITY_COUNT 3

/* Labels: 0 = normal, 1 = cancer. */
#define MF_LABEL_NORMAL 0
#define MF_LABEL_CANCER 1

typedef struct mf_config mf_config;
typedef struct mf_manifest mf_manifest;
typedef struct mf_split mf_split;
typedef struct mf_model mf_model;
typedef struct mf_ensemble mf_ensemble;

typedef struct mf_report {
    double accuracy;
    double precision;
    double recall;
    double f1;
    double mean_loss;
    uint64_t n;
    uint64_t tp;
    uint64_t fp;
    uint64_t fn;
    uint64_t tn;
} mf_report;

typedef struct mf_epoch_log {
    int epoch;
    mf_report train;
    mf_report validation;
} mf_epoch_log;

typedef struct mf_scores {
    double normal;
    double cancer;
} mf_scores;

typedef struct mf_fused {
    mf_scores per_modality[MF_MODALITY_COUNT];
    int present[MF_MODALITY_COUNT];
    mf_scores weighted;
    int label;
    int degraded;
} mf_fused;

/* ---- general ---------------------------------------------------------- */

MF_API const char* mf_version(void);
MF_API const char* mf_last_error(void);
MF_API const char* mf_status_name(mf_status status);
MF_API const char* mf_modality_name(mf_modality modality);
MF_API mf_status mf_modality_parse(const char* name, mf_modality* out);

/* ---- experiment config ------------------------------------------------ */

MF_API mf_status mf_config_create(mf_config** out);
MF_API mf_status mf_config_load(const char* path, mf_config** out);
/* Sets one key; unknown keys fail with MF_ERR_CONFIG naming the key. */
MF_API mf_status mf_config_set(mf_config* config, const char* key, const char* value);
MF_API mf_status mf_config_validate_paths(const mf_config* config);
/* Borrowed strings, valid while the config lives and is not modified. */
MF_API const char* mf_config_output_dir(const mf_config* config);
MF_API const char* mf_config_dataset_root(const mf_config* config);
MF_API double mf_config_split_ratio(const mf_config* config);
MF_API uint64_t mf_config_split_seed(const mf_config* config, mf_modality modality);
MF_API int mf_config_hard_fusion(const mf_config* config);
MF_API const char* mf_config_pairing_strategy(const mf_config* config);
MF_API uint64_t mf_config_pairing_seed(const mf_config* config);
MF_API void mf_config_free(mf_config* config);

/* ---- dataset ingest --------------------------------------------------- */

/* Scans <modality_dir>/{cancer,normal}. Undecodable files are skipped and
 * reported through mf_manifest_warning. */
MF_API mf_status mf_manifest_scan(const char* modality_dir, mf_modality modality, mf_manifest** out);
MF_API mf_status mf_manifest_read(const char* path, mf_manifest** out);
MF_API mf_status mf_manifest_write(const mf_manifest* manifest, const char* path);
MF_API size_t mf_manifest_size(const mf_manifest* manifest);
MF_API size_t mf_manifest_class_count(const mf_manifest* manifest, int label);
MF_API mf_modality mf_manifest_modality(const mf_manifest* manifest);
MF_API size_t mf_manifest_skipped(const mf_manifest* manifest);
MF_API size_t mf_manifest_warning_count(const mf_manifest* manifest);
MF_API const char* mf_manifest_warning(const mf_manifest* manifest, size_t index);
MF_API void mf_manifest_free(mf_manifest* manifest);

MF_API mf_status mf_split_create(const mf_manifest* manifest, double ratio, uint64_t seed, mf_split** out);
/* Writes train.tsv, validation.tsv and split.json into dir (created). */
MF_API mf_status mf_split_write(const mf_split* split, const char* dir);
MF_API mf_status mf_split_read(const char* dir, mf_split** out);
/* Borrowed; valid while the split lives. */
MF_API const mf_manifest* mf_split_train(const mf_split* split);
MF_API const mf_manifest* mf_split_validation(const mf_split* split);
MF_API void mf_split_free(mf_split* split);

/* ---- training --------------------------------------------------------- */

typedef void (*mf_epoch_callback)(const mf_epoch_log* log, void* user_data);

/* Trains one modality with the config's resolved settings. The callback
 * (optional) runs after every epoch. */
MF_API mf_status mf_train(const mf_split* split, const mf_config* config, mf_modality modality,
                          mf_epoch_callback on_epoch, void* user_data, mf_model** out);
/* Writes model.weights, metadata and, for models trained in this process,
 * epochs.log. Atomic: on failure no partial artifact remains. */
MF_API mf_status mf_model_save(const mf_model* model, const char* dir);
MF_API mf_status mf_model_load(const char* dir, mf_model** out);
MF_API mf_modality mf_model_modality(const mf_model* model);
MF_API double mf_model_val_accuracy(const mf_model* model);
MF_API mf_status mf_model_metadata(const mf_model* model, mf_report* validation, mf_report* train,
                                   int* epoch_selected);
MF_API mf_status mf_model_evaluate(const mf_model* model, const mf_manifest* manifest, mf_report* out);
MF_API mf_status mf_model_score_file(const mf_model* model, const char* image_path, mf_scores* out);
MF_API void mf_model_free(mf_model* model);

/* Single-line structured record with keys accuracy, precision, recall, f1,
 * mean_loss, n, tp, fp, fn, tn. Returns the full length (excluding the
 * terminator); writes at most len bytes including the terminator. */
MF_API size_t mf_report_record(const mf_report* report, char* buf, size_t len);
MF_API mf_status mf_report_write(const mf_report* report, const char* path);

/* ---- fusion ----------------------------------------------------------- */

/* weights[m] = acc[m] / sum(acc); all accuracies must be > 0. */
MF_API mf_status mf_derive_weights(const double val_accuracy[MF_MODALITY_COUNT],
                                   double weights_out[MF_MODALITY_COUNT]);
/* present may be NULL (all present). hard != 0 fuses argmax one-hots. */
MF_API mf_status mf_fuse(const mf_scores scores[MF_MODALITY_COUNT], const int present[MF_MODALITY_COUNT],
                         const double weights[MF_MODALITY_COUNT], int hard, int allow_partial, mf_fused* out);

/* Builds an ensemble from trained models (copied). NULL entries are only
 * accepted with allow_partial, in which case weights are renormalized over
 * the available models and results are tagged degraded. */
MF_API mf_status mf_ensemble_create(const mf_model* const models[MF_MODALITY_COUNT], int allow_partial,
                                    mf_ensemble** out);
/* Like mf_ensemble_create but takes the weights from a saved ensemble
 * directory (its "weights" file). */
MF_API mf_status mf_ensemble_load(const char* dir, const mf_model* const models[MF_MODALITY_COUNT],
                                  int allow_partial, mf_ensemble** out);
MF_API mf_status mf_ensemble_set_fusion(mf_ensemble* ensemble, int hard);
MF_API mf_status mf_ensemble_weights(const mf_ensemble* ensemble, double weights[MF_MODALITY_COUNT],
                                     int present[MF_MODALITY_COUNT]);
/* Pairs the three manifests into multimodal samples ("by_group_id" or
 * "synthetic_by_label"), scores, fuses and reports. */
MF_API mf_status mf_ensemble_evaluate(mf_ensemble* ensemble, const mf_manifest* const manifests[MF_MODALITY_COUNT],
                                      const char* pairing_strategy, uint64_t pairing_seed, mf_report* out);
MF_API size_t mf_ensemble_warning_count(const mf_ensemble* ensemble);
MF_API const char* mf_ensemble_warning(const mf_ensemble* ensemble, size_t index);
/* Writes <dir>/weights, and after an evaluation also <dir>/report and
 * <dir>/fused.tsv. */
MF_API mf_status mf_ensemble_save(const mf_ensemble* ensemble, const char* dir);
/* paths[m] may be NULL for a missing modality (requires allow_partial). */
MF_API mf_status mf_ensemble_predict_files(const mf_ensemble* ensemble, const char* const paths[MF_MODALITY_COUNT],
                                           mf_fused* out);
MF_API void mf_ensemble_free(mf_ensemble* ensemble);

/* Tab-separated fusion record: sample_id, six per-modality scores, two
 * weighted scores, label. Same length convention as mf_report_record. */
MF_API size_t mf_fused_record(const mf_fused* fused, const char* sample_id, char* buf, size_t len);

#ifdef __cplusplus
}
#endif

#endif /* MODALFUSE_MODALFUSE_H */
