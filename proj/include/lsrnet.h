/*
 * lsrnet — bearing fault diagnosis network: data pipeline, training with
 * adaptive pruning, complexity analysis and an inference benchmark, exposed
 * as a C shared-library API over opaque handles.
 *
 * Every fallible call returns an lsr_status; on failure the handle outputs
 * are untouched and lsr_last_error() describes the problem (thread-local).
 */
#ifndef LSRNET_H
#define LSRNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lsr_status {
    LSR_OK = 0,
    LSR_ERROR = 1,         /* unexpected failure */
    LSR_ERR_USAGE = 2,     /* invalid argument */
    LSR_ERR_FORMAT = 3,    /* malformed file or stream */
    LSR_ERR_CONTRACT = 4,  /* precondition violated */
    LSR_ERR_NUMERIC = 5    /* non-finite value produced */
} lsr_status;

typedef struct lsr_dataset lsr_dataset;
typedef struct lsr_model lsr_model;
typedef struct lsr_metrics lsr_metrics;
typedef struct lsr_report lsr_report;

/* Message for the most recent failure on this thread; never NULL. */
const char* lsr_last_error(void);

/* ----- datasets (.lsrd container) ----- */

lsr_status lsr_dataset_synth(int32_t classes, int32_t per_class, int32_t length,
                             double sample_rate_hz, uint64_t seed, lsr_dataset** out);
lsr_status lsr_dataset_read(const char* path, lsr_dataset** out);
lsr_status lsr_dataset_write(const lsr_dataset* ds, const char* path);
/* kind: "gaussian", "laplace" or "none". */
lsr_status lsr_dataset_add_noise(const lsr_dataset* ds, const char* kind, double snr_db,
                                 uint64_t seed, lsr_dataset** out);
/* Seeded 8:1:1 split (train / validation / test). */
lsr_status lsr_dataset_split(const lsr_dataset* ds, uint64_t seed, lsr_dataset** train,
                             lsr_dataset** val, lsr_dataset** test);
lsr_status lsr_dataset_info(const lsr_dataset* ds, int32_t* segment_count,
                            int32_t* segment_length, int32_t* class_count);
void lsr_dataset_free(lsr_dataset* ds);

/* ----- models (.lsrw checkpoint) ----- */

lsr_status lsr_model_create(int32_t input_length, int32_t classes, uint64_t seed,
                            lsr_model** out);
lsr_status lsr_model_load(const char* path, lsr_model** out);
lsr_status lsr_model_save(const lsr_model* m, const char* path);
lsr_status lsr_model_info(const lsr_model* m, int32_t* input_length, int32_t* classes);
/* Layer-by-layer output shapes and parameter counts; free with lsr_string_free. */
lsr_status lsr_model_trace(const lsr_model* m, char** out);
void lsr_model_free(lsr_model* m);

void lsr_string_free(char* s);

/* ----- training ----- */

typedef struct lsr_train_config {
    int32_t epochs;
    int32_t batch_size;
    double learning_rate;
    double weight_decay;
    double beta1, beta2, eps;
    uint64_t seed;
    double snr_db;          /* of the training data; < 0 arms adaptive pruning */
    double prune_fraction;  /* in [0, 1) */
    int32_t prune_on_train_loss; /* 0: validation loss (default), 1: training loss */
} lsr_train_config;

/* Fills in the defaults (50 epochs, batch 64, lr 1e-3, wd 1e-5, ...). */
void lsr_train_config_init(lsr_train_config* cfg);

typedef struct lsr_epoch_info {
    int32_t epoch;
    double train_loss;
    double val_loss;
    double val_accuracy;
    int32_t pruned_count;   /* 0 when no prune event this epoch */
    double prune_trigger;
} lsr_epoch_info;

typedef void (*lsr_epoch_callback)(const lsr_epoch_info* info, void* user);

/* Trains in place; the model ends at its best-validation-loss weights. */
lsr_status lsr_train(lsr_model* m, const lsr_dataset* train, const lsr_dataset* val,
                     const lsr_train_config* cfg, lsr_epoch_callback cb, void* user);

/* ----- evaluation ----- */

lsr_status lsr_evaluate(const lsr_model* m, const lsr_dataset* data, lsr_metrics** out);
double lsr_metrics_accuracy(const lsr_metrics* m);
double lsr_metrics_mean_loss(const lsr_metrics* m);
int32_t lsr_metrics_class_count(const lsr_metrics* m);
double lsr_metrics_class_accuracy(const lsr_metrics* m, int32_t cls);
int64_t lsr_metrics_class_total(const lsr_metrics* m, int32_t cls);
/* Confusion count for (actual, predicted); -1 on bad indices. */
int64_t lsr_metrics_confusion(const lsr_metrics* m, int32_t actual, int32_t predicted);
void lsr_metrics_free(lsr_metrics* m);

/* ----- complexity analysis ----- */

lsr_status lsr_analyze(const lsr_model* m, lsr_report** out);
/* Strings are owned by the report handle. */
const char* lsr_report_table(const lsr_report* r);
const char* lsr_report_tsv(const lsr_report* r);
int64_t lsr_report_total_flops(const lsr_report* r);
int64_t lsr_report_total_mac(const lsr_report* r);
int64_t lsr_report_total_params(const lsr_report* r);
int64_t lsr_report_model_size_bytes(const lsr_report* r);
void lsr_report_free(lsr_report* r);

/* ----- inference benchmark ----- */

/* samples_ms must hold `repeats` doubles; mean/stdev outputs are optional. */
lsr_status lsr_bench(const lsr_model* m, int32_t repeats, int32_t warmup,
                     double* mean_ms, double* stdev_ms, double* samples_ms);

#ifdef __cplusplus
}
#endif

#endif /* LSRNET_H */
