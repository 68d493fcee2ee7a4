#ifndef STYLECODE_STYLECODE_H
#define STYLECODE_STYLECODE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SC_API __declspec(dllexport)
#else
#define SC_API __attribute__((visibility("default")))
#endif

typedef enum sc_status {
    SC_OK = 0,
    SC_ERR_INVALID_ARGUMENT = 1,
    SC_ERR_IO = 2,
    SC_ERR_FORMAT = 3,
    SC_ERR_MISSING_STAGE = 4,
    SC_ERR_INCOMPATIBLE = 5,
    SC_ERR_RUNTIME = 6
} sc_status;

/* Stage flags reported by sc_bundle_stages. */
#define SC_STAGE_EXTRACTOR 1u
#define SC_STAGE_CODEBOOK 2u
#define SC_STAGE_GENERATOR 4u
#define SC_STAGE_FREQUENCIES 8u
#define SC_STAGE_FLOW 16u

typedef struct sc_config sc_config;
typedef struct sc_dataset sc_dataset;
typedef struct sc_bundle sc_bundle;
typedef struct sc_style sc_style;
typedef struct sc_result sc_result;
typedef struct sc_server sc_server;

/* Message for the last failed call on this thread ("" after success). */
SC_API const char* sc_last_error(void);
SC_API const char* sc_status_name(sc_status status);
/* Frees strings returned through char** out-parameters. */
SC_API void sc_free_string(char* text);

/* ---- configuration ---- */
SC_API sc_status sc_config_default(sc_config** out);
/* path NULL or "" falls back to $CTYL_CONFIG, then defaults. */
SC_API sc_status sc_config_load(const char* path, sc_config** out);
SC_API sc_status sc_config_from_json(const char* text, sc_config** out);
/* Applies a flat JSON object of overrides; unknown keys are rejected. */
SC_API sc_status sc_config_apply_json(sc_config* config, const char* text);
SC_API sc_status sc_config_save(const sc_config* config, const char* path);
SC_API sc_status sc_config_to_json(const sc_config* config, char** out);
SC_API sc_status sc_config_hash(const sc_config* config, uint64_t* out);
SC_API void sc_config_free(sc_config* config);

/* ---- dataset ---- */
SC_API sc_status sc_dataset_generate(const sc_config* config, const char* dir, sc_dataset** out);
SC_API sc_status sc_dataset_open(const sc_config* config, const char* dir, sc_dataset** out);
SC_API sc_status sc_dataset_size(const sc_dataset* dataset, size_t* images, size_t* styles);
SC_API void sc_dataset_free(sc_dataset* dataset);

/* ---- checkpoint bundle ---- */
typedef void (*sc_progress_fn)(const char* stage, int step, int total, double loss, void* user);

SC_API sc_status sc_bundle_new(const sc_config* config, sc_bundle** out);
/* config NULL uses the sidecar config saved next to the checkpoint. */
SC_API sc_status sc_bundle_load(const char* path, const sc_config* config, sc_bundle** out);
SC_API sc_status sc_bundle_save(const sc_bundle* bundle, const char* path);
SC_API sc_status sc_bundle_stages(const sc_bundle* bundle, uint32_t* stages);
SC_API sc_status sc_bundle_config(const sc_bundle* bundle, sc_config** out);
SC_API void sc_bundle_free(sc_bundle* bundle);

/* steps < 0 uses the step count from the config. */
SC_API sc_status sc_train_codebook(sc_bundle* bundle, const sc_dataset* dataset, int steps, sc_progress_fn progress,
                                   void* user);
SC_API sc_status sc_train_generator(sc_bundle* bundle, const sc_dataset* dataset, int steps,
                                    sc_progress_fn progress, void* user);
SC_API sc_status sc_compute_frequencies(sc_bundle* bundle, const sc_dataset* dataset);
SC_API sc_status sc_train_flow(sc_bundle* bundle, const sc_dataset* dataset, int steps, sc_progress_fn progress,
                               void* user);

/* ---- results: a list of items, each with style indices and an optional PPM image ---- */
SC_API size_t sc_result_count(const sc_result* result);
SC_API sc_status sc_result_indices(const sc_result* result, size_t item, const int32_t** data, size_t* length);
/* length 0 when the item has no image. */
SC_API sc_status sc_result_image(const sc_result* result, size_t item, const uint8_t** ppm, size_t* length);
SC_API sc_status sc_result_weight(const sc_result* result, size_t item, double* weight);
SC_API void sc_result_free(sc_result* result);

/* ---- inference ---- */
/* suppress != 0 applies the frequency suppression coefficients. */
SC_API sc_status sc_sample(const sc_bundle* bundle, uint64_t code, int suppress, sc_result** out);
/* steps <= 0 uses the config; caption is whitespace-separated vocabulary words. */
SC_API sc_status sc_generate(const sc_bundle* bundle, uint64_t code, const char* caption, int count, int steps,
                             int suppress, sc_result** out);
SC_API sc_status sc_encode(const sc_bundle* bundle, const uint8_t* ppm, size_t length, sc_result** out);
SC_API sc_status sc_generate_from_image(const sc_bundle* bundle, const uint8_t* ppm, size_t length,
                                        const char* caption, int steps, uint64_t noise_seed, sc_result** out);

SC_API sc_status sc_style_from_code(const sc_bundle* bundle, uint64_t code, sc_style** out);
SC_API sc_status sc_style_from_image(const sc_bundle* bundle, const uint8_t* ppm, size_t length, sc_style** out);
SC_API void sc_style_free(sc_style* style);
/* strategy is "random" or "split". */
SC_API sc_status sc_interpolate(const sc_bundle* bundle, const sc_style* a, const sc_style* b, const double* weights,
                                size_t n_weights, const char* caption, int steps, const char* strategy,
                                uint64_t seed, sc_result** out);

SC_API sc_status sc_frequencies(const sc_bundle* bundle, double* f, size_t capacity, size_t* length, double* tau,
                                double* k);

/* Runs the evaluation over n_codes codes drawn from seed; dataset may be NULL (no recovery).
   Writes the report as JSON. */
SC_API sc_status sc_evaluate(const sc_bundle* bundle, const sc_dataset* dataset, size_t n_codes, int count,
                             uint64_t seed, int suppress, char** report_json);

/* ---- HTTP service ---- */
/* port 0 picks a free port; the server runs on a background thread. */
SC_API sc_status sc_server_start(const sc_bundle* bundle, const char* host, int port, sc_server** out);
SC_API int sc_server_port(const sc_server* server);
SC_API void sc_server_stop(sc_server* server);
SC_API void sc_server_free(sc_server* server);

#ifdef __cplusplus
}
#endif

#endif
