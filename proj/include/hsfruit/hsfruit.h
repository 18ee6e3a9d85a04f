/* Stable C interface to the hsfruit library. All functions return an hsf_status; on failure the
 * message is available from hsf_last_error() on the same thread until the next call. */
#ifndef HSFRUIT_H
#define HSFRUIT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HSF_API __declspec(dllexport)
#else
#define HSF_API __attribute__((visibility("default")))
#endif

typedef enum hsf_status {
  HSF_OK = 0,
  HSF_INVALID_ARGUMENT = 1,
  HSF_SHAPE_MISMATCH = 2,
  HSF_OUT_OF_RANGE = 3,
  HSF_IO = 4,
  HSF_MISSING_HEADER_KEY = 5,
  HSF_PAYLOAD_SIZE = 6,
  HSF_UNKNOWN_INTERLEAVE = 7,
  HSF_FORMAT = 8,
  HSF_NO_VISIBLE_BAND = 9,
  HSF_EMPTY_MASK = 10,
  HSF_SINGLE_CLASS = 11,
  HSF_INSUFFICIENT_DATA = 12,
  HSF_STATE = 13,
  HSF_NUMERICAL = 14,
  HSF_INTERNAL = 99
} hsf_status;

typedef struct hsf_cube hsf_cube;
typedef struct hsf_model hsf_model;
typedef struct hsf_bundle hsf_bundle;

typedef void (*hsf_log_fn)(const char* line, void* user);

HSF_API const char* hsf_version(void);
HSF_API const char* hsf_status_name(hsf_status s);
HSF_API const char* hsf_last_error(void);
/* Strings handed out by the library are released with this. */
HSF_API void hsf_free_string(char* s);
/* Allocator tuning for the large training buffers; call once before heavy work. */
HSF_API void hsf_init_runtime(void);

/* Space separated list of pipeline commands. */
HSF_API const char* hsf_commands(void);

/* Merges "dotted.key=value" overrides into config_json (may be NULL or empty), validates the
 * result and returns the fully resolved config as JSON. Invalid fields are named in the error. */
HSF_API hsf_status hsf_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                                      char** resolved_json);
HSF_API hsf_status hsf_config_hash(const char* config_json, char** hash);

/* Runs one pipeline command. summary_json may be NULL. */
HSF_API hsf_status hsf_run_command(const char* command, const char* config_json, hsf_log_fn log, void* user,
                                   char** summary_json);

/* Cubes (H x W x B, band last). */
HSF_API hsf_status hsf_cube_load(const char* path, hsf_cube** out);
HSF_API hsf_status hsf_cube_create(int height, int width, int bands, const double* wavelengths_nm,
                                   const float* data, hsf_cube** out);
HSF_API void hsf_cube_free(hsf_cube* cube);
HSF_API hsf_status hsf_cube_shape(const hsf_cube* cube, int* height, int* width, int* bands);
HSF_API const float* hsf_cube_data(const hsf_cube* cube);
HSF_API const double* hsf_cube_wavelengths(const hsf_cube* cube);
HSF_API hsf_status hsf_cube_save(const hsf_cube* cube, const char* path);

/* Trained classifiers; the checkpoint's stored reduction is applied before predicting. */
HSF_API hsf_status hsf_model_load(const char* checkpoint, hsf_model** out);
HSF_API void hsf_model_free(hsf_model* model);
HSF_API hsf_status hsf_model_info(const hsf_model* model, char** info_json);
/* probs receives n_classes values (3). */
HSF_API hsf_status hsf_model_predict(const hsf_model* model, const hsf_cube* cube, double* probs, size_t n_probs,
                                     int* predicted);

/* False-colour bundles. rgb receives H*W*3 floats in [0,1]. warning may be NULL. */
HSF_API hsf_status hsf_bundle_load(const char* path, hsf_bundle** out);
HSF_API void hsf_bundle_free(hsf_bundle* bundle);
HSF_API hsf_status hsf_bundle_render(const hsf_bundle* bundle, const hsf_cube* cube, float* rgb, size_t n_rgb,
                                     char** warning);
HSF_API hsf_status hsf_write_png(const float* rgb, int height, int width, const char* path);

#ifdef __cplusplus
}
#endif

#endif
