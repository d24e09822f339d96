/* Copyright 2026 The invseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef INVSEG_INVSEG_H_
#define INVSEG_INVSEG_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define INVSEG_API __declspec(dllexport)
#else
#define INVSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum invseg_status {
  INVSEG_OK = 0,
  INVSEG_ERR_INVALID_ARGUMENT = 1,
  INVSEG_ERR_VALIDATION = 2,
  INVSEG_ERR_NON_FINITE = 3,
  INVSEG_ERR_FORMAT = 4,
  INVSEG_ERR_IO = 5,
  INVSEG_ERR_STATE = 6,
  INVSEG_ERR_UNDEFINED_METRIC = 7,
  INVSEG_ERR_INTERNAL = 8
} invseg_status;

typedef struct invseg_bundle invseg_bundle;
typedef struct invseg_backend invseg_backend;
typedef struct invseg_result invseg_result;

/* Message for the most recent failure on the calling thread. */
INVSEG_API const char* invseg_last_error(void);
INVSEG_API const char* invseg_status_name(invseg_status status);
INVSEG_API const char* invseg_version(void);

/* Caps kernel threads; 0 restores the INVSEG_THREADS / OpenMP default. */
INVSEG_API void invseg_set_threads(int threads);

/* ---- bundles ---------------------------------------------------------- */

INVSEG_API invseg_status invseg_bundle_load(const char* manifest_path, invseg_bundle** out);
INVSEG_API invseg_status invseg_bundle_save(const invseg_bundle* bundle,
                                            const char* manifest_path);
INVSEG_API invseg_status invseg_bundle_class_count(const invseg_bundle* bundle,
                                                   size_t* out);
INVSEG_API void invseg_bundle_free(invseg_bundle* bundle);

/* Loads and validates a manifest; the status says why it was rejected. */
INVSEG_API invseg_status invseg_validate(const char* manifest_path);

/* Synthesizes a fixture from a spec such as "blobs=2,side=32,noise=0.3,seed=7"
 * and writes the bundle and (when gt_path is non-null) its label PNG. */
INVSEG_API invseg_status invseg_fixture_write(const char* fixture_spec,
                                              const char* manifest_path,
                                              const char* gt_path);

/* ---- inversion -------------------------------------------------------- */

typedef struct invseg_run_options {
  size_t steps;
  double lr;
  double alpha;
  double anchor_scale;
  double anchor_center;
  size_t views;
  double crop_min;
  int t_min;
  int t_max;
  int infer_timestep;
  uint64_t seed;
  /* Working grid side; 0 picks the fixture grid (toy) or 64 (static). */
  size_t grid_side;
  /* Aggregation resolutions and weights; weights may be null for uniform. */
  const size_t* resolutions;
  const double* resolution_weights;
  size_t resolution_count;
  int symmetric_inter;    /* nonzero: symmetrized inter-class pairing */
  int normalize_entropy;  /* nonzero: per-pixel class normalization */
  int argmax_then_resize; /* nonzero: argmax on the grid, nearest resize */
} invseg_run_options;

INVSEG_API void invseg_run_options_default(invseg_run_options* options);

INVSEG_API invseg_status invseg_backend_create_toy(const char* fixture_spec,
                                                   const invseg_run_options* options,
                                                   invseg_backend** out);
INVSEG_API invseg_status invseg_backend_create_static(const invseg_bundle* bundle,
                                                      const invseg_run_options* options,
                                                      invseg_backend** out);
INVSEG_API void invseg_backend_free(invseg_backend* backend);

/* On a non-finite loss the result is still returned (trace up to the
 * failure) together with INVSEG_ERR_NON_FINITE. */
INVSEG_API invseg_status invseg_run(const invseg_backend* backend,
                                    const invseg_run_options* options,
                                    invseg_result** out);
INVSEG_API void invseg_result_free(invseg_result* result);

typedef struct invseg_loss {
  double cluster;
  double entropy;
  double total;
  double intra;
  double inter;
} invseg_loss;

typedef struct invseg_trace_entry {
  size_t step;
  int timestep;
  invseg_loss train; /* objective at the sampled timestep and crops */
  invseg_loss eval;  /* objective at the inference timestep, uncropped, after the update */
} invseg_trace_entry;

INVSEG_API size_t invseg_result_trace_length(const invseg_result* result);
INVSEG_API invseg_status invseg_result_trace_entry(const invseg_result* result, size_t index,
                                                   invseg_trace_entry* out);
/* Objective at the inference timestep before any update. */
INVSEG_API invseg_status invseg_result_initial_eval(const invseg_result* result,
                                                    invseg_loss* out);
INVSEG_API int invseg_result_aborted(const invseg_result* result);
INVSEG_API const char* invseg_result_diagnostic(const invseg_result* result);
INVSEG_API size_t invseg_result_class_count(const invseg_result* result);
INVSEG_API void invseg_result_image_dims(const invseg_result* result, size_t* height,
                                         size_t* width);

/* Label grid at the image size, height * width entries; `baseline` selects
 * the maps from the initial parameters. */
INVSEG_API invseg_status invseg_result_mask(const invseg_result* result, int baseline,
                                            int32_t* labels, size_t count);
INVSEG_API invseg_status invseg_result_write_mask_png(const invseg_result* result,
                                                      const char* path);
INVSEG_API invseg_status invseg_result_write_trace_csv(const invseg_result* result,
                                                       const char* path);
/* Writes final and baseline class maps as tensors into an existing or new
 * directory. */
INVSEG_API invseg_status invseg_result_write_maps(const invseg_result* result,
                                                  const char* dir);

/* ---- metrics ---------------------------------------------------------- */

INVSEG_API invseg_status invseg_read_labels(const char* path, size_t* height, size_t* width,
                                            int32_t* labels, size_t capacity);
INVSEG_API invseg_status invseg_metrics(const int32_t* predicted, const int32_t* truth,
                                        size_t count, size_t classes, int32_t ignore_label,
                                        double* miou, double* macc);

/* ---- oracle ----------------------------------------------------------- */

typedef struct invseg_oracle_report {
  size_t pixels;
  size_t classes;
  double skl_max_rel_error;
  double d_intra, d_intra_ref;
  double d_inter, d_inter_ref;
  double cluster, cluster_ref;
  double entropy, entropy_ref;
  double total, total_ref;
} invseg_oracle_report;

/* Evaluates the loss terms of a fixture with both the vectorized kernels and
 * the nested-loop reference. */
INVSEG_API invseg_status invseg_oracle(const char* fixture_spec, uint64_t augment_seed,
                                       invseg_oracle_report* out);

#ifdef __cplusplus
}
#endif

#endif /* INVSEG_INVSEG_H_ */
