// Copyright 2026 The cpnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the cpnet library. Every call returns a cpnet_status; on
 * failure cpnet_last_error() holds a message for the calling thread. Handles
 * are opaque and owned by the caller once returned. */
#ifndef CPNET_CPNET_H_
#define CPNET_CPNET_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(CPNET_BUILDING_LIBRARY)
#define CPNET_API __attribute__((visibility("default")))
#else
#define CPNET_API
#endif

typedef enum cpnet_status {
  CPNET_OK = 0,
  CPNET_ERR_INVALID_ARGUMENT = 1,
  CPNET_ERR_NUMERIC = 2,
  CPNET_ERR_IO = 3,
  CPNET_ERR_DIMENSION = 4,
  CPNET_ERR_INTERNAL = 5
} cpnet_status;

typedef struct cpnet_config cpnet_config;
typedef struct cpnet_model cpnet_model;

CPNET_API const char* cpnet_last_error(void);
CPNET_API const char* cpnet_status_name(cpnet_status status);
/* Caps intra-op worker threads; 0 restores the CPNET_THREADS / hardware default. */
CPNET_API void cpnet_set_threads(int threads);

/* ---- configuration ---- */

CPNET_API cpnet_status cpnet_config_create(cpnet_config** out);
CPNET_API cpnet_status cpnet_config_load(const char* path, cpnet_config** out);
CPNET_API cpnet_status cpnet_config_set(cpnet_config* cfg, const char* key, const char* value);
/* Copies the serialized value (NUL-terminated) into buf when it fits;
 * *needed receives the required size including the terminator. */
CPNET_API cpnet_status cpnet_config_get(const cpnet_config* cfg, const char* key, char* buf, size_t buf_size,
                                        size_t* needed);
CPNET_API cpnet_status cpnet_config_save(const cpnet_config* cfg, const char* path);
CPNET_API void cpnet_config_destroy(cpnet_config* cfg);

/* Writes the held-out scenes described by cfg (val_seed, val_count) as a
 * dataset directory. */
CPNET_API cpnet_status cpnet_generate_dataset(const cpnet_config* cfg, const char* out_dir);

/* ---- training ---- */

typedef struct cpnet_step_log {
  int64_t step;
  double lr;
  double seg;
  double aux;
  double unary;
  double global;
  double total;
} cpnet_step_log;

typedef void (*cpnet_step_fn)(const cpnet_step_log* log, void* user);

/* Trains into out_dir (train_log.csv, checkpoint/). model_out may be NULL. */
CPNET_API cpnet_status cpnet_train(const cpnet_config* cfg, const char* out_dir, cpnet_step_fn on_step, void* user,
                                   cpnet_model** model_out);

CPNET_API cpnet_status cpnet_model_load(const char* checkpoint_dir, cpnet_model** out);
CPNET_API cpnet_status cpnet_model_save(const cpnet_model* model, const char* checkpoint_dir);
CPNET_API void cpnet_model_destroy(cpnet_model* model);

/* ---- evaluation ---- */

typedef struct cpnet_metrics {
  double pix_acc;
  double mean_iou;
  int64_t scenes;
  int64_t pixels;
} cpnet_metrics;

/* data_dir NULL evaluates on the held-out scenes of the model's config.
 * scales NULL (or n_scales 0) uses the config's eval scales. */
CPNET_API cpnet_status cpnet_evaluate(cpnet_model* model, const char* data_dir, const double* scales, size_t n_scales,
                                      int flip, cpnet_metrics* out);

typedef struct cpnet_prior_stats {
  int64_t valid_entries;
  int64_t agreeing;
  double agreement;
} cpnet_prior_stats;

/* Writes prior.pgm, prior_inverse.pgm, affinity.pgm, input.ppm, labels.ppm
 * and prediction.ppm for scene `scene_id`: an index into data_dir, or into
 * the config's held-out scenes when data_dir is NULL. stats may be NULL. */
CPNET_API cpnet_status cpnet_dump_prior(cpnet_model* model, int64_t scene_id, const char* data_dir,
                                        const char* out_dir, cpnet_prior_stats* stats);

/* ---- gradient checks ---- */

typedef struct cpnet_grad_report {
  const char* name;
  int64_t entries;
  double max_rel_error;
  int passed;
} cpnet_grad_report;

typedef void (*cpnet_grad_fn)(const cpnet_grad_report* report, void* user);

CPNET_API size_t cpnet_grad_check_op_count(void);
CPNET_API const char* cpnet_grad_check_op_name(size_t index);
/* Float64 central-difference check of one op, of every op when op is NULL,
 * or of the toy network's total loss when op is "full_model". *all_passed
 * is set to 1 when every report passed. */
CPNET_API cpnet_status cpnet_grad_check(const char* op, cpnet_grad_fn on_report, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* CPNET_CPNET_H_ */
