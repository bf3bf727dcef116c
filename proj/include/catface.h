#ifndef CATFACE_H
#define CATFACE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes, so each failure class is distinct. */
typedef enum catface_status {
  CATFACE_OK = 0,
  CATFACE_ERROR_CONFIG = 1,
  CATFACE_ERROR_DATA = 2,
  CATFACE_ERROR_NUMERIC = 3,
  CATFACE_ERROR_IO = 4,
  CATFACE_ERROR_BAD_HANDLE = 5,
  CATFACE_ERROR_UNKNOWN = 6
} catface_status;

/* A session owns one model plus the config document driving it. Sessions are
   not thread-safe; use one per thread. */
typedef struct catface_session catface_session;

const char* catface_version(void);

/* Message for the most recent failing call on this thread. Empty string when
   the last call succeeded. Valid until the next API call on the thread. */
const char* catface_last_error(void);

/* Frees any string returned through a char** out-parameter. */
void catface_string_free(char* s);

/* config_text: JSON or "dotted.key = value" lines with optional sections
   model / data / train / train2 / eval. NULL means all defaults. The model
   is initialized from the model section. */
catface_status catface_session_create(const char* config_text, catface_session** out);

/* Restores the model from a checkpoint. config_text supplies the non-model
   sections; its model section, if any, is replaced by the checkpoint's. */
catface_status catface_session_open(const char* checkpoint_path, const char* config_text,
                                    catface_session** out);

catface_status catface_session_save(catface_session* s, const char* checkpoint_path);

void catface_session_free(catface_session* s);

/* Applies one "dotted.key=value" override to the session's config document.
   Changing the model section does not reshape the live model. */
catface_status catface_session_set(catface_session* s, const char* assignment);

/* JSON summary: version, epoch, model config, parameter/buffer counts. */
catface_status catface_session_info(catface_session* s, char** json_out);

/* Trains the branch networks (step 1) per the train section. log_out, when
   non-NULL, receives one line per epoch. */
catface_status catface_train_step1(catface_session* s, char** log_out);

/* Trains the fusion stage (step 2) per the train section overlaid with the
   train2 section. resume=0 restarts the epoch counter, nonzero continues. */
catface_status catface_train_step2(catface_session* s, int resume, char** log_out);

/* Verification metrics per the eval section, reported as JSON and as a flat
   TSV table from the same run; either out-pointer may be NULL. */
catface_status catface_evaluate(catface_session* s, char** json_out, char** tsv_out);

/* axis: "distill" (5 rows), "metric" (2 rows), or "fusion" (4 rows).
   table_out receives the fixed-width text table, json_out one report per
   row; either may be NULL. Runs on a fresh model per row; the session
   supplies configuration only. */
catface_status catface_ablate(catface_session* s, const char* axis, char** table_out,
                              char** json_out);

/* Finite-difference gradient audit over n_seeds seeds starting at base_seed.
   passed_out (optional) is 1 when every case is below tol. */
catface_status catface_grad_suite(uint64_t base_seed, int n_seeds, double tol,
                                  char** summary_out, int* passed_out);

/* Renders n_images eval-split faces and writes attention magnitude maps
   (PGM plus a raw archive) under dir. */
catface_status catface_dump_attention(catface_session* s, const char* dir, int n_images);

/* Writes the identity manifest and samples_per_identity clean renders per
   identity under dir. with_degraded adds a degraded copy of each render
   using the train section's degradation. */
catface_status catface_export_dataset(catface_session* s, const char* dir,
                                      int samples_per_identity, int with_degraded);

/* Validates a checkpoint (magic, version, CRC) and reports its contents as
   JSON: epoch, model config, per-tensor names and shapes. */
catface_status catface_checkpoint_info(const char* path, char** json_out);

#ifdef __cplusplus
}
#endif

#endif /* CATFACE_H */
