/* Layout-conditioned diffusion-transformer testbed: public C API.
 *
 * All functions return an ldit_status. On failure, ldit_last_error()
 * returns a thread-local message describing the problem. Strings returned
 * through char** out-parameters are heap-allocated; release them with
 * ldit_string_free(). Handles are opaque; release with the matching
 * *_free() function.
 */
#ifndef LDIT_H
#define LDIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ldit_status {
    LDIT_OK = 0,
    LDIT_E_VALIDATION = 1, /* bad input, parse error, invariant violation */
    LDIT_E_RUNTIME = 2     /* numeric, io, or other runtime failure */
} ldit_status;

const char* ldit_version(void);
const char* ldit_last_error(void);
void ldit_string_free(char* s);

/* ---- comic page layouts ---- */

typedef struct ldit_layout ldit_layout;

ldit_status ldit_layout_parse(const char* json, size_t len, ldit_layout** out);
ldit_status ldit_layout_serialize(const ldit_layout* layout, char** out_json);
/* Deterministic heuristic generator; chars_per_panel entries in [0,4]. */
ldit_status ldit_layout_generate(const int* chars_per_panel, size_t n_panels,
                                 double aspect_ratio, uint64_t seed, int right_to_left,
                                 ldit_layout** out);
/* Validity metrics for one page; expectations_json may carry
 * {"panel_count": int, "character_counts": [int,...]} or be NULL.
 * Returns a JSON object with the five metric fields. */
ldit_status ldit_layout_metrics(const ldit_layout* layout, const char* expectations_json,
                                char** out_json);
void ldit_layout_free(ldit_layout* layout);

/* ---- pipeline runs ---- */

typedef struct ldit_run ldit_run;

/* config_json: RunConfig object (strict; unknown keys rejected). Pass
 * "{}" for all defaults. */
ldit_status ldit_run_create(const char* config_json, ldit_run** out);
/* Effective (post-default) config as canonical JSON. */
ldit_status ldit_run_config(const ldit_run* run, char** out_json);

/* Each call writes its artifacts under out_dir and returns a one-line
 * JSON summary. */
ldit_status ldit_run_gen_data(ldit_run* run, const char* out_dir, char** summary);
ldit_status ldit_run_train(ldit_run* run, const char* data_dir /* nullable */,
                           const char* out_dir, char** summary);
ldit_status ldit_run_eval(ldit_run* run, const char* checkpoint,
                          const char* out_dir, char** summary);
ldit_status ldit_run_ablate(ldit_run* run, const char* out_dir, char** summary);
ldit_status ldit_run_cam_dump(ldit_run* run, const char* checkpoint,
                              const char* out_dir, char** summary);
/* boxes: "x0,y0,x1,y1;..." in latent units; subjects: comma-separated
 * palette names aligned with boxes. */
ldit_status ldit_run_infer(ldit_run* run, const char* checkpoint, const char* boxes,
                           const char* subjects, uint64_t seed, const char* out_dir,
                           char** summary);
void ldit_run_free(ldit_run* run);

#ifdef __cplusplus
}
#endif

#endif /* LDIT_H */
