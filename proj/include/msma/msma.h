#ifndef MSMA_H
#define MSMA_H

/* C interface to the msma library.
 *
 * Every function returns an msma_status; on failure msma_last_error() gives the
 * message for the calling thread. Configuration goes in and reports come out as
 * JSON text. Strings returned through char** are owned by the caller and must be
 * released with msma_string_free. Layers are 1-based. */

#include <stddef.h>
#include <stdint.h>

#if defined(MSMA_BUILDING_LIBRARY)
#define MSMA_API __attribute__((visibility("default")))
#else
#define MSMA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msma_status {
  MSMA_OK = 0,
  MSMA_ERR_VALIDATION = 1,
  MSMA_ERR_IO = 2,
  MSMA_ERR_RUNTIME = 3,
  MSMA_ERR_AMBIGUOUS = 4,
  MSMA_ERR_INTERNAL = 5
} msma_status;

typedef struct msma_stack msma_stack;

MSMA_API const char* msma_version(void);
MSMA_API const char* msma_last_error(void);
MSMA_API const char* msma_status_name(msma_status s);
MSMA_API void msma_string_free(char* s);

/* layer stacks */
MSMA_API msma_status msma_stack_generate(const char* spec_json, msma_stack** out);
MSMA_API msma_status msma_stack_read(const char* dir, msma_stack** out);
MSMA_API msma_status msma_stack_write(const msma_stack* stack, const char* dir);
MSMA_API void msma_stack_free(msma_stack* stack);
/* manifest JSON; synthetic stacks carry their generator spec under "provenance" */
MSMA_API msma_status msma_stack_info(const msma_stack* stack, char** json_out);
MSMA_API msma_status msma_stack_layer(const msma_stack* stack, size_t layer, double* out, size_t capacity);

/* analysis; *_json arguments may be NULL or "" for defaults */
MSMA_API msma_status msma_profile_attention(const msma_stack* stack, char** json_out);
/* config: {"k", "pca_target", "seed", "full_matrix", "max_dc_samples"} */
MSMA_API msma_status msma_layer_metrics(const msma_stack* stack, const char* config_json, char** json_out);
/* config: {"tasks": [...], "probe": ProbeConfig} */
MSMA_API msma_status msma_probe(const msma_stack* stack, const char* config_json, char** json_out);
MSMA_API msma_status msma_detect_boundaries(const msma_stack* stack, const char* config_json, char** json_out);

/* alignment between the scales given by boundaries (l1, l2) */
MSMA_API msma_status msma_train_alignment(const msma_stack* stack, size_t l1, size_t l2, const char* config_json,
                                          char** json_out);
MSMA_API msma_status msma_ablate(const msma_stack* stack, size_t l1, size_t l2, const char* config_json, char** json_out,
                                 char** csv_out);
MSMA_API msma_status msma_error_additivity(const char* config_json, char** json_out);

/* interventions and statistics */
MSMA_API msma_status msma_intervene(const msma_stack* stack, size_t l1, size_t l2, const char* spec_json,
                                    msma_stack** out);
/* text: one document; lexicon_csv may be NULL */
MSMA_API msma_status msma_text_metrics(const char* text, const char* lexicon_csv, char** json_out);
/* paired_csv: run_id,metric,baseline,intervened */
MSMA_API msma_status msma_effect_study(const char* paired_csv, const char* config_json, char** json_out, char** csv_out);
MSMA_API msma_status msma_cliffs_delta(const double* x, size_t nx, const double* y, size_t ny, double* out);
MSMA_API msma_status msma_wilcoxon(const double* diffs, size_t n, double* w_plus, double* p);
MSMA_API msma_status msma_bh_fdr(const double* p, size_t n, double* adjusted);

/* reports */
MSMA_API msma_status msma_combine_runs(const char* const* dirs, size_t n, char** markdown_out, char** csv_out,
                                       char** warnings_json);
/* {"title", "xlabel", "ylabel", "series": [{"name", "y": [...]}]} */
MSMA_API msma_status msma_svg_lines(const char* plot_json, char** svg_out);
/* {"title", "values": [[...]], "rows": [...], "cols": [...]} */
MSMA_API msma_status msma_svg_heatmap(const char* plot_json, char** svg_out);

#ifdef __cplusplus
}
#endif

#endif
