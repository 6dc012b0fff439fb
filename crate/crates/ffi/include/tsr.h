#ifndef TSR_H
#define TSR_H

#include <stdbool.h>
#include <stddef.h>

/**
 * Result of every fallible call.
 */
typedef enum TsrStatus {
  TSR_STATUS_OK = 0,
  TSR_STATUS_NULL_POINTER = 1,
  TSR_STATUS_INVALID_ARGUMENT = 2,
  TSR_STATUS_PARSE_ERROR = 3,
  TSR_STATUS_NO_STRUCTURE = 4,
  TSR_STATUS_OUT_OF_RANGE = 5,
  TSR_STATUS_INTERNAL = 6,
} TsrStatus;

typedef enum TsrFormat {
  TSR_FORMAT_HTML = 0,
  TSR_FORMAT_CSV = 1,
  TSR_FORMAT_JSON = 2,
} TsrFormat;

/**
 * Opaque evaluation session: ground truth and detections accumulate until
 * [`tsr_evaluator_run`].
 */
typedef struct TsrEvaluator TsrEvaluator;

/**
 * Opaque inferred table.
 */
typedef struct TsrGrid TsrGrid;

/**
 * Corner-form box.
 */
typedef struct TsrBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
} TsrBox;

/**
 * Mirrors the structure settings; one score cutoff per category code.
 */
typedef struct TsrStructureConfig {
  double score_threshold[4];
  double nms_iou;
  double span_overlap_tau;
  bool require_table_box;
} TsrStructureConfig;

typedef struct TsrCell {
  size_t row;
  size_t col;
  size_t rowspan;
  size_t colspan;
  struct TsrBox bbox;
} TsrCell;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *tsr_last_error_message(void);

/**
 * Library version, static storage.
 */
const char *tsr_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tsr_string_free(char *s);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * Pointers must be valid for reads (`a`, `b`) and writes (`out`).
 */
enum TsrStatus tsr_iou(const struct TsrBox *a, const struct TsrBox *b, double *out);

/**
 * Smooth L1 with transition point `beta`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum TsrStatus tsr_smooth_l1(double x, double beta, double *out);

/**
 * Per-category weights from batch counts and mean sizes (height + width).
 * Categories with count 0 get weight 0. `alpha` may be null for all zeros.
 *
 * # Safety
 * `counts`, `mean_sizes`, `out_weights` and a non-null `alpha` must each
 * point to `n` elements.
 */
enum TsrStatus tsr_class_weights(const size_t *counts,
                                 const double *mean_sizes,
                                 size_t n,
                                 double lambda,
                                 const double *alpha,
                                 double *out_weights);

/**
 * Default structure settings.
 */
struct TsrStructureConfig tsr_structure_config_default(void);

/**
 * Infers a table from a detections JSON document.
 *
 * `image_id` may be null when the document holds one image; `config` may be
 * null for defaults. On success `*out` owns a new grid.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be valid for writes.
 */
enum TsrStatus tsr_grid_infer(const char *detections_json,
                              const char *image_id,
                              const struct TsrStructureConfig *config,
                              struct TsrGrid **out);

/**
 * # Safety
 * `grid` must come from [`tsr_grid_infer`] and not have been freed. Null is
 * ignored.
 */
void tsr_grid_free(struct TsrGrid *grid);

/**
 * Row, column and cell counts. Any out-pointer may be null.
 *
 * # Safety
 * `grid` must be a live handle; non-null out-pointers must be writable.
 */
enum TsrStatus tsr_grid_dims(const struct TsrGrid *grid,
                             size_t *n_rows,
                             size_t *n_cols,
                             size_t *n_cells);

/**
 * Cell `index` in row-major order of top-left positions.
 *
 * # Safety
 * `grid` must be a live handle; `out` must be writable.
 */
enum TsrStatus tsr_grid_cell(const struct TsrGrid *grid, size_t index, struct TsrCell *out);

/**
 * Serializes the grid; free the result with [`tsr_string_free`].
 *
 * # Safety
 * `grid` must be a live handle; `out` must be writable.
 */
enum TsrStatus tsr_grid_export(const struct TsrGrid *grid, enum TsrFormat format, char **out);

/**
 * A new, empty evaluation session.
 */
struct TsrEvaluator *tsr_evaluator_new(void);

/**
 * # Safety
 * `ev` must come from [`tsr_evaluator_new`] and not have been freed. Null
 * is ignored.
 */
void tsr_evaluator_free(struct TsrEvaluator *ev);

/**
 * Adds one image of ground truth from a VOC XML document.
 *
 * # Safety
 * `ev` must be a live handle; `voc_xml` NUL-terminated.
 */
enum TsrStatus tsr_evaluator_add_ground_truth(struct TsrEvaluator *ev, const char *voc_xml);

/**
 * Appends every record of a detections JSON document.
 *
 * # Safety
 * `ev` must be a live handle; `detections_json` NUL-terminated.
 */
enum TsrStatus tsr_evaluator_add_detections(struct TsrEvaluator *ev, const char *detections_json);

/**
 * Evaluates everything added so far and writes the report JSON to `*out`.
 * `max_detections` 0 keeps every detection.
 *
 * # Safety
 * `ev` must be a live handle; `out` must be writable.
 */
enum TsrStatus tsr_evaluator_run(const struct TsrEvaluator *ev, size_t max_detections, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSR_H */
