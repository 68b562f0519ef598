#ifndef WEU_H
#define WEU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WeuStatus {
  WEU_STATUS_OK = 0,
  WEU_STATUS_NULL_POINTER = 1,
  WEU_STATUS_INVALID_ARGUMENT = 2,
  WEU_STATUS_IO = 3,
  WEU_STATUS_FORMAT = 4,
  WEU_STATUS_SHAPE_MISMATCH = 5,
  WEU_STATUS_CATALOG_TOO_SMALL = 6,
  WEU_STATUS_PANIC = 7,
} WeuStatus;

typedef enum WeuPwfKind {
  WEU_PWF_KIND_IDENTITY = 0,
  WEU_PWF_KIND_TF = 1,
  WEU_PWF_KIND_TF_PLUS = 2,
  WEU_PWF_KIND_PRELEC = 3,
  WEU_PWF_KIND_PRELEC_PLUS = 4,
} WeuPwfKind;

// A loaded checkpoint together with the dataset it was trained on.
typedef struct WeuModel WeuModel;

typedef struct WeuMetrics {
  double precision;
  double recall;
  double f1;
  double ndcg;
} WeuMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null. Valid until the next call
// into this library on the same thread.
const char *weu_last_error(void);

// Loads a checkpoint and the split directory it was trained on.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum WeuStatus weu_model_load(const char *checkpoint_path,
                              const char *dataset_dir,
                              struct WeuModel **out);

// # Safety
// `model` must come from [`weu_model_load`] and not be used afterwards.
void weu_model_free(struct WeuModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum WeuStatus weu_model_user_count(const struct WeuModel *model, size_t *out);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum WeuStatus weu_model_item_count(const struct WeuModel *model, size_t *out);

// Dense index of a raw user id (`is_item == 0`) or item id.
//
// # Safety
// `model` must be a live handle, `raw_id` NUL-terminated, `out` writable.
enum WeuStatus weu_model_index(const struct WeuModel *model,
                               const char *raw_id,
                               int32_t is_item,
                               size_t *out);

// Scores `items[0..len]` for `user` into `scores[0..len]`.
//
// # Safety
// `items` and `scores` must hold `len` elements.
enum WeuStatus weu_model_score(const struct WeuModel *model,
                               size_t user,
                               const size_t *items,
                               size_t len,
                               double *scores);

// Orders `items` by score, highest first with ties to the lower index, and
// writes the ordered items and their scores.
//
// # Safety
// `items`, `out_items` and `out_scores` must hold `len` elements.
enum WeuStatus weu_model_rank(const struct WeuModel *model,
                              size_t user,
                              const size_t *items,
                              size_t len,
                              size_t *out_items,
                              double *out_scores);

// Probability weighting `w(p)` for a `WeuPwfKind` code; θ is ignored by
// kinds that fix it at 1.
//
// # Safety
// `out` must be writable.
enum WeuStatus weu_pwf_weight(int32_t kind,
                              double p,
                              double delta,
                              double gamma,
                              double theta,
                              double *out);

// Piecewise tanh utility: `alpha * tanh(o)` for `o >= 0`, `beta * tanh(o)` otherwise.
double weu_utility(double outcome, double alpha, double beta);

// Precision, recall, F1 and NDCG of the top `k` of `ranked`.
//
// # Safety
// `ranked` must hold `ranked_len` and `relevant` `relevant_len` elements.
enum WeuStatus weu_metrics_at_k(const size_t *ranked,
                                size_t ranked_len,
                                const size_t *relevant,
                                size_t relevant_len,
                                size_t k,
                                struct WeuMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEU_H */
