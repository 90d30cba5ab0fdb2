#ifndef LMBREAK_H
#define LMBREAK_H

/* Generated by cbindgen from lmbreak-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by fallible C API calls.
typedef enum LbStatus {
  LB_OK = 0,
  LB_NULL_ARGUMENT = 1,
  LB_INVALID_ARGUMENT = 2,
  LB_IO_ERROR = 3,
  LB_SHAPE_MISMATCH = 4,
  LB_NUMERIC_ERROR = 5,
  LB_INTERNAL_ERROR = 6,
} LbStatus;

// Opaque attack result handle.
typedef struct LbAttackResult LbAttackResult;

// Opaque trained-extractor handle.
typedef struct LbCheckpoint LbCheckpoint;

// Opaque image handle (H×W, 3 channels, pixel values in [0, 255]).
typedef struct LbImage LbImage;

// Attack configuration, mirrored as a plain C struct.
typedef struct LbAttackConfig {
  double epsilon;
  double alpha;
  size_t max_iters;
  double momentum_decay;
  // 0 = LB, 1 = FGSM, 2 = IFGSM, 3 = LB_trans, 4 = LB_mix.
  int32_t variant;
  // 0 = project, 1 = literal.
  int32_t budget_mode;
  uint64_t seed;
} LbAttackConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message recorded on this thread. The pointer stays valid
// until the next failing call on the same thread. Never NULL.
const char *lb_last_error_message(void);

// Default attack configuration (ε=15, α=1, T=20, λ=0.5, LB, project).
struct LbAttackConfig lb_attack_config_default(void);

// Build an image from interleaved RGB bytes (row-major, `h*w*3` bytes).
//
// # Safety
// `rgb` must point to at least `h*w*3` readable bytes.
struct LbImage *lb_image_from_rgb8(const uint8_t *rgb, size_t h, size_t w);

// Load a PNG file as an RGB image.
//
// # Safety
// `path` must be a valid NUL-terminated string.
struct LbImage *lb_image_load_png(const char *path);

// # Safety
// `img` must be a live handle from this library; `path` a valid C string.
enum LbStatus lb_image_save_png(const struct LbImage *img, const char *path);

// # Safety
// `img` must be a live handle or NULL.
size_t lb_image_height(const struct LbImage *img);

// # Safety
// `img` must be a live handle or NULL.
size_t lb_image_width(const struct LbImage *img);

// Copy the image out as interleaved RGB bytes (values rounded/clamped).
// `buf_len` must be at least `h*w*3`.
//
// # Safety
// `img` must be a live handle; `buf` must point to `buf_len` writable bytes.
enum LbStatus lb_image_to_rgb8(const struct LbImage *img, uint8_t *buf, size_t buf_len);

// # Safety
// `img` must be a handle from this library, not yet freed, or NULL.
void lb_image_free(struct LbImage *img);

// Number of landmarks in the standard schema (also the heat-map count).
size_t lb_landmark_count(void);

// Render the deterministic synthetic face for `seed` at `h`×`w` and write
// its 2k ground-truth coordinates (x0,y0,x1,y1,...) to `out_xy` when it is
// non-NULL.
//
// # Safety
// `out_xy`, if non-NULL, must point to `2 * lb_landmark_count()` writable f64.
struct LbImage *lb_render_face(uint64_t seed, size_t h, size_t w, double *out_xy);

// Load an extractor checkpoint archive.
//
// # Safety
// `path` must be a valid NUL-terminated string.
struct LbCheckpoint *lb_checkpoint_load(const char *path);

// Architecture name of a loaded checkpoint ("hourglass-mini" etc.).
// Returns a pointer into static storage; do not free.
//
// # Safety
// `ckpt` must be a live handle or NULL.
const char *lb_checkpoint_arch_name(const struct LbCheckpoint *ckpt);

// # Safety
// `ckpt` must be a handle from this library, not yet freed, or NULL.
void lb_checkpoint_free(struct LbCheckpoint *ckpt);

// Run the extractor and decode landmarks into `out_xy` (x,y pairs, image
// coordinates). `cap` is the capacity of `out_xy` in f64 values; it must be
// at least `2 * lb_landmark_count()`.
//
// # Safety
// `ckpt`/`img` must be live handles; `out_xy` must have `cap` writable f64.
enum LbStatus lb_extract_landmarks(const struct LbCheckpoint *ckpt,
                                   const struct LbImage *img,
                                   double *out_xy,
                                   size_t cap);

// Craft an adversarial image. Returns NULL on failure.
//
// # Safety
// `ckpt` and `img` must be live handles; `cfg` may be NULL for defaults.
struct LbAttackResult *lb_attack_run(const struct LbCheckpoint *ckpt,
                                     const struct LbImage *img,
                                     const struct LbAttackConfig *cfg);

// Copy of the adversarial image held by an attack result.
//
// # Safety
// `res` must be a live handle.
struct LbImage *lb_attack_result_image(const struct LbAttackResult *res);

// # Safety
// `res` must be a live handle or NULL.
size_t lb_attack_result_iterations(const struct LbAttackResult *res);

// # Safety
// `res` must be a live handle or NULL.
double lb_attack_result_linf_dev(const struct LbAttackResult *res);

// # Safety
// `res` must be a live handle or NULL.
double lb_attack_result_final_loss(const struct LbAttackResult *res);

// Copy up to `cap` loss-trace entries into `out`; returns the number of
// entries the full trace holds.
//
// # Safety
// `res` must be a live handle; `out`, if non-NULL, must have `cap` writable
// f64.
size_t lb_attack_result_loss_trace(const struct LbAttackResult *res, double *out, size_t cap);

// # Safety
// `res` must be a handle from this library, not yet freed, or NULL.
void lb_attack_result_free(struct LbAttackResult *res);

// NME of predicted vs ground-truth coordinates (standard 13-point schema;
// `k` must equal `lb_landmark_count()`).
//
// # Safety
// `pred_xy` and `gt_xy` must point to `2k` readable f64 each; `out` must be
// writable.
enum LbStatus lb_nme(const double *pred_xy, const double *gt_xy, size_t k, double *out);

// Full-frame SSIM between two images of identical size.
//
// # Safety
// `a` and `b` must be live handles; `out` a writable f64.
enum LbStatus lb_ssim(const struct LbImage *a, const struct LbImage *b, double *out);

// Mask-SSIM restricted to the region spanned by the ground-truth landmarks
// expanded by `margin_frac` of their bounding-box diagonal.
//
// # Safety
// `a`/`b` must be live handles; `gt_xy` holds `2k` f64; `out` is writable.
enum LbStatus lb_mask_ssim(const struct LbImage *a,
                           const struct LbImage *b,
                           const double *gt_xy,
                           size_t k,
                           double margin_frac,
                           double *out);

// Baseline-JPEG round trip at `quality` (1-100). Returns NULL on failure.
//
// # Safety
// `img` must be a live handle.
struct LbImage *lb_jpeg_roundtrip(const struct LbImage *img, uint8_t quality);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMBREAK_H */
