#ifndef OCCLUSIM_H
#define OCCLUSIM_H

/* Generated by cbindgen from occlusim-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by fallible functions.
typedef enum OcStatus {
  OC_STATUS_OK = 0,
  OC_STATUS_NULL_POINTER = 1,
  OC_STATUS_INVALID_ARGUMENT = 2,
  OC_STATUS_NUMERIC = 3,
  OC_STATUS_IO = 4,
  OC_STATUS_INTERNAL = 5,
} OcStatus;

// Fitted realism critic handle.
typedef struct OcCritic OcCritic;

// Depth map handle (positive values, +inf sky).
typedef struct OcDepthMap OcDepthMap;

// RGB raster handle.
typedef struct OcImage OcImage;

// Single-channel raster handle (opacity, guidance, depth data).
typedef struct OcPlane OcPlane;

// One raindrop population in the C parameter mirror.
typedef struct OcDropType {
  double shape;
  double size;
  double frequency;
} OcDropType;

// Raindrop model parameters (defaults via `oc_raindrop_params_default`).
typedef struct OcRaindropParams {
  double sigma;
  double thickness_min;
  double thickness_max;
  struct OcDropType types[4];
} OcRaindropParams;

// Dirt model parameters.
typedef struct OcDirtParams {
  double sigma;
  double alpha;
  double blob_frequency;
  double blob_size;
} OcDirtParams;

// Fog model parameters.
typedef struct OcFogParams {
  double beta;
  double airlight[3];
} OcFogParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string.
const char *oc_version(void);

// Message of the last failure on this thread, or null if none. The pointer
// stays valid until the next failing call on the same thread.
const char *oc_last_error(void);

// Load an 8-bit RGB PNG.
struct OcImage *oc_image_load(const char *path);

// Save as 8-bit RGB PNG.
enum OcStatus oc_image_save(const struct OcImage *img, const char *path);

// New black image.
struct OcImage *oc_image_new(size_t width, size_t height);

size_t oc_image_width(const struct OcImage *img);

size_t oc_image_height(const struct OcImage *img);

// Copy pixel data out; `buffer` must hold `width * height * 3` doubles.
enum OcStatus oc_image_read(const struct OcImage *img, double *buffer);

// Fill the image from a buffer of `width * height * 3` doubles in [0, 1].
enum OcStatus oc_image_write(struct OcImage *img, const double *buffer);

void oc_image_free(struct OcImage *img);

size_t oc_plane_width(const struct OcPlane *plane);

size_t oc_plane_height(const struct OcPlane *plane);

// Copy plane values out; `buffer` must hold `width * height` doubles.
enum OcStatus oc_plane_read(const struct OcPlane *plane, double *buffer);

// Save as 16-bit PGM, clamping values into [0, 1].
enum OcStatus oc_plane_save_pgm(const struct OcPlane *plane, const char *path);

void oc_plane_free(struct OcPlane *plane);

// Load a 16-bit PGM depth map; raw value 65535 becomes the sky sentinel.
struct OcDepthMap *oc_depth_load(const char *path, double meters_per_unit);

void oc_depth_free(struct OcDepthMap *depth);

// Benchmark-default raindrop parameters.
struct OcRaindropParams oc_raindrop_params_default(void);

// Benchmark-default dirt parameters.
struct OcDirtParams oc_dirt_params_default(void);

// Default fog parameters at the given extinction coefficient.
struct OcFogParams oc_fog_params_default(double beta);

// Render raindrops over a scene and return the composite. If `out_alpha`
// is non-null it receives the overlay opacity plane.
struct OcImage *oc_render_raindrops(const struct OcImage *scene,
                                    const struct OcRaindropParams *params,
                                    uint64_t seed,
                                    struct OcPlane **out_alpha);

// Render dirt over a scene and return the composite.
struct OcImage *oc_render_dirt(const struct OcImage *scene,
                               const struct OcDirtParams *params,
                               uint64_t seed,
                               struct OcPlane **out_alpha);

// Render fog over a scene with its depth map and return the composite.
struct OcImage *oc_render_fog(const struct OcImage *scene,
                              const struct OcDepthMap *depth,
                              const struct OcFogParams *params,
                              struct OcPlane **out_alpha);

// Render a translated alpha composite (e.g. watermark) over a scene.
struct OcImage *oc_render_composite(const struct OcImage *scene,
                                    const struct OcImage *overlay,
                                    const struct OcPlane *overlay_alpha,
                                    uint64_t seed,
                                    struct OcPlane **out_alpha);

// Fit a critic over the target images.
struct OcCritic *oc_critic_fit(const struct OcImage *const *targets,
                               size_t count,
                               size_t patch_size);

// Realism score of an image: 0 means its patch statistics match the
// fitted targets.
enum OcStatus oc_critic_score(const struct OcCritic *critic,
                              const struct OcImage *img,
                              double *out_value);

// Analytic input gradient; `buffer` must hold `width * height * 3` doubles.
enum OcStatus oc_critic_input_gradient(const struct OcCritic *critic,
                                       const struct OcImage *img,
                                       double *buffer);

// Serialize the critic to a `.critic` file.
enum OcStatus oc_critic_save(const struct OcCritic *critic, const char *path);

// Load a critic from a `.critic` file.
struct OcCritic *oc_critic_load(const char *path);

void oc_critic_free(struct OcCritic *critic);

// Dataset-averaged guidance map in [0, 1] over the source images.
struct OcPlane *oc_guidance_map(const struct OcCritic *critic,
                                const struct OcImage *const *sources,
                                size_t count);

// Threshold a guidance map: `mask_out[i] = 1` where `dg[i] < gamma`.
// `mask_out` must hold `width * height` bytes.
enum OcStatus oc_guidance_threshold(const struct OcPlane *dg, double gamma, uint8_t *mask_out);

// Regress the raindrop defocus sigma against a target set; `params.sigma`
// is both the starting point and the result.
enum OcStatus oc_fit_raindrop_sigma(const struct OcImage *const *sources,
                                    size_t source_count,
                                    const struct OcImage *const *targets,
                                    size_t target_count,
                                    struct OcRaindropParams *params,
                                    uint64_t seed);

// Regress dirt sigma and alpha against a target set; `params` carries the
// starting point in and the estimate out.
enum OcStatus oc_fit_dirt(const struct OcImage *const *sources,
                          size_t source_count,
                          const struct OcImage *const *targets,
                          size_t target_count,
                          struct OcDirtParams *params,
                          uint64_t seed);

// Regress the fog extinction coefficient; `depths` must parallel `sources`.
enum OcStatus oc_fit_fog_beta(const struct OcImage *const *sources,
                              size_t source_count,
                              const struct OcDepthMap *const *depths,
                              const struct OcImage *const *targets,
                              size_t target_count,
                              struct OcFogParams *params,
                              uint64_t seed);

// Load displacement rasters and render raindrops with them instead of the
// built-in field.
struct OcImage *oc_render_raindrops_with_field(const struct OcImage *scene,
                                               const struct OcRaindropParams *params,
                                               const char *udisp_path,
                                               const char *vdisp_path,
                                               uint64_t seed,
                                               struct OcPlane **out_alpha);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCLUSIM_H */
