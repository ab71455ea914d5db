/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PHOTOAPP_H
#define PHOTOAPP_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes shared by every function.
 */
typedef enum PaStatus {
  PA_STATUS_OK = 0,
  PA_STATUS_NULL_POINTER = 1,
  PA_STATUS_INVALID_UTF8 = 2,
  PA_STATUS_IO = 3,
  PA_STATUS_FORMAT = 4,
  PA_STATUS_PARAMETER = 5,
  PA_STATUS_SHAPE = 6,
  PA_STATUS_NUMERIC = 7,
  PA_STATUS_CONFIG = 8,
  PA_STATUS_CAPABILITY = 9,
  PA_STATUS_VERSION = 10,
  PA_STATUS_CORRUPT = 11,
  PA_STATUS_BUFFER_TOO_SMALL = 12,
  PA_STATUS_PANIC = 13,
} PaStatus;

/**
 * Spherical light basis.
 */
typedef struct PaBasis PaBasis;

/**
 * Lat-long HDR environment map.
 */
typedef struct PaEnvMap PaEnvMap;

/**
 * Trained latent-editing network.
 */
typedef struct PaNet PaNet;

/**
 * One-light-at-a-time image stack of a single identity and camera.
 */
typedef struct PaStack PaStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a NUL-terminated
 * string, truncating if needed. Returns the full message length in bytes
 * (excluding the terminator).
 */
size_t pa_last_error_message(char *buf, size_t buf_len);

/**
 * Near-uniform basis of `n` directions with equal solid angles.
 */
enum PaStatus pa_basis_fibonacci(size_t n, struct PaBasis **out);

/**
 * Reads a basis text file (one `x y z solid_angle` line per light).
 */
enum PaStatus pa_basis_load(const char *path, struct PaBasis **out);

/**
 * Number of lights, or 0 for a null handle.
 */
size_t pa_basis_len(const struct PaBasis *basis);

void pa_basis_free(struct PaBasis *basis);

/**
 * Reads a Radiance `.hdr` environment map.
 */
enum PaStatus pa_envmap_load(const char *path, struct PaEnvMap **out);

/**
 * Map of constant radiance.
 */
enum PaStatus pa_envmap_constant(size_t width,
                                 size_t height,
                                 float r,
                                 float g,
                                 float b,
                                 struct PaEnvMap **out);

void pa_envmap_free(struct PaEnvMap *env);

/**
 * Bins `env` onto `basis`, writing `3 * pa_basis_len(basis)` RGB weights.
 */
enum PaStatus pa_envmap_resample(const struct PaEnvMap *env,
                                 const struct PaBasis *basis,
                                 float *out_weights,
                                 size_t out_len);

/**
 * Builds a stack from `lights` interleaved RGB images of `width * height`
 * pixels, stored one after another in `data`.
 */
enum PaStatus pa_stack_new(size_t width,
                           size_t height,
                           size_t lights,
                           const float *data,
                           size_t data_len,
                           struct PaStack **out);

/**
 * Reads `lights` images named `light_000.hdr ..` from a directory.
 */
enum PaStatus pa_stack_load(const char *dir, size_t lights, struct PaStack **out);

/**
 * Writes width, height and light count; any output pointer may be null.
 */
enum PaStatus pa_stack_info(const struct PaStack *stack,
                            size_t *width,
                            size_t *height,
                            size_t *lights);

void pa_stack_free(struct PaStack *stack);

/**
 * Weighted sum of the stack images. `weights` holds three values per light;
 * `out_rgb` receives `width * height * 3` floats.
 */
enum PaStatus pa_relight(const struct PaStack *stack,
                         const float *weights,
                         size_t weights_len,
                         float *out_rgb,
                         size_t out_len);

/**
 * Loads network parameters from a checkpoint file.
 */
enum PaStatus pa_net_load(const char *path, struct PaNet **out);

/**
 * Latent length (blocks times block width), or 0 for a null handle.
 */
size_t pa_net_latent_len(const struct PaNet *net);

/**
 * Number of environment values the network expects, or 0 for a null handle.
 */
size_t pa_net_env_len(const struct PaNet *net);

void pa_net_free(struct PaNet *net);

/**
 * Edits `latent` towards the target illumination `env` and pose
 * (`yaw`, `pitch`, `roll` in radians). `p` and `q` are 0 or 1; `q` is ignored
 * by networks trained without it.
 */
enum PaStatus pa_net_apply(const struct PaNet *net,
                           const float *latent,
                           size_t latent_len,
                           const float *env,
                           size_t env_len,
                           double yaw,
                           double pitch,
                           double roll,
                           uint8_t p,
                           uint8_t q,
                           float *out_latent,
                           size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHOTOAPP_H */
