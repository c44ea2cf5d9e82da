#ifndef POWERFOAM_H
#define POWERFOAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Renderer selection for `pf_render_to_file`.
 */
typedef enum PfRenderMode {
  PF_RENDER_MODE_RAYTRACE = 0,
  PF_RENDER_MODE_RASTER = 1,
} PfRenderMode;

/**
 * Result of every fallible call. Matches the command-line exit codes.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8, unreadable or malformed input.
   */
  PF_STATUS_INVALID_ARGUMENT = 1,
  PF_STATUS_RENDER_FAILURE = 2,
  PF_STATUS_NON_FINITE_LOSS = 3,
  PF_STATUS_INVARIANT_VIOLATION = 4,
} PfStatus;

/**
 * An owned scene. Create through `pf_scene_load` or `pf_scene_generate`,
 * release with `pf_scene_free`.
 */
typedef struct PfScene PfScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *pf_last_error(void);

/**
 * Loads a scene file written by this library or the CLI.
 */
enum PfStatus pf_scene_load(const char *path, struct PfScene **out);

/**
 * Writes a scene; the file re-loads bit-exactly.
 */
enum PfStatus pf_scene_save(const struct PfScene *scene, const char *path);

/**
 * Builds a synthetic scene; `preset` is "boxes", "shell" or "sparse".
 */
enum PfStatus pf_scene_generate(const char *preset, uint64_t seed, struct PfScene **out);

void pf_scene_free(struct PfScene *scene);

/**
 * Number of cells, Steiner cells included. Zero for a null handle.
 */
uintptr_t pf_scene_cell_count(const struct PfScene *scene);

/**
 * Renders through the camera file and writes a binary PPM.
 */
enum PfStatus pf_render_to_file(const struct PfScene *scene,
                                const char *camera_path,
                                enum PfRenderMode mode,
                                const char *out_path);

/**
 * Fills empty space with zero-density Steiner cells; the input is left
 * untouched and a new handle is returned.
 */
enum PfStatus pf_scene_steiner(const struct PfScene *scene, uint64_t seed, struct PfScene **out);

/**
 * Runs the scene invariant suite. On violation the first failing check is
 * named in `pf_last_error`.
 */
enum PfStatus pf_scene_validate(const struct PfScene *scene, uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POWERFOAM_H */
