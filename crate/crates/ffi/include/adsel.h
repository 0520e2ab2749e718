#ifndef ADSEL_H
#define ADSEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdselStatus {
  ADSEL_STATUS_OK = 0,
  ADSEL_STATUS_NULL_POINTER = 1,
  ADSEL_STATUS_INVALID_ARGUMENT = 2,
  ADSEL_STATUS_IO = 3,
  ADSEL_STATUS_CONFIG = 4,
  ADSEL_STATUS_RUNTIME = 5,
  ADSEL_STATUS_PANIC = 6,
} AdselStatus;

typedef enum AdselBranch {
  ADSEL_BRANCH_ENSEMBLE = 0,
  ADSEL_BRANCH_SINGLE = 1,
} AdselBranch;

/*
 Run configuration built from `key = value` pairs.
 */
typedef struct AdselConfig AdselConfig;

/*
 Result of an offline selection.
 */
typedef struct AdselSelection AdselSelection;

/*
 A multivariate series with optional labels.
 */
typedef struct AdselSeries AdselSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *adsel_last_error(void);

/*
 Library version as a static string.
 */
const char *adsel_version(void);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void adsel_string_free(char *s);

/*
 Copies `rows * dims` row-major values and, if `labels` is non-null,
 `rows` labels (0 or 1) into a new series.

 # Safety
 `values` must point to `rows * dims` doubles; `labels` must be null or
 point to `rows` bytes; `out` must be a valid pointer.
 */
enum AdselStatus adsel_series_new(const double *values,
                                  size_t rows,
                                  size_t dims,
                                  const uint8_t *labels,
                                  struct AdselSeries **out);

/*
 Loads a CSV with one column per feature and an optional `label` column.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum AdselStatus adsel_series_load_csv(const char *path, struct AdselSeries **out);

/*
 Number of rows, or 0 for null.

 # Safety
 `series` must be null or a live series handle.
 */
size_t adsel_series_len(const struct AdselSeries *series);

/*
 # Safety
 `series` must be null or a handle from this library, not yet freed.
 */
void adsel_series_free(struct AdselSeries *series);

/*
 A default configuration.

 # Safety
 `out` must be a valid pointer.
 */
enum AdselStatus adsel_config_new(struct AdselConfig **out);

/*
 Sets one key. On failure the configuration is unchanged.

 # Safety
 `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum AdselStatus adsel_config_set(struct AdselConfig *config, const char *key, const char *value);

/*
 Applies a whole `key = value` text, as in a config file.

 # Safety
 `config` must be a live handle; `text` a NUL-terminated string.
 */
enum AdselStatus adsel_config_parse(struct AdselConfig *config, const char *text);

/*
 # Safety
 `config` must be null or a handle from this library, not yet freed.
 */
void adsel_config_free(struct AdselConfig *config);

/*
 Offline selection on the offline split of `series`.

 # Safety
 `series` and `config` must be live handles; `out` a valid pointer.
 */
enum AdselStatus adsel_select(const struct AdselSeries *series,
                              const struct AdselConfig *config,
                              struct AdselSelection **out);

/*
 Writes the branch chosen for deployment.

 # Safety
 `selection` must be a live handle; `out` a valid pointer.
 */
enum AdselStatus adsel_selection_designated(const struct AdselSelection *selection,
                                            enum AdselBranch *out);

/*
 Id of the top single detector; free with [`adsel_string_free`].

 # Safety
 `selection` must be a live handle; `out` a valid pointer.
 */
enum AdselStatus adsel_selection_top(const struct AdselSelection *selection, char **out);

/*
 The selection report as one JSON object (durations excluded); free
 with [`adsel_string_free`].

 # Safety
 `selection` must be a live handle; `out` a valid pointer.
 */
enum AdselStatus adsel_selection_json(const struct AdselSelection *selection, char **out);

/*
 # Safety
 `selection` must be null or a handle from this library, not yet freed.
 */
void adsel_selection_free(struct AdselSelection *selection);

/*
 Fuses rankings given as a JSON array of id arrays, e.g.
 `[["a","b"],["b","a"]]`. `literal` selects the literal transition
 orientation. Writes the consensus as a JSON array of ids.

 # Safety
 `rankings_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum AdselStatus adsel_aggregate(const char *rankings_json, bool literal, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADSEL_H */
