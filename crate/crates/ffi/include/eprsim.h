#ifndef EPRSIM_H
#define EPRSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EprsimStatus {
  EPRSIM_STATUS_OK = 0,
  EPRSIM_STATUS_NULL_POINTER = 1,
  EPRSIM_STATUS_INVALID_ARGUMENT = 2,
  EPRSIM_STATUS_CONFIG = 3,
  EPRSIM_STATUS_PARSE = 4,
  EPRSIM_STATUS_IO = 5,
  EPRSIM_STATUS_INCOMPLETE_DATASET = 6,
  EPRSIM_STATUS_UNDEFINED_VALUE = 7,
  EPRSIM_STATUS_SIZE_LIMIT = 8,
  EPRSIM_STATUS_CALIBRATION = 9,
  EPRSIM_STATUS_INTEGRATION = 10,
  EPRSIM_STATUS_NO_CONVERGENCE = 11,
  EPRSIM_STATUS_INTERNAL = 12,
} EprsimStatus;

typedef enum EprsimBasis {
  EPRSIM_BASIS_X = 0,
  EPRSIM_BASIS_MINUS_X = 1,
  EPRSIM_BASIS_Y = 2,
  EPRSIM_BASIS_Z = 3,
} EprsimBasis;

/**
 * Run configuration handle.
 */
typedef struct EprsimConfig EprsimConfig;

/**
 * Shot-record dataset handle.
 */
typedef struct EprsimDataset EprsimDataset;

/**
 * One shot. Counts are atom numbers per state.
 */
typedef struct EprsimShot {
  uint64_t shot_id;
  double n1a;
  double n2a;
  double n1b;
  double n2b;
  enum EprsimBasis basis_a;
  enum EprsimBasis basis_b;
  double theta_b;
  double delta_t_s;
  uint64_t seed;
} EprsimShot;

typedef struct EprsimAnalysisOptions {
  bool jitter_correction;
  size_t block_z;
  size_t block_y;
  size_t block_x;
  size_t bootstrap_resamples;
  uint64_t bootstrap_seed;
} EprsimAnalysisOptions;

typedef struct EprsimCriteria {
  double epr_a_to_b;
  double epr_b_to_a;
  double ent;
  double ent_reused_gains;
  double hei_a;
  double hei_b;
  double sx_a;
  double sx_b;
  double corr_z;
  double corr_y;
} EprsimCriteria;

/**
 * Headline numbers of an analysis. Without a complete block `has_average`
 * is false and the average fields are zero; without bootstrap errors the
 * error fields are zero.
 */
typedef struct EprsimAnalysis {
  size_t n_blocks;
  bool has_average;
  struct EprsimCriteria average;
  struct EprsimCriteria average_se;
  struct EprsimCriteria single_block;
  struct EprsimCriteria single_block_se;
} EprsimAnalysis;

typedef struct EprsimCalibration {
  double conversion;
  double detectivity[4];
} EprsimCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *eprsim_last_error_message(void);

/**
 * Library version, a static string.
 */
const char *eprsim_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void eprsim_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum EprsimStatus eprsim_config_default(struct EprsimConfig **out);

/**
 * Parses a JSON configuration; missing fields take their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EprsimStatus eprsim_config_from_json(const char *json, struct EprsimConfig **out);

/**
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum EprsimStatus eprsim_config_to_json(const struct EprsimConfig *config, char **out);

/**
 * SHA-256 of the configuration as hex.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum EprsimStatus eprsim_config_hash(const struct EprsimConfig *config, char **out);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void eprsim_config_free(struct EprsimConfig *config);

/**
 * Samples the configured schedule with B rotated by `theta_b` about x.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum EprsimStatus eprsim_simulate(const struct EprsimConfig *config,
                                  uint64_t seed,
                                  double theta_b,
                                  struct EprsimDataset **out);

/**
 * Reads a line-delimited JSON record file. Files mixing configurations
 * are refused unless `force` is set.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EprsimStatus eprsim_dataset_read(const char *path, bool force, struct EprsimDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle and `path` a NUL-terminated string.
 */
enum EprsimStatus eprsim_dataset_write(const struct EprsimDataset *dataset, const char *path);

/**
 * # Safety
 * `dataset` must be a live handle and `out` a valid pointer.
 */
enum EprsimStatus eprsim_dataset_len(const struct EprsimDataset *dataset, size_t *out);

/**
 * # Safety
 * `dataset` must be a live handle and `out` a valid pointer.
 */
enum EprsimStatus eprsim_dataset_shot(const struct EprsimDataset *dataset,
                                      size_t index,
                                      struct EprsimShot *out);

/**
 * # Safety
 * `dataset` must be null or a handle from this library not yet freed.
 */
void eprsim_dataset_free(struct EprsimDataset *dataset);

/**
 * Defaults: jitter correction on, blocks of 100 z / 100 y / 20 x shots,
 * 400 bootstrap resamples with seed 1.
 */
struct EprsimAnalysisOptions eprsim_analysis_options_default(void);

/**
 * Block analysis with bootstrap errors. `options` may be null for defaults.
 *
 * # Safety
 * `dataset` must be a live handle, `options` null or valid, `out` valid.
 */
enum EprsimStatus eprsim_analyze(const struct EprsimDataset *dataset,
                                 const struct EprsimAnalysisOptions *options,
                                 struct EprsimAnalysis *out);

/**
 * Full report, including per-block values and gains, as JSON.
 *
 * # Safety
 * As for [`eprsim_analyze`].
 */
enum EprsimStatus eprsim_analyze_json(const struct EprsimDataset *dataset,
                                      const struct EprsimAnalysisOptions *options,
                                      char **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum EprsimStatus eprsim_rabi_transfer(double rabi_hz, double detuning_hz, double t_s, double *out);

/**
 * Total final population outside the levels of the desired tones.
 *
 * # Safety
 * `scheme_json` must be a NUL-terminated string and `out` valid.
 */
enum EprsimStatus eprsim_spurious_population(const char *scheme_json, double *out);

/**
 * Selectivity report of the undesired tones as CSV.
 *
 * # Safety
 * `scheme_json` must be a NUL-terminated string and `out` valid.
 */
enum EprsimStatus eprsim_pulse_report_csv(const char *scheme_json, char **out);

/**
 * Fits detectivities from a Rabi scan and the conversion factor from
 * equal-superposition shots. Signals are row-major, four values per row
 * in the order 1A, 2A, 1B, 2B.
 *
 * # Safety
 * `scan` must hold `4 * scan_rows` values, `css` `4 * css_rows` values,
 * and `out` must be valid.
 */
enum EprsimStatus eprsim_calibrate(const double *scan,
                                   size_t scan_rows,
                                   const double *css,
                                   size_t css_rows,
                                   double n_nominal,
                                   double readout_sigma_atoms,
                                   bool joint,
                                   struct EprsimCalibration *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPRSIM_H */
