#ifndef BUOYNET_H
#define BUOYNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of an encoded radio frame in bytes.
 */
#define BN_FRAME_LEN 20

typedef enum BnStatus {
  BN_STATUS_OK = 0,
  BN_STATUS_NULL_ARGUMENT = 1,
  BN_STATUS_INVALID_ARGUMENT = 2,
  BN_STATUS_NO_SOLUTION = 3,
  BN_STATUS_FIT_FAILED = 4,
  BN_STATUS_FRAME_TRUNCATED = 5,
  BN_STATUS_FRAME_NOT_A_FRAME = 6,
  BN_STATUS_FRAME_UNSUPPORTED_VERSION = 7,
  BN_STATUS_FRAME_CORRUPT = 8,
  BN_STATUS_FRAME_OUT_OF_RANGE = 9,
  BN_STATUS_BUFFER_TOO_SMALL = 10,
  BN_STATUS_SCENARIO_INVALID = 11,
  BN_STATUS_PANIC = 99,
} BnStatus;

/**
 * Accumulates (distance, rssi) samples for a least-squares fit.
 */
typedef struct BnFitter BnFitter;

/**
 * A completed scenario run.
 */
typedef struct BnRun BnRun;

/**
 * Decoded frame fields, mirroring the wire layout.
 */
typedef struct BnFrame {
  uint8_t version;
  uint16_t node_id;
  uint16_t seq;
  int16_t temp_centi_c;
  int32_t lat_e7;
  int32_t lon_e7;
  uint16_t battery_mv;
} BnFrame;

/**
 * `rssi = a * ln(d / distance_unit_m) + b`. `r_squared` is NaN when unknown.
 */
typedef struct BnModel {
  double a;
  double b;
  double r_squared;
  double distance_unit_m;
} BnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 * Valid until the next call into this library on the same thread.
 */
const char *bn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bn_version(void);

/**
 * CRC-16/CCITT-FALSE of `len` bytes. NULL with `len == 0` is allowed.
 *
 * # Safety
 * `data` must point to `len` readable bytes unless `len` is 0.
 */
uint16_t bn_crc16(const uint8_t *data, size_t len);

/**
 * Encodes `frame` into `out`, which must hold `BN_FRAME_LEN` bytes.
 *
 * # Safety
 * `frame` must be valid for reads; `out` valid for `out_len` writes.
 */
enum BnStatus bn_frame_encode(const struct BnFrame *frame, uint8_t *out, size_t out_len);

/**
 * Decodes exactly `len` bytes into `out`.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be valid for writes.
 */
enum BnStatus bn_frame_decode(const uint8_t *data, size_t len, struct BnFrame *out);

/**
 * Mean RSSI in dBm at `distance_m`.
 *
 * # Safety
 * `model` must be valid for reads and `out` for writes.
 */
enum BnStatus bn_rssi_at(const struct BnModel *model, double distance_m, double *out);

/**
 * Distance in meters at which the mean RSSI falls to `sensitivity_dbm`.
 *
 * # Safety
 * `model` must be valid for reads and `out` for writes.
 */
enum BnStatus bn_max_range(const struct BnModel *model, double sensitivity_dbm, double *out);

/**
 * The reference model with a 60 m distance unit.
 */
struct BnModel bn_reference_model(void);

/**
 * New empty fitter; free with `bn_fitter_free`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BnStatus bn_fitter_new(double unit_m, struct BnFitter **out);

/**
 * # Safety
 * `fitter` must come from `bn_fitter_new`.
 */
enum BnStatus bn_fitter_add(struct BnFitter *fitter, double distance_m, double rssi_dbm);

/**
 * # Safety
 * `fitter` must come from `bn_fitter_new`, or be NULL.
 */
size_t bn_fitter_len(const struct BnFitter *fitter);

/**
 * # Safety
 * `fitter` must come from `bn_fitter_new`; `out` must be valid for writes.
 */
enum BnStatus bn_fitter_fit(const struct BnFitter *fitter, struct BnModel *out);

/**
 * # Safety
 * `fitter` must come from `bn_fitter_new` and not be used afterwards. NULL is a no-op.
 */
void bn_fitter_free(struct BnFitter *fitter);

/**
 * Parses a JSON scenario and runs it to completion; free with `bn_run_free`.
 *
 * # Safety
 * `scenario_json` must be a NUL-terminated string; `out` valid for writes.
 */
enum BnStatus bn_run_scenario(const char *scenario_json, struct BnRun **out);

/**
 * Telemetry as JSON lines, in monitor ingestion order.
 *
 * # Safety
 * `run` must come from `bn_run_scenario`, or be NULL.
 */
const char *bn_run_telemetry(const struct BnRun *run);

/**
 * Pipeline counters as a JSON object.
 *
 * # Safety
 * `run` must come from `bn_run_scenario`, or be NULL.
 */
const char *bn_run_stats_json(const struct BnRun *run);

/**
 * RSSI fit over stored readings, or `{"error": ...}`.
 *
 * # Safety
 * `run` must come from `bn_run_scenario`, or be NULL.
 */
const char *bn_run_fit_json(const struct BnRun *run);

/**
 * Number of readings the monitor stored.
 *
 * # Safety
 * `run` must come from `bn_run_scenario`, or be NULL.
 */
uint64_t bn_run_stored_count(const struct BnRun *run);

/**
 * 1 when emitted, delivered, published and stored counts reconcile.
 *
 * # Safety
 * `run` must come from `bn_run_scenario`, or be NULL.
 */
int32_t bn_run_balanced(const struct BnRun *run);

/**
 * # Safety
 * `run` must come from `bn_run_scenario` and not be used afterwards. NULL is a no-op.
 */
void bn_run_free(struct BnRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BUOYNET_H */
