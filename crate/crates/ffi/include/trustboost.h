#ifndef TRUSTBOOST_H
#define TRUSTBOOST_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TbStatus {
  TB_STATUS_OK = 0,
  TB_STATUS_NULL_POINTER = 1,
  TB_STATUS_INVALID_UTF8 = 2,
  TB_STATUS_INVALID_ARGUMENT = 3,
  TB_STATUS_NOT_FOUND = 4,
  TB_STATUS_LEDGER_ERROR = 5,
  TB_STATUS_AUDIT_ERROR = 6,
  TB_STATUS_PANIC = 7,
} TbStatus;

typedef enum TbRoute {
  TB_ROUTE_AUTO_DECIDE = 0,
  TB_ROUTE_HUMAN_REVIEW = 1,
} TbRoute;

typedef enum TbPreset {
  TB_PRESET_FABRIC_LIKE = 0,
  TB_PRESET_ETHEREUM_LIKE = 1,
} TbPreset;

// Opaque ledger handle.
typedef struct TbLedger TbLedger;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy of the calling thread's last error message, or null when the last
// call succeeded. Free with `tb_free_string`.
char *tb_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void tb_free_string(char *s);

// Lowercase hex SHA-256 of `len` bytes at `data`.
//
// # Safety
// `data` must point to `len` readable bytes (or be null with `len == 0`).
enum TbStatus tb_sha256_hex(const uint8_t *data, size_t len, char **out_hex);

// Normalized binary entropy of a fund/reject distribution.
//
// # Safety
// `out_entropy` must be a valid pointer.
enum TbStatus tb_entropy(double p_fund, double p_reject, double *out_entropy);

// # Safety
// `out_route` must be a valid pointer.
enum TbStatus tb_route(double entropy, double threshold, enum TbRoute *out_route);

// Dollar cost of storing `bytes` at `usd_per_kb` per 1000 bytes.
//
// # Safety
// `out_usd` must be a valid pointer.
enum TbStatus tb_onchain_cost(int64_t bytes, double usd_per_kb, double *out_usd);

// # Safety
// `out_ledger` must be a valid pointer. The handle is freed with `tb_ledger_free`.
enum TbStatus tb_ledger_new(uint32_t org_count,
                            enum TbPreset preset,
                            uint64_t seed,
                            struct TbLedger **out_ledger);

// # Safety
// `ledger` must be null or a handle from `tb_ledger_new`, freed once.
void tb_ledger_free(struct TbLedger *ledger);

// Queues an `(ID, DTM, H_E)` anchor submitted by organization
// `org_index` (1-based) at `submit_time` ms.
//
// # Safety
// `ledger` must be a live handle; strings must be NUL-terminated UTF-8.
enum TbStatus tb_ledger_submit_explanation(struct TbLedger *ledger,
                                           const char *customer_id,
                                           uint64_t dtm,
                                           const char *explanation_hash_hex,
                                           uint32_t org_index,
                                           uint64_t submit_time);

// Commits every block whose batch closes at or before `until`
// (`UINT64_MAX` commits everything queued).
//
// # Safety
// `ledger` must be a live handle; `out_blocks` may be null.
enum TbStatus tb_ledger_run_ordering(struct TbLedger *ledger, uint64_t until, size_t *out_blocks);

// # Safety
// `ledger` must be a live handle and `out_height` valid.
enum TbStatus tb_ledger_height(struct TbLedger *ledger, uint64_t *out_height);

// # Safety
// `ledger` must be a live handle and `out_valid` valid.
enum TbStatus tb_ledger_validate(struct TbLedger *ledger, bool *out_valid);

// Height of the earliest committed anchor for `(customer_id, hash)`,
// or `NotFound`.
//
// # Safety
// `ledger` must be a live handle; strings NUL-terminated UTF-8.
enum TbStatus tb_ledger_query(struct TbLedger *ledger,
                              const char *customer_id,
                              const char *explanation_hash_hex,
                              uint64_t *out_height);

// Runs the seeded batch tamper experiment.
//
// # Safety
// Out-pointers must be valid.
enum TbStatus tb_audit_batch(size_t file_count,
                             double tamper_fraction,
                             uint64_t seed,
                             uint64_t *out_tampered_found,
                             uint64_t *out_elapsed_ops);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRUSTBOOST_H */
