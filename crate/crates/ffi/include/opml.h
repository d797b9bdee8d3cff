#ifndef OPML_H
#define OPML_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define OPML_ENGINE_NATIVE 0

#define OPML_ENGINE_NODE_VM 1

#define OPML_ENGINE_GRAPH_VM 2

#define OPML_PROTOCOL_SINGLE 0

#define OPML_PROTOCOL_TWO_PHASE 1

#define OPML_ROLE_SUBMITTER 0

#define OPML_ROLE_CHALLENGER 1

typedef enum OpmlStatus {
  OPML_STATUS_OK = 0,
  OPML_STATUS_NULL_POINTER = 1,
  OPML_STATUS_INVALID = 2,
  OPML_STATUS_IO = 3,
  OPML_STATUS_INTERNAL = 4,
} OpmlStatus;

/**
 * Loaded model. Opaque to C.
 */
typedef struct OpmlModel OpmlModel;

/**
 * Library-owned bytes.
 */
typedef struct OpmlBuffer {
  uint8_t *data;
  size_t len;
} OpmlBuffer;

typedef struct OpmlDisputeConfig {
  uint32_t protocol;
  uint64_t k;
  uint64_t m;
  /**
   * Node whose output the faulty party corrupts; negative for none.
   */
  int64_t fault_node;
  /**
   * 1-based VM step within the faulty node; 0 leaves the VM run intact
   * (two-phase) or diverges at the node's first step (single).
   */
  uint64_t fault_step;
  uint32_t faulty;
  /**
   * Strategy strings such as "honest" or "silent:3"; NULL means honest.
   */
  const char *submitter_strategy;
  const char *challenger_strategy;
  uint64_t seed;
} OpmlDisputeConfig;

typedef struct OpmlDisputeResult {
  uint32_t winner;
  uint32_t rounds;
  /**
   * -1 when no node was pinned.
   */
  int64_t pinned_node;
  /**
   * -1 when no VM step was pinned.
   */
  int64_t pinned_step;
} OpmlDisputeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *opml_last_error(void);

/**
 * Library version as a static string.
 */
const char *opml_version(void);

/**
 * Selects the process-wide commitment hash: "sha256" or "keccak256".
 *
 * # Safety
 * `name` must be a valid NUL-terminated string.
 */
enum OpmlStatus opml_set_hash(const char *name);

/**
 * Parses a model from its file encoding.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum OpmlStatus opml_model_load(const uint8_t *data, size_t len, struct OpmlModel **out_model);

/**
 * Reads and parses a model file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` must be writable.
 */
enum OpmlStatus opml_model_load_file(const char *path, struct OpmlModel **out_model);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from a load function and not have been freed.
 */
void opml_model_free(struct OpmlModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` must have room for 32 bytes.
 */
enum OpmlStatus opml_model_digest(const struct OpmlModel *model, uint8_t *out_digest);

/**
 * # Safety
 * `model` must be a live handle and `out_nodes` writable.
 */
enum OpmlStatus opml_model_node_count(const struct OpmlModel *model, size_t *out_nodes);

/**
 * Runs inference on a serialized input tensor with one of the
 * `OPML_ENGINE_*` engines and returns the serialized output. `out_steps`
 * (optional) receives the VM step count, 0 for the native engine.
 *
 * # Safety
 * `input` must point to `input_len` readable bytes; `out_tensor` must be
 * writable; `out_steps` may be NULL.
 */
enum OpmlStatus opml_infer(const struct OpmlModel *model,
                           const uint8_t *input,
                           size_t input_len,
                           uint32_t engine,
                           struct OpmlBuffer *out_tensor,
                           uint64_t *out_steps);

/**
 * Releases a buffer returned by the library. An empty buffer is ignored.
 *
 * # Safety
 * `buf` must come from this library and not have been freed.
 */
void opml_buffer_free(struct OpmlBuffer buf);

/**
 * One-step arbitration: `accepted` is set iff the encoded witness replays
 * from `pre` to `post`. A witness that fails to decode is rejected, not an
 * error.
 *
 * # Safety
 * `pre` and `post` must point to 32 bytes, `witness` to `len` bytes and
 * `accepted` must be writable.
 */
enum OpmlStatus opml_verify_step(const uint8_t *pre,
                                 const uint8_t *post,
                                 const uint8_t *witness,
                                 size_t len,
                                 bool check_preimage,
                                 bool *accepted);

/**
 * Checks an encoded Merkle proof that `claimed` (a hashed leaf or subtree
 * root) sits under `root`.
 *
 * # Safety
 * `root` and `claimed` must point to 32 bytes, `proof` to `len` bytes and
 * `ok` must be writable.
 */
enum OpmlStatus opml_merkle_verify(const uint8_t *root,
                                   const uint8_t *claimed,
                                   const uint8_t *proof,
                                   size_t len,
                                   bool *ok);

/**
 * `1 - p^m`.
 *
 * # Safety
 * `out_prob` must be writable.
 */
enum OpmlStatus opml_any_trust_prob(double p, uint32_t m, double *out_prob);

/**
 * Probability that at most `ceil(f·m)` of `m` validators are malicious.
 *
 * # Safety
 * `out_prob` must be writable.
 */
enum OpmlStatus opml_majority_trust_prob(double p, uint32_t m, double f, double *out_prob);

/**
 * Mixed equilibrium of the verification game. Values above one mean no
 * interior equilibrium exists.
 *
 * # Safety
 * `p_c` and `p_v` must be writable.
 */
enum OpmlStatus opml_verifier_equilibrium(double c,
                                          double r,
                                          double l,
                                          double b,
                                          double s,
                                          double *p_c,
                                          double *p_v);

/**
 * Cheapest attention penalty `g` and response probability `p_t`.
 *
 * # Safety
 * The three out pointers must be writable.
 */
enum OpmlStatus opml_optimal_attention(double r,
                                       double t,
                                       double c,
                                       double *g,
                                       double *p_t,
                                       double *cost);

/**
 * Plays a dispute over inference of `model` on `input`. Seeds derive the
 * same way as in the `opml dispute` command, so verdicts match it.
 *
 * # Safety
 * `model` must be a live handle, `input` must point to `input_len` bytes,
 * `config` must be readable and `result` writable.
 */
enum OpmlStatus opml_dispute_run(const struct OpmlModel *model,
                                 const uint8_t *input,
                                 size_t input_len,
                                 const struct OpmlDisputeConfig *config,
                                 struct OpmlDisputeResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPML_H */
