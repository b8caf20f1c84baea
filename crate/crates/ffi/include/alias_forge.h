#ifndef ALIAS_FORGE_H
#define ALIAS_FORGE_H

/* Generated from the alias-forge-ffi crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of a fallible ABI call.
 */
typedef enum AfStatus {
  /**
   * The call succeeded and its out-pointers are populated.
   */
  AF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  AF_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  AF_STATUS_INVALID_UTF8 = 2,
  /**
   * A JSON or CSV document could not be parsed.
   */
  AF_STATUS_DOCUMENT = 3,
  /**
   * A configuration value is out of range.
   */
  AF_STATUS_INVALID_CONFIG = 4,
  /**
   * A graph failed validation or referenced an unknown node.
   */
  AF_STATUS_GRAPH = 5,
  /**
   * A rewrite was not applicable or a genome mismatched its graph.
   */
  AF_STATUS_TRANSFORM = 6,
  /**
   * Execution failed: missing weights or a mismatched input tensor.
   */
  AF_STATUS_EXECUTION = 7,
  /**
   * A metric was undefined for the given input.
   */
  AF_STATUS_METRIC = 8,
  /**
   * The attack corpus was unusable for training or prediction.
   */
  AF_STATUS_ATTACK = 9,
  /**
   * A panic or other unexpected fault inside the library.
   */
  AF_STATUS_INTERNAL = 10,
} AfStatus;

/**
 * An obfuscation recipe bound to the graph it was sampled for.
 */
typedef struct AfGenome AfGenome;

/**
 * A model graph.
 */
typedef struct AfGraph AfGraph;

/**
 * A trained per-kernel layer-type predictor.
 */
typedef struct AfPredictor AfPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *af_version(void);

/**
 * Message of the most recent failure on this thread.  The pointer stays
 * valid until the next failing call on the same thread; never freed.
 */
const char *af_last_error(void);

/**
 * Release a string returned through a `char**` out-pointer.  NULL is a
 * no-op.
 *
 * # Safety
 * `s` must have come from this library and not been freed before.
 */
void af_string_free(char *s);

/**
 * Release a byte buffer returned through a `uint8_t**` out-pointer, with
 * the length the call reported.  NULL is a no-op.
 *
 * # Safety
 * `(ptr, len)` must match a buffer from this library, not freed before.
 */
void af_buffer_free(uint8_t *ptr, size_t len);

/**
 * Parse a model document into a graph handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum AfStatus af_graph_from_json(const char *json, struct AfGraph **out);

/**
 * Serialize a graph to its model-document JSON.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_graph_to_json(const struct AfGraph *graph, char **out);

/**
 * Destroy a graph handle.  NULL is a no-op.
 *
 * # Safety
 * `graph` must have come from this library and not been freed before.
 */
void af_graph_free(struct AfGraph *graph);

/**
 * The graph's name field.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_graph_name(const struct AfGraph *graph, char **out);

/**
 * Number of nodes in the graph, I/O markers included.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_graph_node_count(const struct AfGraph *graph, size_t *out);

/**
 * Number of kernel-emitting nodes — the rows a trace of this graph has.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_graph_kernel_count(const struct AfGraph *graph, size_t *out);

/**
 * Draw a random victim graph.  `config_json` is a generator config
 * document or NULL for the defaults; `seed` overrides the config's seed
 * so callers can sweep draws without recomposing JSON.
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out` must be valid.
 */
enum AfStatus af_graph_random(const char *config_json, uint64_t seed, struct AfGraph **out);

/**
 * Fill in any weights the graph is missing, drawn from `seed`.  Graphs
 * from shape-only documents need this before [`af_forward`].
 *
 * # Safety
 * `graph` must be a live handle, not aliased during the call.
 */
enum AfStatus af_graph_init_weights(struct AfGraph *graph, uint64_t seed);

/**
 * Sample a random obfuscation genome for a graph.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_genome_random(const struct AfGraph *graph, uint64_t seed, struct AfGenome **out);

/**
 * Parse a genome document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum AfStatus af_genome_from_json(const char *json, struct AfGenome **out);

/**
 * Serialize a genome document.
 *
 * # Safety
 * `genome` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_genome_to_json(const struct AfGenome *genome, char **out);

/**
 * Destroy a genome handle.  NULL is a no-op.
 *
 * # Safety
 * `genome` must have come from this library and not been freed before.
 */
void af_genome_free(struct AfGenome *genome);

/**
 * Total number of rewrite operations the genome applies.
 *
 * # Safety
 * `genome` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_genome_op_count(const struct AfGenome *genome, size_t *out);

/**
 * Apply a genome to the graph it was sampled for, producing the
 * function-preserving obfuscated graph.
 *
 * # Safety
 * `graph` and `genome` must be live handles; `out` must be valid.
 */
enum AfStatus af_apply_genome(const struct AfGraph *graph,
                              const struct AfGenome *genome,
                              struct AfGraph **out);

/**
 * Run the graph on a raw input tensor and return the raw output tensor.
 * The raw layout is three little-endian `uint32` dims (channels, height,
 * width) followed by that many little-endian `float32` values.  Free the
 * output with [`af_buffer_free`].
 *
 * # Safety
 * `graph` must be a live handle; `input` must point to `input_len` bytes;
 * `out` and `out_len` must be valid pointers.
 */
enum AfStatus af_forward(const struct AfGraph *graph,
                         const uint8_t *input,
                         size_t input_len,
                         uint8_t **out,
                         size_t *out_len);

/**
 * Trace the graph under the analytic model and return the trace as CSV.
 * `params_json` is a trace-parameter document or NULL for the defaults.
 *
 * # Safety
 * `graph` must be a live handle; `params_json` NULL or NUL-terminated;
 * `out` must be a valid pointer.
 */
enum AfStatus af_trace_csv(const struct AfGraph *graph, const char *params_json, char **out);

/**
 * Modeled end-to-end latency of the graph in cycles.
 *
 * # Safety
 * Same contract as [`af_trace_csv`], with a double out-pointer.
 */
enum AfStatus af_latency(const struct AfGraph *graph, const char *params_json, double *out);

/**
 * Summed per-feature standard deviation of the graph's trace — the
 * side-channel leakage score the search minimizes.
 *
 * # Safety
 * Same contract as [`af_trace_csv`], with a double out-pointer.
 */
enum AfStatus af_stdev_sum(const struct AfGraph *graph, const char *params_json, double *out);

/**
 * Search for a budget-constrained balancing genome.  `ga_json` and
 * `params_json` are config documents or NULL for the defaults; `hinge`
 * selects the fitness mode that keeps the deviation objective active
 * inside the budget.  `out_feasible` reports whether the returned genome
 * met the latency budget; when false the genome is the best found and
 * callers should treat the budget as missed.
 *
 * # Safety
 * `graph` must be a live handle; config strings NULL or NUL-terminated;
 * `out` and `out_feasible` must be valid pointers.
 */
enum AfStatus af_evolve(const struct AfGraph *graph,
                        const char *ga_json,
                        const char *params_json,
                        bool hinge,
                        struct AfGenome **out,
                        bool *out_feasible);

/**
 * Train a per-kernel layer-type predictor on a corpus of graphs.
 * `kind_json` selects the classifier (e.g. `{"kind":"gaussian_nb"}`,
 * `{"kind":"knn","k":5}`) or NULL for the default; `params_json` sets the
 * trace model the victims are observed under.
 *
 * # Safety
 * `graphs` must point to `count` live handles; config strings NULL or
 * NUL-terminated; `out` must be a valid pointer.
 */
enum AfStatus af_predictor_train(const struct AfGraph *const *graphs,
                                 size_t count,
                                 const char *kind_json,
                                 const char *params_json,
                                 struct AfPredictor **out);

/**
 * Parse a predictor document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum AfStatus af_predictor_from_json(const char *json, struct AfPredictor **out);

/**
 * Serialize a predictor document.
 *
 * # Safety
 * `predictor` must be a live handle; `out` must be a valid pointer.
 */
enum AfStatus af_predictor_to_json(const struct AfPredictor *predictor, char **out);

/**
 * Destroy a predictor handle.  NULL is a no-op.
 *
 * # Safety
 * `predictor` must have come from this library and not been freed before.
 */
void af_predictor_free(struct AfPredictor *predictor);

/**
 * Observe a victim graph under the trace model and extract its layer
 * sequence, returned as space-separated layer names in execution order.
 *
 * # Safety
 * `predictor` and `graph` must be live handles; `params_json` NULL or
 * NUL-terminated; `out` must be a valid pointer.
 */
enum AfStatus af_predictor_extract(const struct AfPredictor *predictor,
                                   const struct AfGraph *graph,
                                   const char *params_json,
                                   char **out);

/**
 * Layer error rate between an extracted sequence and the ground truth,
 * both as space-separated layer names (the [`af_predictor_extract`]
 * format): edit distance normalized by the truth's length.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be a valid pointer.
 */
enum AfStatus af_ler(const char *predicted, const char *truth, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ALIAS_FORGE_H */
