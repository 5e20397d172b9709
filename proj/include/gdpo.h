/* gdpo — graph diffusion models with policy-gradient fine-tuning.
 *
 * C embedding surface over the C++ core: opaque handles, integer status
 * codes, and a thread-local last-error message. All strings are UTF-8.
 * Out-params are written only on GDPO_OK. Strings and handles returned to
 * the caller must be released with the matching free function.
 */
#ifndef GDPO_H
#define GDPO_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gdpo_status {
  GDPO_OK = 0,
  GDPO_ERR_INVALID_ARGUMENT = 1,
  GDPO_ERR_CONFIG = 2,
  GDPO_ERR_NUMERIC = 3,
  GDPO_ERR_IO = 4,
  GDPO_ERR_RUNTIME = 5
} gdpo_status;

const char* gdpo_version(void);

/* Message of the most recent failure on this thread; empty string if none. */
const char* gdpo_last_error(void);

void gdpo_string_free(char* s);

/* ---- graphs --------------------------------------------------------- */

typedef struct gdpo_graph gdpo_graph;

/* Parses the JSON object {"n", "a", "b", "X", "E"}. */
gdpo_status gdpo_graph_parse(const char* json, gdpo_graph** out);
gdpo_status gdpo_graph_dump(const gdpo_graph* g, char** json_out);
void gdpo_graph_free(gdpo_graph* g);

gdpo_status gdpo_graph_node_count(const gdpo_graph* g, int* out);
gdpo_status gdpo_graph_edge_count(const gdpo_graph* g, int* out);
gdpo_status gdpo_graph_is_connected(const gdpo_graph* g, int* out);
gdpo_status gdpo_graph_is_planar(const gdpo_graph* g, int* out);
gdpo_status gdpo_graph_is_tree_with_clique(const gdpo_graph* g,
                                           int clique_size, int* out);
gdpo_status gdpo_graph_wl_hash(const gdpo_graph* g, int rounds,
                               uint64_t* out);

/* ---- models --------------------------------------------------------- */

typedef struct gdpo_model gdpo_model;

gdpo_status gdpo_model_load(const char* path, gdpo_model** out);
gdpo_status gdpo_model_save(const gdpo_model* m, const char* path);
void gdpo_model_free(gdpo_model* m);

/* Samples one graph with n nodes by running the reverse chain. schedule is
 * "cosine" or "linear" and must match the horizon the model was trained
 * with (T comes from the checkpoint header). */
gdpo_status gdpo_model_sample(const gdpo_model* m, int n,
                              const char* schedule, uint64_t seed,
                              gdpo_graph** out);

/* ---- rewards --------------------------------------------------------- */

/* spec_json: {"preset": "general_graph", ...} or {"terms": [...]}.
 * ref_dataset_path: JSONL reference set for similarity terms; may be NULL
 * when no similarity term is present. */
gdpo_status gdpo_reward_eval(const char* spec_json,
                             const char* ref_dataset_path,
                             const gdpo_graph* g, double* out);

/* ---- command runners -------------------------------------------------- */

/* Each takes a full configuration JSON document (the same schema the CLI
 * reads), resolves defaults, validates, runs, and writes outputs into the
 * configured out_dir. */
gdpo_status gdpo_run_gen_dataset(const char* config_json);
gdpo_status gdpo_run_pretrain(const char* config_json);
gdpo_status gdpo_run_finetune(const char* config_json);
/* result_json_out may be NULL; otherwise receives the metrics document. */
gdpo_status gdpo_run_eval(const char* config_json, char** result_json_out);
/* config must carry an "experiment" field naming the study to run. */
gdpo_status gdpo_run_experiment(const char* config_json);

/* Applies defaults and validation for a command without running it; returns
 * the resolved document. commands: gen-dataset | pretrain | finetune | eval
 * | experiment. */
gdpo_status gdpo_resolve_config(const char* command, const char* config_json,
                                char** resolved_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GDPO_H */
