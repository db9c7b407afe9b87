#ifndef CHESSREAD_H
#define CHESSREAD_H
/* C interface to the scoresheet recognition toolkit: run-configuration
 * handling plus one entry point per command. Every function returns a status
 * code; on failure csr_last_error() holds a one-line message for the calling
 * thread. Strings handed back through char** out-parameters are heap
 * allocations owned by the caller; release them with csr_string_free. */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum csr_status {
  CSR_OK = 0,
  CSR_USAGE_ERROR = 1,   /* bad arguments or configuration */
  CSR_DATA_ERROR = 2,    /* malformed files or inconsistent inputs */
  CSR_NUMERIC_ERROR = 3  /* non-finite values or a failed gradient check */
} csr_status;

/* Library version (static storage; do not free). */
const char* csr_version(void);

/* Message for the calling thread's most recent failure; "" when the last
 * call succeeded. Thread-local static storage; do not free. */
const char* csr_last_error(void);

/* Frees a string returned through a char** out-parameter. NULL is a no-op. */
void csr_string_free(char* s);

/* Opaque run configuration: one JSON document that fully determines a run.
 * Unknown keys anywhere in the document are rejected. */
typedef struct csr_config csr_config;

/* Built-in complete configuration; name is "desk" or "paper". */
csr_status csr_config_preset(const char* name, csr_config** out);
csr_status csr_config_read(const char* path, csr_config** out);
csr_status csr_config_parse(const char* json_text, csr_config** out);
/* Applies one "dotted.key=value" assignment; the key must already exist in
 * the document (array elements are addressed by index). */
csr_status csr_config_set(csr_config* cfg, const char* assignment);
/* Applies every CHESSREAD_* variable of this process's environment as an
 * override (suffix matched case-insensitively against dotted keys). */
csr_status csr_config_apply_env(csr_config* cfg);
csr_status csr_config_json(const csr_config* cfg, char** out_json);
csr_status csr_config_write(const csr_config* cfg, const char* path);
void csr_config_free(csr_config* cfg);

/* Commands. Each validates the configuration, writes its artifacts under the
 * configuration's out_dir (always including resolved.json, the exact document
 * the run used), and reports "key=value" lines through out_summary. Pass NULL
 * as out_summary to discard the report. */

/* Generates the training and held-out datasets. */
csr_status csr_run_synth(const csr_config* cfg, char** out_summary);

/* Generates data, trains one model to convergence or the epoch budget,
 * evaluates it free-running on the held-out set, and saves a checkpoint. */
csr_status csr_run_train(const csr_config* cfg, char** out_summary);

/* Evaluates an existing checkpoint on the configuration's held-out set. */
csr_status csr_run_eval(const csr_config* cfg, const char* checkpoint_path,
                        char** out_summary);

/* Runs the six-configuration ablation grid across the configured seeds and
 * reports the qualitative direction checks. */
csr_status csr_run_ablation(const csr_config* cfg, char** out_summary);

/* Runs the sequence-length vs training-set-size sweep. */
csr_status csr_run_sweep(const csr_config* cfg, char** out_summary);

/* Trains one model through the configuration's schedule of datasets,
 * evaluating the held-out set after every stage. */
csr_status csr_run_incremental(const csr_config* cfg, char** out_summary);

/* Decodes one held-out sample with a checkpoint and exports its per-step
 * attention heat maps. */
csr_status csr_run_attention_map(const csr_config* cfg,
                                 const char* checkpoint_path, int sample_index,
                                 char** out_summary);

/* Image-free sequence-predictability baseline trained on the configured
 * training sequences and scored on the held-out sequences. */
csr_status csr_run_baseline(const csr_config* cfg, char** out_summary);

/* Finite-difference validation of the gradient machinery: every primitive op
 * plus composed encoder/attention/decoder graphs. Pass 0 for the defaults
 * (10 points per check, tolerance 1e-4). Returns CSR_NUMERIC_ERROR when the
 * worst relative error reaches the tolerance. */
csr_status csr_run_gradcheck(unsigned long long seed, int points_per_check,
                             double tolerance, char** out_summary);

/* Parses a PGN file (tag pairs, move numbers, comments, and results are
 * stripped) and returns one line per game of space-separated SAN tokens in
 * English. `language` names the piece-letter convention of the input: "en"
 * or "pt"; NULL means "en". */
csr_status csr_parse_pgn_file(const char* path, const char* language,
                              char** out_text);

#ifdef __cplusplus
}
#endif
#endif /* CHESSREAD_H */
