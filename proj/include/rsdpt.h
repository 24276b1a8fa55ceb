/* rsdpt: response selection with domain post-training.
 *
 * C interface to the training, data preparation, and evaluation pipeline.
 * All functions return rsdpt_status; on failure rsdpt_last_error() holds a
 * thread-local message valid until the next failing call on that thread.
 * Heavy pipeline entry points take a JSON options string (documented in the
 * README) so the surface stays small and forward compatible.
 */
#ifndef RSDPT_H
#define RSDPT_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rsdpt_status {
  RSDPT_OK = 0,
  RSDPT_ERR_USAGE = 1,   /* bad arguments or configuration */
  RSDPT_ERR_DATA = 2,    /* invalid or unreadable data */
  RSDPT_ERR_RUNTIME = 3  /* anything else */
} rsdpt_status;

const char* rsdpt_version(void);
const char* rsdpt_last_error(void);

/* ---- opaque handles ---- */

typedef struct rsdpt_vocab rsdpt_vocab;
typedef struct rsdpt_model rsdpt_model;

/* ---- vocabulary ---- */

/* Build a vocabulary from a dialogs JSONL file and write it to out_path. */
rsdpt_status rsdpt_build_vocab(const char* dialogs_jsonl, int target_size,
                               const char* out_path);

rsdpt_vocab* rsdpt_vocab_open(const char* vocab_path);
void rsdpt_vocab_free(rsdpt_vocab* vocab);
int rsdpt_vocab_size(const rsdpt_vocab* vocab);
/* Returns the id or -1 when the token is not in the vocabulary. */
int rsdpt_vocab_token_to_id(const rsdpt_vocab* vocab, const char* token);

/* Tokenize UTF-8 text into subword ids. *out_ids is allocated by the
 * library; release it with rsdpt_ids_free. */
rsdpt_status rsdpt_tokenize(const rsdpt_vocab* vocab, const char* text, int** out_ids,
                            int* out_len);
void rsdpt_ids_free(int* ids);

/* ---- models ---- */

rsdpt_model* rsdpt_model_open(const char* checkpoint_dir);
void rsdpt_model_free(rsdpt_model* model);
int rsdpt_model_hidden_size(const rsdpt_model* model);
int rsdpt_model_num_layers(const rsdpt_model* model);

/* Score one (context, response) pair: sigma(W^T t_cls + b) in (0, 1).
 * context is an array of num_context utterance strings, oldest first. */
rsdpt_status rsdpt_score(const rsdpt_model* model, const rsdpt_vocab* vocab,
                         const char* const* context, int num_context, const char* response,
                         int max_context_len, int max_response_len, int with_eot,
                         double* out_score);

/* ---- pipeline commands (JSON options) ---- */

rsdpt_status rsdpt_prepare_pretrain(const char* options_json);
rsdpt_status rsdpt_post_train(const char* options_json);
rsdpt_status rsdpt_fine_tune(const char* options_json);
/* On success *out_report_json holds the metrics report; release it with
 * rsdpt_string_free. Pass NULL to skip the copy. */
rsdpt_status rsdpt_evaluate(const char* options_json, char** out_report_json);
rsdpt_status rsdpt_predict(const char* options_json);

void rsdpt_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* RSDPT_H */
