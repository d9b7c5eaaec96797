#ifndef SDLM_H
#define SDLM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdlmStatus {
  SDLM_STATUS_OK = 0,
  SDLM_STATUS_NULL_POINTER = 1,
  SDLM_STATUS_INVALID_UTF8 = 2,
  SDLM_STATUS_IO = 3,
  SDLM_STATUS_PARSE = 4,
  SDLM_STATUS_INVALID_ARGUMENT = 5,
  SDLM_STATUS_NOT_FOUND = 6,
  SDLM_STATUS_CONTRACT = 7,
  SDLM_STATUS_NUMERIC = 8,
  SDLM_STATUS_UNSUPPORTED = 9,
  SDLM_STATUS_PANIC = 10,
} SdlmStatus;

/*
 A loaded lexicon.
 */
typedef struct SdlmLexicon SdlmLexicon;

/*
 A trained model bound to its lexicon.
 */
typedef struct SdlmModel SdlmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on the calling thread, or an empty
 string after a success. Valid until the next call on this thread.
 */
const char *sdlm_last_error_message(void);

/*
 Reads a lexicon TSV file into `*out`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SdlmStatus sdlm_lexicon_load(const char *path, struct SdlmLexicon **out);

/*
 # Safety
 `lexicon` must come from `sdlm_lexicon_load` and not be used afterwards.
 Null is ignored.
 */
void sdlm_lexicon_free(struct SdlmLexicon *lexicon);

/*
 # Safety
 All pointers must be valid.
 */
enum SdlmStatus sdlm_lexicon_counts(const struct SdlmLexicon *lexicon,
                                    size_t *words,
                                    size_t *senses,
                                    size_t *sememes);

/*
 Looks up a word's id. Returns `SDLM_STATUS_NOT_FOUND` for unknown words.

 # Safety
 All pointers must be valid; `word` must be NUL-terminated.
 */
enum SdlmStatus sdlm_lexicon_word_id(const struct SdlmLexicon *lexicon,
                                     const char *word,
                                     size_t *out);

/*
 Loads a checkpoint trained with `lexicon`. The model keeps its own
 reference to the lexicon, so the lexicon handle may be freed afterwards.

 # Safety
 All pointers must be valid; `path` must be NUL-terminated.
 */
enum SdlmStatus sdlm_model_load(const struct SdlmLexicon *lexicon,
                                const char *path,
                                struct SdlmModel **out);

/*
 # Safety
 `model` must come from `sdlm_model_load` and not be used afterwards.
 Null is ignored.
 */
void sdlm_model_free(struct SdlmModel *model);

/*
 Next-word distribution after `context`, a non-empty list of word ids.
 `out_len` must equal the vocabulary size.

 # Safety
 `context` must hold `context_len` ids and `out` room for `out_len` values.
 */
enum SdlmStatus sdlm_model_next_word_probs(const struct SdlmModel *model,
                                           const size_t *context,
                                           size_t context_len,
                                           double *out,
                                           size_t out_len);

/*
 Sememe gate activations after `context`. `out_len` must equal the number
 of sememes. Baseline models return `SDLM_STATUS_UNSUPPORTED`.

 # Safety
 `context` must hold `context_len` ids and `out` room for `out_len` values.
 */
enum SdlmStatus sdlm_model_sememe_gates(const struct SdlmModel *model,
                                        const size_t *context,
                                        size_t context_len,
                                        double *out,
                                        size_t out_len);

/*
 Perplexity of the model on a whitespace-tokenized corpus file.

 # Safety
 All pointers must be valid; `corpus_path` must be NUL-terminated.
 */
enum SdlmStatus sdlm_model_perplexity(const struct SdlmModel *model,
                                      const char *corpus_path,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDLM_H */
