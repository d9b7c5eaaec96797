//! C interface to the `sdlm` library.
//!
//! Handles are opaque and owned by the caller once created; release them
//! with the matching `*_free` function. Every fallible call returns an
//! `SdlmStatus`; on failure `sdlm_last_error_message` describes the cause.
//! Loaded handles are read-only and may be used from several threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use sdlm::checkpoint::Checkpoint;
use sdlm::corpus::read_corpus;
use sdlm::decoder::predict_sememes;
use sdlm::evaluation::perplexity;
use sdlm::lexicon::{read_lexicon, Lexicon};
use sdlm::model::LanguageModel;
use sdlm::Error;

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SdlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    NotFound = 6,
    Contract = 7,
    Numeric = 8,
    Unsupported = 9,
    Panic = 10,
}

/// A loaded lexicon.
pub struct SdlmLexicon {
    inner: Arc<Lexicon>,
}

/// A trained model bound to its lexicon.
pub struct SdlmModel {
    inner: LanguageModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: SdlmStatus,
    message: String,
}

impl Failure {
    fn new(status: SdlmStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => SdlmStatus::Io,
            Error::Schema { .. } | Error::Validation(_) | Error::Format(_) | Error::Json(_) => SdlmStatus::Parse,
            Error::Argument(_) => SdlmStatus::InvalidArgument,
            Error::Contract(_) => SdlmStatus::Contract,
            Error::NonFinite { .. } | Error::Diverged { .. } => SdlmStatus::Numeric,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SdlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SdlmStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            SdlmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SdlmStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SdlmStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(SdlmStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(SdlmStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn context_arg<'a>(context: *const usize, len: usize) -> Result<&'a [usize], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if context.is_null() {
        return Err(Failure::new(SdlmStatus::NullPointer, "`context` is null"));
    }
    Ok(std::slice::from_raw_parts(context, len))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SdlmStatus::NullPointer, "`out` is null"));
    }
    if out_len != values.len() {
        return Err(Failure::new(
            SdlmStatus::InvalidArgument,
            format!("output buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(values);
    Ok(())
}

/// Message for the most recent failure on the calling thread, or an empty
/// string after a success. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sdlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Reads a lexicon TSV file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdlm_lexicon_load(path: *const c_char, out: *mut *mut SdlmLexicon) -> SdlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let lex = read_lexicon(PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(SdlmLexicon { inner: Arc::new(lex) }));
        Ok(())
    })
}

/// # Safety
/// `lexicon` must come from `sdlm_lexicon_load` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdlm_lexicon_free(lexicon: *mut SdlmLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdlm_lexicon_counts(
    lexicon: *const SdlmLexicon,
    words: *mut usize,
    senses: *mut usize,
    sememes: *mut usize,
) -> SdlmStatus {
    guard(|| {
        let lex = &ref_arg(lexicon, "lexicon")?.inner;
        *out_arg(words, "words")? = lex.num_words();
        *out_arg(senses, "senses")? = lex.num_senses();
        *out_arg(sememes, "sememes")? = lex.num_sememes();
        Ok(())
    })
}

/// Looks up a word's id. Returns `SDLM_STATUS_NOT_FOUND` for unknown words.
///
/// # Safety
/// All pointers must be valid; `word` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sdlm_lexicon_word_id(
    lexicon: *const SdlmLexicon,
    word: *const c_char,
    out: *mut usize,
) -> SdlmStatus {
    guard(|| {
        let lex = &ref_arg(lexicon, "lexicon")?.inner;
        let out = out_arg(out, "out")?;
        let word = str_arg(word, "word")?;
        let id = lex
            .word_id(word)
            .ok_or_else(|| Failure::new(SdlmStatus::NotFound, format!("`{word}` is not in the lexicon")))?;
        *out = id.index();
        Ok(())
    })
}

/// Loads a checkpoint trained with `lexicon`. The model keeps its own
/// reference to the lexicon, so the lexicon handle may be freed afterwards.
///
/// # Safety
/// All pointers must be valid; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sdlm_model_load(
    lexicon: *const SdlmLexicon,
    path: *const c_char,
    out: *mut *mut SdlmModel,
) -> SdlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let lex = Arc::clone(&ref_arg(lexicon, "lexicon")?.inner);
        let path = str_arg(path, "path")?;
        let model = Checkpoint::load(PathBuf::from(path))?.into_model(lex)?;
        *out = Box::into_raw(Box::new(SdlmModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `sdlm_model_load` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdlm_model_free(model: *mut SdlmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Next-word distribution after `context`, a non-empty list of word ids.
/// `out_len` must equal the vocabulary size.
///
/// # Safety
/// `context` must hold `context_len` ids and `out` room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sdlm_model_next_word_probs(
    model: *const SdlmModel,
    context: *const usize,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SdlmStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.inner;
        let context = context_arg(context, context_len)?;
        let g = model.context_vector(context)?;
        write_out(&model.word_distribution(&g)?, out, out_len)
    })
}

/// Sememe gate activations after `context`. `out_len` must equal the number
/// of sememes. Baseline models return `SDLM_STATUS_UNSUPPORTED`.
///
/// # Safety
/// `context` must hold `context_len` ids and `out` room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sdlm_model_sememe_gates(
    model: *const SdlmModel,
    context: *const usize,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SdlmStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.inner;
        let context = context_arg(context, context_len)?;
        let view = model
            .sdlm_view()
            .ok_or_else(|| Failure::new(SdlmStatus::Unsupported, "baseline models have no sememe gates"))?;
        let g = model.context_vector(context)?;
        write_out(&predict_sememes(&g, &view)?.q, out, out_len)
    })
}

/// Perplexity of the model on a whitespace-tokenized corpus file.
///
/// # Safety
/// All pointers must be valid; `corpus_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sdlm_model_perplexity(
    model: *const SdlmModel,
    corpus_path: *const c_char,
    out: *mut f64,
) -> SdlmStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.inner;
        let out = out_arg(out, "out")?;
        let path = str_arg(corpus_path, "corpus_path")?;
        let corpus = read_corpus(PathBuf::from(path), model.lexicon())?;
        *out = perplexity(model, &corpus)?;
        Ok(())
    })
}
