//! C ABI over `mtlvm`: opaque corpus and model handles, status codes, and a
//! thread-local last-error message.
//!
//! Every function returns an [`MtlvmStatus`]; outputs go through pointers.
//! Handles are released with their `_free` function; passing NULL to a free
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mtlvm::corpus::{self, Corpus};
use mtlvm::crf::ThetaView;
use mtlvm::sampler::{Hyperparams, ModelCheckpoint, MtlvmModel as Model, NullSink, RunOptions};
use mtlvm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtlvmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Precondition = 6,
    OutOfRange = 7,
    Invariant = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Loaded corpus.
pub struct MtlvmCorpus {
    inner: Corpus,
}

/// Trained or training MTLVM model; independent of the corpus it came from.
pub struct MtlvmModel {
    inner: Model,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MtlvmCorpusStats {
    pub documents: u64,
    pub entities: u64,
    pub units: u64,
    pub chains: u64,
    pub vocab_size: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> MtlvmStatus {
    match err {
        Error::MalformedRecord { .. } | Error::Json(_) | Error::Toml(_) => MtlvmStatus::Parse,
        Error::Config(_) => MtlvmStatus::Config,
        Error::Precondition(_) | Error::EnumerationBound(_) => MtlvmStatus::Precondition,
        Error::StateOutOfRange { .. } => MtlvmStatus::OutOfRange,
        Error::Invariant(_) => MtlvmStatus::Invariant,
        Error::Io { .. } => MtlvmStatus::Io,
    }
}

struct Fail(MtlvmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MtlvmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MtlvmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside mtlvm");
            MtlvmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MtlvmStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MtlvmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            MtlvmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mtlvm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtlvm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a corpus from `.json` or a `.jsonl` record stream.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_corpus_load(path: *const c_char, out: *mut *mut MtlvmCorpus) -> MtlvmStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Corpus::load(&path)?;
        *out = Box::into_raw(Box::new(MtlvmCorpus { inner }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from `mtlvm_corpus_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_corpus_free(corpus: *mut MtlvmCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_corpus_stats(corpus: *const MtlvmCorpus, out: *mut MtlvmCorpusStats) -> MtlvmStatus {
    guard(|| {
        let c = &handle(corpus, "corpus")?.inner;
        let out = handle_mut(out, "out")?;
        let s = corpus::stats(c);
        *out = MtlvmCorpusStats {
            documents: s.n_documents,
            entities: s.n_entities,
            units: s.n_units,
            chains: s.n_chains,
            vocab_size: c.vocab_size() as u64,
        };
        Ok(())
    })
}

/// Initialize a model from a TOML hyperparameter document (NULL for the
/// defaults). No sweeps are run.
///
/// # Safety
/// `corpus` must be a live handle; `config_toml` NULL or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_new(
    corpus: *const MtlvmCorpus,
    config_toml: *const c_char,
    out: *mut *mut MtlvmModel,
) -> MtlvmStatus {
    guard(|| {
        let c = &handle(corpus, "corpus")?.inner;
        let hp = if config_toml.is_null() {
            Hyperparams::default()
        } else {
            Hyperparams::from_toml_str(str_arg(config_toml, "config_toml")?)?
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Model::initialize(c, &hp)?;
        *out = Box::into_raw(Box::new(MtlvmModel { inner }));
        Ok(())
    })
}

/// Restore a model from a checkpoint file written for `corpus`.
///
/// # Safety
/// As for `mtlvm_model_new`.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_load(
    corpus: *const MtlvmCorpus,
    path: *const c_char,
    out: *mut *mut MtlvmModel,
) -> MtlvmStatus {
    guard(|| {
        let c = &handle(corpus, "corpus")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = ModelCheckpoint::load(&path)?;
        let inner = Model::from_checkpoint(c, &ckpt)?;
        *out = Box::into_raw(Box::new(MtlvmModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_free(model: *mut MtlvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run `sweeps` Gibbs sweeps.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_run(model: *mut MtlvmModel, sweeps: usize) -> MtlvmStatus {
    guard(|| {
        let m = &mut handle_mut(model, "model")?.inner;
        m.run(sweeps, &RunOptions::default(), &mut NullSink)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_save(model: *const MtlvmModel, path: *const c_char) -> MtlvmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        m.checkpoint().save(&path)?;
        Ok(())
    })
}

/// Writes the number of states, units and vocabulary entries; any pointer may be NULL.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_dims(
    model: *const MtlvmModel,
    n_states: *mut usize,
    n_units: *mut usize,
    vocab_size: *mut usize,
) -> MtlvmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        if let Some(p) = n_states.as_mut() {
            *p = m.hp.n_states;
        }
        if let Some(p) = n_units.as_mut() {
            *p = m.layout().n_units();
        }
        if let Some(p) = vocab_size.as_mut() {
            *p = m.layout().vocab_size;
        }
        Ok(())
    })
}

/// Current state of every unit (entity-major, epoch order), `len >= n_units`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_states(model: *const MtlvmModel, out: *mut u32, len: usize) -> MtlvmStatus {
    guard(|| copy_out(&handle(model, "model")?.inner.states(), out, len))
}

/// Posterior-mean transition matrix, row-major, `len >= C * C`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_transitions(model: *const MtlvmModel, out: *mut f64, len: usize) -> MtlvmStatus {
    guard(|| {
        let rho = handle(model, "model")?.inner.rho();
        let flat: Vec<f64> = rho.rho.iter().flatten().copied().collect();
        copy_out(&flat, out, len)
    })
}

/// Next-token distribution of `state` over the vocabulary, `len >= V`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_state_tokens(
    model: *const MtlvmModel,
    state: usize,
    out: *mut f64,
    len: usize,
) -> MtlvmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        if state >= m.hp.n_states {
            return Err(Error::StateOutOfRange {
                state,
                n_states: m.hp.n_states,
            }
            .into());
        }
        let dist = m.franchise().state_token_distribution(state, ThetaView::PosteriorMean);
        copy_out(&dist, out, len)
    })
}

/// Joint log-probability of the current configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtlvm_model_log_prob(model: *const MtlvmModel, out: *mut f64) -> MtlvmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        *handle_mut(out, "out")? = m.joint_log_prob();
        Ok(())
    })
}
