//! C ABI for the longdoc crate.
//!
//! Every function returns an [`LdStatus`]. On failure the message is kept in
//! thread-local storage and read with [`ld_last_error`]. Models are opaque
//! handles created by [`ld_model_load`] and released by [`ld_model_free`].
//! Panics never cross the boundary; they surface as `LD_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use longdoc::checkpoint::load_checkpoint;
use longdoc::chunking::{chunk_count, tokenize, Vocabulary};
use longdoc::eval::{confusion, holm_correct, macro_f1, mcc, wilcoxon_signed_rank};
use longdoc::model::ModelState;
use longdoc::pipeline::{plan_passes, predict_document};
use longdoc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Malformed = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A loaded checkpoint plus its vocabulary.
pub struct LdModel {
    state: ModelState<f32>,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).unwrap_or_default()));
}

fn status_of(e: &Error) -> LdStatus {
    match e {
        Error::Io { .. } => LdStatus::Io,
        Error::Checkpoint(_) => LdStatus::Checkpoint,
        Error::Malformed { .. } | Error::Json(_) => LdStatus::Malformed,
        _ => LdStatus::InvalidArgument,
    }
}

fn fail(status: LdStatus, msg: impl Into<String>) -> LdStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), LdStatus>) -> LdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LdStatus::Internal, "internal panic"),
    }
}

fn lift<T>(r: longdoc::Result<T>) -> Result<T, LdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), LdStatus> {
    if p.is_null() {
        Err(fail(LdStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, LdStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LdStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], LdStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ld_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of chunks for `k` tokens, chunk size `c` and overlap `z`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_chunk_count(k: usize, c: usize, z: usize, out: *mut usize) -> LdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(chunk_count(k, c, z))?;
        Ok(())
    })
}

/// Writes the encoder pass sizes for `n` chunks into `passes` (capacity
/// `cap`) and their count into `out_len`. With `passes` NULL only the count
/// is reported.
///
/// # Safety
/// `out_len` must be valid for writes; `passes`, if not NULL, for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ld_plan_passes(
    n: usize,
    max_c: usize,
    passes: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> LdStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        let plan = lift(plan_passes(n, max_c))?;
        *out_len = plan.len();
        if passes.is_null() {
            return Ok(());
        }
        if cap < plan.len() {
            return Err(fail(
                LdStatus::BufferTooSmall,
                format!("{} passes do not fit in a buffer of {cap}", plan.len()),
            ));
        }
        slice::from_raw_parts_mut(passes, plan.len()).copy_from_slice(&plan);
        Ok(())
    })
}

/// Loads a checkpoint and its vocabulary file.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be valid for writes. On success
/// `*out` owns a handle that must be released with `ld_model_free`.
#[no_mangle]
pub unsafe extern "C" fn ld_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut LdModel,
) -> LdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let ckpt = str_arg(checkpoint_path, "checkpoint_path")?;
        let vocab = str_arg(vocab_path, "vocab_path")?;
        let state = lift(load_checkpoint::<f32>(Path::new(ckpt)))?;
        let vocab = lift(Vocabulary::load(Path::new(vocab)))?;
        if vocab.len() != state.config.encoder.vocab_size {
            return Err(fail(
                LdStatus::InvalidArgument,
                format!(
                    "vocabulary has {} entries, model expects {}",
                    vocab.len(),
                    state.config.encoder.vocab_size
                ),
            ));
        }
        *out = Box::into_raw(Box::new(LdModel { state, vocab }));
        Ok(())
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must come from `ld_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ld_model_free(model: *mut LdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Chunk size the model was trained with.
///
/// # Safety
/// `model` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_model_chunk_size(model: *const LdModel, out: *mut usize) -> LdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).state.config.chunk_size;
        Ok(())
    })
}

/// Tokenizes `text` with the model vocabulary and classifies it.
///
/// # Safety
/// `model` must be a live handle, `text` NUL-terminated, outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_model_predict_text(
    model: *const LdModel,
    text: *const c_char,
    out_probability: *mut f64,
    out_label: *mut u8,
) -> LdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out_probability, "out_probability")?;
        non_null(out_label, "out_label")?;
        let text = str_arg(text, "text")?;
        let m = &*model;
        let doc = lift(tokenize("ffi", text, None, &m.vocab))?;
        let p = lift(predict_document(&doc, &m.state))?;
        *out_probability = p.probability;
        *out_label = p.label;
        Ok(())
    })
}

unsafe fn binary_metric(
    predictions: *const u8,
    labels: *const u8,
    n: usize,
    out: *mut f64,
    f: fn(&longdoc::eval::ConfusionCounts) -> longdoc::Result<f64>,
) -> LdStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = slice_arg(predictions, n, "predictions")?;
        let y = slice_arg(labels, n, "labels")?;
        let c = lift(confusion(p, y))?;
        *out = lift(f(&c))?;
        Ok(())
    })
}

/// Macro-averaged F1 over classes 0 and 1.
///
/// # Safety
/// `predictions` and `labels` must hold `n` bytes each; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_macro_f1(predictions: *const u8, labels: *const u8, n: usize, out: *mut f64) -> LdStatus {
    binary_metric(predictions, labels, n, out, macro_f1)
}

/// Matthews correlation coefficient.
///
/// # Safety
/// `predictions` and `labels` must hold `n` bytes each; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_mcc(predictions: *const u8, labels: *const u8, n: usize, out: *mut f64) -> LdStatus {
    binary_metric(predictions, labels, n, out, mcc)
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples.
///
/// # Safety
/// `a` and `b` must hold `n` doubles each; `out_p` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ld_wilcoxon(a: *const f64, b: *const f64, n: usize, out_p: *mut f64) -> LdStatus {
    guard(|| {
        non_null(out_p, "out_p")?;
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        *out_p = lift(wilcoxon_signed_rank(a, b))?.p_value;
        Ok(())
    })
}

/// Holm step-down decisions; `out_reject[i]` is 1 when `pvals[i]` is rejected.
///
/// # Safety
/// `pvals` must hold `n` doubles and `out_reject` room for `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn ld_holm(pvals: *const f64, n: usize, alpha: f64, out_reject: *mut u8) -> LdStatus {
    guard(|| {
        let p = slice_arg(pvals, n, "pvals")?;
        let r = lift(holm_correct(p, alpha))?;
        non_null(out_reject, "out_reject")?;
        let out = slice::from_raw_parts_mut(out_reject, n);
        for (o, rej) in out.iter_mut().zip(r) {
            *o = u8::from(rej);
        }
        Ok(())
    })
}
