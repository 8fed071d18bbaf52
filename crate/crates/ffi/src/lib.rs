//! C ABI over the spanloc locator, span discretization, ROUGE scoring and
//! text preprocessing.
//!
//! Every fallible function returns a [`SpanlocStatus`]. On failure the
//! message is kept per thread and can be read with [`spanloc_last_error`].
//! Strings returned by the library must be released with
//! [`spanloc_string_free`], locators with [`spanloc_locator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spanloc::ingest::preprocess_text;
use spanloc::locator::{load_checkpoint, locator_forward, LocatorParams, SpanPrediction};
use spanloc::matrix::Matrix;
use spanloc::rouge;
use spanloc::span::discretize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanlocStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidArgument = 4,
    Shape = 5,
    Panic = 6,
}

/// Opaque handle to a loaded locator.
pub struct SpanlocLocator {
    params: LocatorParams,
}

/// Inclusive turn range.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanlocSpan {
    pub start: usize,
    pub end: usize,
}

/// Raw regression output plus its discretized span.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpanlocPrediction {
    pub start_raw: f64,
    pub end_raw: f64,
    pub span: SpanlocSpan,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpanlocScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpanlocRouge {
    pub r1: SpanlocScore,
    pub r2: SpanlocScore,
    pub rl: SpanlocScore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SpanlocStatus, String);

fn fail<T>(status: SpanlocStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpanlocStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpanlocStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpanlocStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SpanlocStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SpanlocStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn matrix_arg(
    p: *const f64,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Matrix, Failure> {
    if p.is_null() {
        return fail(SpanlocStatus::NullArgument, format!("{name} is null"));
    }
    if rows == 0 || cols == 0 {
        return fail(SpanlocStatus::Shape, format!("{name} is empty"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(SpanlocStatus::Shape, format!("{name} is too large")))?;
    let data = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(SpanlocStatus::NullArgument, format!("{name} is null"));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn spanloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn spanloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spanloc_locator_load(
    path: *const c_char,
    out: *mut *mut SpanlocLocator,
) -> SpanlocStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let (params, _) =
            load_checkpoint(Path::new(path)).or_else(|e| fail(SpanlocStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpanlocLocator { params }));
        Ok(())
    })
}

/// # Safety
/// `locator` must come from [`spanloc_locator_load`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn spanloc_locator_free(locator: *mut SpanlocLocator) {
    if !locator.is_null() {
        drop(Box::from_raw(locator));
    }
}

/// Embedding dimension the locator expects, or 0 for a null handle.
///
/// # Safety
/// `locator` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spanloc_locator_input_dim(locator: *const SpanlocLocator) -> usize {
    locator.as_ref().map_or(0, |l| l.params.in_dim())
}

/// Runs the locator on row-major embeddings: `transcript` holds one averaged
/// vector per turn (`turns` × `dim`), `query` one vector per query token
/// (`query_tokens` × `dim`).
///
/// # Safety
/// The arrays must hold the stated number of doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spanloc_locator_predict(
    locator: *const SpanlocLocator,
    transcript: *const f64,
    turns: usize,
    query: *const f64,
    query_tokens: usize,
    dim: usize,
    out: *mut SpanlocPrediction,
) -> SpanlocStatus {
    guard(|| {
        out_arg(out, "out")?;
        let locator = locator
            .as_ref()
            .ok_or_else(|| Failure(SpanlocStatus::NullArgument, "locator is null".into()))?;
        if dim != locator.params.in_dim() {
            return fail(
                SpanlocStatus::Shape,
                format!("locator expects dim {}, got {dim}", locator.params.in_dim()),
            );
        }
        let t = matrix_arg(transcript, turns, dim, "transcript")?;
        let q = matrix_arg(query, query_tokens, dim, "query")?;
        if !t.is_finite() || !q.is_finite() {
            return fail(SpanlocStatus::InvalidArgument, "embeddings must be finite");
        }
        let pred = locator_forward(&locator.params, &t, &q, turns)
            .or_else(|e| fail(SpanlocStatus::Shape, e.to_string()))?;
        let span = discretize(pred, turns)
            .or_else(|e| fail(SpanlocStatus::InvalidArgument, e.to_string()))?;
        *out = SpanlocPrediction {
            start_raw: pred.start_raw,
            end_raw: pred.end_raw,
            span: SpanlocSpan {
                start: span.start(),
                end: span.end(),
            },
        };
        Ok(())
    })
}

/// Rounds, clamps and orders a raw prediction for a meeting of `length` turns.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spanloc_discretize(
    start_raw: f64,
    end_raw: f64,
    length: usize,
    out: *mut SpanlocSpan,
) -> SpanlocStatus {
    guard(|| {
        out_arg(out, "out")?;
        let span = discretize(SpanPrediction { start_raw, end_raw }, length)
            .or_else(|e| fail(SpanlocStatus::InvalidArgument, e.to_string()))?;
        *out = SpanlocSpan {
            start: span.start(),
            end: span.end(),
        };
        Ok(())
    })
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of `candidate` against `reference`, as
/// fractions in [0, 1].
///
/// # Safety
/// Both strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spanloc_rouge(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut SpanlocRouge,
) -> SpanlocStatus {
    guard(|| {
        out_arg(out, "out")?;
        let c = str_arg(candidate, "candidate")?;
        let r = str_arg(reference, "reference")?;
        let report = rouge::score("candidate", c, "reference", r);
        let conv = |s: rouge::RougeScore| SpanlocScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        *out = SpanlocRouge {
            r1: conv(report.r1),
            r2: conv(report.r2),
            rl: conv(report.rl),
        };
        Ok(())
    })
}

/// Transcript cleaning as used before embedding. Returns a new string in
/// `*out`, to be released with [`spanloc_string_free`].
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spanloc_preprocess(
    text: *const c_char,
    out: *mut *mut c_char,
) -> SpanlocStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cleaned = preprocess_text(str_arg(text, "text")?);
        let s = CString::new(cleaned)
            .or_else(|_| fail(SpanlocStatus::InvalidArgument, "interior NUL"))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn spanloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
