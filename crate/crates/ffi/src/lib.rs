//! C ABI over the toolkit: opaque handles, integer status codes, and a
//! thread-local error message. Every entry point catches panics, so a
//! defect report from the library surfaces as [`MtStatus::Internal`]
//! instead of unwinding across the boundary.
//!
//! Handles returned by the constructors must be released with the
//! matching `_free` function exactly once. Strings are NUL-terminated
//! UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mtnet::error::Error;
use mtnet::eval::{avg_loglik, ScoreMode, Scorer};
use mtnet::extract::read_shard;
use mtnet::mtl::Model;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The output buffer was too small.
    BufferTooSmall = 3,
    /// An index argument was out of range.
    IndexOutOfRange = 4,
    Io = 5,
    Parse = 6,
    Validation = 7,
    Config = 8,
    BadMagic = 9,
    UnsupportedVersion = 10,
    Truncated = 11,
    WidthMismatch = 12,
    DigestMismatch = 13,
    FeatureMismatch = 14,
    MissingAlignment = 15,
    EmptyShard = 16,
    /// A library invariant was violated (defect report).
    Internal = 17,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MtStatus {
    match err.category() {
        "io" => MtStatus::Io,
        "line-count" | "parse" => MtStatus::Parse,
        "validation" => MtStatus::Validation,
        "config" => MtStatus::Config,
        "bad-magic" => MtStatus::BadMagic,
        "unsupported-version" => MtStatus::UnsupportedVersion,
        "truncated" => MtStatus::Truncated,
        "width-mismatch" => MtStatus::WidthMismatch,
        "digest-mismatch" => MtStatus::DigestMismatch,
        "feature-mismatch" => MtStatus::FeatureMismatch,
        "missing-alignment" => MtStatus::MissingAlignment,
        "empty-shard" => MtStatus::EmptyShard,
        _ => MtStatus::Internal,
    }
}

fn fail(err: &Error) -> MtStatus {
    set_error(&format!("{}: {err}", err.category()));
    status_of(err)
}

/// Run a closure, converting panics into [`MtStatus::Internal`].
fn guarded(f: impl FnOnce() -> MtStatus) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal: {message}"));
            MtStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string valid for the call.
unsafe fn arg_str<'a>(ptr: *const c_char) -> Result<&'a str, MtStatus> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(MtStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        MtStatus::InvalidUtf8
    })
}

fn copy_to_buffer(value: &str, buf: *mut c_char, cap: usize) -> MtStatus {
    let bytes = value.as_bytes();
    if buf.is_null() {
        set_error("null output buffer");
        return MtStatus::NullArgument;
    }
    if cap < bytes.len() + 1 {
        set_error(&format!(
            "buffer of {cap} bytes cannot hold {} bytes plus terminator",
            bytes.len()
        ));
        return MtStatus::BufferTooSmall;
    }
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
    }
    MtStatus::Ok
}

/// Opaque trained model handle.
pub struct MtModel {
    inner: Model,
}

/// Opaque scoring session over one or more models.
pub struct MtScorer {
    models: Vec<Model>,
}

/// The message describing the most recent error on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model file. On success `*out` owns the handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mt_model_load(path: *const c_char, out: *mut *mut MtModel) -> MtStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return MtStatus::NullArgument;
        }
        let path = match unsafe { arg_str(path) } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        match Model::load(&path) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(MtModel { inner: model })) };
                MtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must come from [`mt_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mt_model_free(model: *mut MtModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of tasks (output heads) in the model, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mt_model_task_count(model: *const MtModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.group.tasks.len()
}

/// Copy the name of task `index` into `buf` (NUL-terminated).
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mt_model_task_name(
    model: *const MtModel,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> MtStatus {
    guarded(|| {
        if model.is_null() {
            set_error("null model handle");
            return MtStatus::NullArgument;
        }
        let model = unsafe { &*model };
        match model.inner.group.tasks.get(index) {
            Some(task) => copy_to_buffer(&task.name(), buf, cap),
            None => {
                set_error(&format!("task index {index} out of range"));
                MtStatus::IndexOutOfRange
            }
        }
    })
}

/// Average log-likelihood of a shard file under the named task head.
///
/// # Safety
/// `model` must be a live handle; `shard_path` and `task` NUL-terminated
/// strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mt_model_avg_loglik(
    model: *const MtModel,
    shard_path: *const c_char,
    task: *const c_char,
    out: *mut f64,
) -> MtStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return MtStatus::NullArgument;
        }
        let model = unsafe { &*model };
        let shard_path = match unsafe { arg_str(shard_path) } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        let task = match unsafe { arg_str(task) } {
            Ok(t) => t.to_string(),
            Err(status) => return status,
        };
        let shard = match read_shard(&shard_path) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let wiring = model.inner.wiring();
        match avg_loglik(&model.inner, &wiring, &task, &shard) {
            Ok((value, _)) => {
                unsafe { *out = value };
                MtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Open a scoring session over `count` model files. All models must share
/// vocabularies, and no task may appear twice.
///
/// # Safety
/// `paths` must point to `count` NUL-terminated strings; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mt_scorer_new(
    paths: *const *const c_char,
    count: usize,
    out: *mut *mut MtScorer,
) -> MtStatus {
    guarded(|| {
        if paths.is_null() || out.is_null() {
            set_error("null argument");
            return MtStatus::NullArgument;
        }
        let mut models = Vec::with_capacity(count);
        for i in 0..count {
            let path = match unsafe { arg_str(*paths.add(i)) } {
                Ok(p) => PathBuf::from(p),
                Err(status) => return status,
            };
            match Model::load(&path) {
                Ok(m) => models.push(m),
                Err(e) => return fail(&e),
            }
        }
        // validate the combination up front
        let refs: Vec<&Model> = models.iter().collect();
        if let Err(e) = Scorer::new(&refs) {
            return fail(&e);
        }
        unsafe { *out = Box::into_raw(Box::new(MtScorer { models })) };
        MtStatus::Ok
    })
}

/// Release a scoring session. NULL is a no-op.
///
/// # Safety
/// `scorer` must come from [`mt_scorer_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mt_scorer_free(scorer: *mut MtScorer) {
    if !scorer.is_null() {
        drop(unsafe { Box::from_raw(scorer) });
    }
}

/// Number of values written by [`mt_scorer_score`]: one per feature head
/// plus one trailing slot for the source-enumerating combined score.
///
/// # Safety
/// `scorer` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mt_scorer_value_count(scorer: *const MtScorer) -> usize {
    if scorer.is_null() {
        return 0;
    }
    let scorer = unsafe { &*scorer };
    let heads: usize = scorer.models.iter().map(|m| m.group.tasks.len()).sum();
    heads + 1
}

/// Copy the name of value `index` into `buf`. The last value is always
/// `srcen`, the combined score.
///
/// # Safety
/// `scorer` must be a live handle; `buf` must hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mt_scorer_value_name(
    scorer: *const MtScorer,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> MtStatus {
    guarded(|| {
        if scorer.is_null() {
            set_error("null scorer handle");
            return MtStatus::NullArgument;
        }
        let scorer = unsafe { &*scorer };
        let mut names: Vec<String> = scorer
            .models
            .iter()
            .flat_map(|m| m.group.tasks.iter().map(|t| t.name()))
            .collect();
        names.push("srcen".to_string());
        match names.get(index) {
            Some(name) => copy_to_buffer(name, buf, cap),
            None => {
                set_error(&format!("value index {index} out of range"));
                MtStatus::IndexOutOfRange
            }
        }
    })
}

/// Score one hypothesis. `src_line` and `hyp_line` are whitespace
/// tokenized; `align_line` holds 0-based `j-i` pairs. Writes
/// [`mt_scorer_value_count`] doubles into `out_values` (the trailing
/// combined slot is NaN when the session lacks the heads to compute it).
/// `self_normalized` nonzero scores raw logits instead of the softmax.
///
/// # Safety
/// `scorer` must be a live handle, the strings NUL-terminated, and
/// `out_values` must hold `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_scorer_score(
    scorer: *const MtScorer,
    src_line: *const c_char,
    hyp_line: *const c_char,
    align_line: *const c_char,
    self_normalized: i32,
    out_values: *mut f64,
    cap: usize,
) -> MtStatus {
    guarded(|| {
        if scorer.is_null() || out_values.is_null() {
            set_error("null argument");
            return MtStatus::NullArgument;
        }
        let scorer_ref = unsafe { &*scorer };
        let needed = unsafe { mt_scorer_value_count(scorer) };
        if cap < needed {
            set_error(&format!("output capacity {cap} below required {needed}"));
            return MtStatus::BufferTooSmall;
        }
        let src = match unsafe { arg_str(src_line) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let hyp = match unsafe { arg_str(hyp_line) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let align = match unsafe { arg_str(align_line) } {
            Ok(s) => s,
            Err(status) => return status,
        };

        let mut links = Vec::new();
        for token in align.split_whitespace() {
            let pair = token.split_once('-').and_then(|(j, i)| {
                Some((j.parse::<u32>().ok()?, i.parse::<u32>().ok()?))
            });
            match pair {
                Some((j, i)) => links.push((j + 1, i + 1)),
                None => {
                    set_error(&format!("bad alignment token {token:?}"));
                    return MtStatus::Parse;
                }
            }
        }

        let refs: Vec<&Model> = scorer_ref.models.iter().collect();
        let session = match Scorer::new(&refs) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let src_tokens: Vec<&str> = src.split_whitespace().collect();
        let hyp_tokens: Vec<&str> = hyp.split_whitespace().collect();
        let mode = if self_normalized != 0 {
            ScoreMode::SelfNormalized
        } else {
            ScoreMode::Exact
        };
        let score = match session.score_hypothesis(&src_tokens, &hyp_tokens, &links, None, mode) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        for (i, feature) in score.features.iter().enumerate() {
            unsafe { *out_values.add(i) = feature.total };
        }
        let combined = score.combined.map_or(f64::NAN, |c| c.total);
        unsafe { *out_values.add(score.features.len()) = combined };
        MtStatus::Ok
    })
}
