//! C ABI over `frrc-core`.
//!
//! Models are opaque handles created by `frrc_model_load` or
//! `frrc_model_from_bytes` and released with `frrc_model_free`. Every
//! fallible call returns an [`FrrcStatus`]; on failure a message is kept in
//! thread-local storage and read with `frrc_last_error`. Arrays are
//! row-major `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use frrc_core::data::FeatureSequence;
use frrc_core::density::{make_ground_truth, AnnotationSet};
use frrc_core::model::{Checkpoint, ModelError};
use frrc_core::tensor::Tensor;
use frrc_core::train::{predict, EvalReport, TrainError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrrcStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Bad sizes, shapes or values passed by the caller.
    InvalidArgument = 2,
    /// Unreadable or malformed file or buffer.
    Data = 3,
    /// The computation produced non-finite values.
    Numeric = 4,
    /// An output buffer is shorter than required.
    BufferTooSmall = 5,
    /// An internal panic was caught at the boundary.
    Internal = 6,
}

/// Opaque trained model.
pub struct FrrcModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FrrcStatus, msg: impl Into<String>) -> FrrcStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`FrrcStatus::Internal`].
fn guard(f: impl FnOnce() -> FrrcStatus) -> FrrcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FrrcStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

fn model_status(e: &ModelError) -> FrrcStatus {
    match e {
        ModelError::Config(_) | ModelError::Tensor(_) => FrrcStatus::InvalidArgument,
        _ => FrrcStatus::Data,
    }
}

/// Slice from a caller buffer; `len == 0` accepts a null pointer.
///
/// # Safety
/// `p` must point to `len` readable values when `len > 0`.
unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn frrc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn frrc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn frrc_model_load(path: *const c_char, out: *mut *mut FrrcModel) -> FrrcStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(FrrcStatus::NullPointer, "path and out must be non-null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(FrrcStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match Checkpoint::load(path) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(FrrcModel { checkpoint }));
                FrrcStatus::Ok
            }
            Err(e) => fail(model_status(&e), e.to_string()),
        }
    })
}

/// Decodes checkpoint bytes into a new handle written to `*out`.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frrc_model_from_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut FrrcModel,
) -> FrrcStatus {
    guard(|| {
        if out.is_null() {
            return fail(FrrcStatus::NullPointer, "out must be non-null");
        }
        let Some(bytes) = slice(bytes, len) else {
            return fail(FrrcStatus::NullPointer, "bytes is null");
        };
        match Checkpoint::from_bytes(bytes) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(FrrcModel { checkpoint }));
                FrrcStatus::Ok
            }
            Err(e) => fail(model_status(&e), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn frrc_model_free(model: *mut FrrcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature width the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn frrc_model_input_width(model: *const FrrcModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.d0)
}

/// Predicts the density map of `frames × width` features. Writes `frames`
/// values to `density_out` (capacity `density_len`) and the count to
/// `*count_out`; either output may be null to skip it.
///
/// # Safety
/// `model` must be a live handle, `features` must hold `frames * width`
/// values and `density_out` must have room for `density_len` values.
#[no_mangle]
pub unsafe extern "C" fn frrc_model_predict(
    model: *const FrrcModel,
    features: *const f64,
    frames: usize,
    width: usize,
    density_out: *mut f64,
    density_len: usize,
    count_out: *mut f64,
) -> FrrcStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(FrrcStatus::NullPointer, "model is null");
        };
        if frames == 0 || width == 0 {
            return fail(FrrcStatus::InvalidArgument, "frames and width must be positive");
        }
        let Some(n) = frames.checked_mul(width) else {
            return fail(FrrcStatus::InvalidArgument, "frames * width overflows");
        };
        let Some(data) = slice(features, n) else {
            return fail(FrrcStatus::NullPointer, "features is null");
        };
        if !density_out.is_null() && density_len < frames {
            return fail(
                FrrcStatus::BufferTooSmall,
                format!("density buffer holds {density_len} values, {frames} needed"),
            );
        }
        let seq = Tensor::new(vec![frames, width], data.to_vec())
            .map_err(ModelError::from)
            .and_then(|t| {
                FeatureSequence::new("ffi", t, 1).map_err(|e| ModelError::Config(e.to_string()))
            });
        let seq = match seq {
            Ok(s) => s,
            Err(e) => return fail(FrrcStatus::InvalidArgument, e.to_string()),
        };
        let (density, count) = match predict(&seq, &model.checkpoint) {
            Ok(r) => r,
            Err(TrainError::Config(m)) => return fail(FrrcStatus::InvalidArgument, m),
            Err(e) => return fail(FrrcStatus::Data, e.to_string()),
        };
        if !count.is_finite() || density.values.iter().any(|v| !v.is_finite()) {
            return fail(FrrcStatus::Numeric, "prediction is not finite");
        }
        if !density_out.is_null() {
            std::slice::from_raw_parts_mut(density_out, frames).copy_from_slice(&density.values);
        }
        if !count_out.is_null() {
            *count_out = count;
        }
        FrrcStatus::Ok
    })
}

/// Ground-truth density of `n` repetition intervals `[starts[i], ends[i]]`
/// on a video of `frames` frames, written to `out` (capacity `out_len`).
///
/// # Safety
/// `starts` and `ends` must hold `n` values; `out` must have room for
/// `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn frrc_ground_truth(
    starts: *const usize,
    ends: *const usize,
    n: usize,
    frames: usize,
    out: *mut f64,
    out_len: usize,
) -> FrrcStatus {
    guard(|| {
        let (Some(s), Some(e)) = (slice(starts, n), slice(ends, n)) else {
            return fail(FrrcStatus::NullPointer, "starts and ends must be non-null");
        };
        if out.is_null() {
            return fail(FrrcStatus::NullPointer, "out is null");
        }
        if out_len < frames {
            return fail(
                FrrcStatus::BufferTooSmall,
                format!("output holds {out_len} values, {frames} needed"),
            );
        }
        let ann = AnnotationSet::new(s.iter().zip(e).map(|(&a, &b)| [a, b]).collect());
        match make_ground_truth(&ann, frames) {
            Ok(d) => {
                std::slice::from_raw_parts_mut(out, frames).copy_from_slice(&d.values);
                FrrcStatus::Ok
            }
            Err(e) => fail(FrrcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// MAE and OBO of `n` (true, predicted) count pairs. Videos with a true
/// count of zero are left out of MAE but kept in OBO.
///
/// # Safety
/// `true_counts` and `predicted` must hold `n` values; outputs must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn frrc_evaluate_counts(
    true_counts: *const f64,
    predicted: *const f64,
    n: usize,
    mae_out: *mut f64,
    obo_out: *mut f64,
) -> FrrcStatus {
    guard(|| {
        let (Some(t), Some(p)) = (slice(true_counts, n), slice(predicted, n)) else {
            return fail(FrrcStatus::NullPointer, "count arrays must be non-null");
        };
        if mae_out.is_null() || obo_out.is_null() {
            return fail(FrrcStatus::NullPointer, "outputs must be non-null");
        }
        if n == 0 {
            return fail(FrrcStatus::InvalidArgument, "no videos");
        }
        if t.iter().chain(p).any(|v| !v.is_finite()) || t.iter().any(|&v| v < 0.0) {
            return fail(FrrcStatus::InvalidArgument, "counts must be finite and true counts non-negative");
        }
        let r = EvalReport::from_counts(
            t.iter()
                .zip(p)
                .enumerate()
                .map(|(i, (&a, &b))| (i.to_string(), a, b)),
        );
        *mae_out = r.mae;
        *obo_out = r.obo;
        FrrcStatus::Ok
    })
}
