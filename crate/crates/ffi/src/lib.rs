//! C ABI over the `ffcdnn` crate: load a trained model and classify patches,
//! compute accuracy metrics from count matrices, and run the scaled DFT.
//!
//! Every fallible call returns an [`FfcdnnStatus`]; on failure the message is
//! kept per thread and read with [`ffcdnn_last_error`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ffcdnn::eval::{confusion_metrics, ConfusionMatrix};
use ffcdnn::model::io::ModelFile;
use ffcdnn::model::{prepare_one, Network, NUM_CLASSES};
use ffcdnn::numerics::{dft, FftPlan};
use ffcdnn::vi::AgentPatch;
use ffcdnn::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfcdnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque trained network.
pub struct FfcdnnModel {
    net: Box<dyn Network>,
    plan: FftPlan,
    k: usize,
    steps: usize,
}

/// Metrics of a square count matrix. Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FfcdnnMetrics {
    /// Overall accuracy in percent.
    pub oa: f64,
    pub kappa: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> FfcdnnStatus {
    let status = match &e {
        Error::Io(_) => FfcdnnStatus::Io,
        e if e.is_numeric() => FfcdnnStatus::Numeric,
        _ => FfcdnnStatus::InvalidInput,
    };
    set_error(e.to_string());
    status
}

fn null(what: &str) -> FfcdnnStatus {
    set_error(format!("{what} is null"));
    FfcdnnStatus::NullPointer
}

fn guard(f: impl FnOnce() -> FfcdnnStatus) -> FfcdnnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic".into());
        FfcdnnStatus::Panic
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ffcdnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ffcdnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` owns a handle to release with
/// [`ffcdnn_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_model_load(path: *const c_char, out: *mut *mut FfcdnnModel) -> FfcdnnStatus {
    guard(|| {
        if path.is_null() {
            return null("path");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_error("path is not UTF-8".into());
            return FfcdnnStatus::InvalidInput;
        };
        let loaded = std::fs::read(Path::new(path))
            .map_err(Error::from)
            .and_then(|b| ModelFile::from_bytes(&b))
            .and_then(ModelFile::into_network)
            .and_then(|(net, config)| {
                Ok(FfcdnnModel {
                    net,
                    plan: FftPlan::new(config.k1)?,
                    k: config.k,
                    steps: config.k1,
                })
            });
        match loaded {
            Ok(m) => {
                *out = Box::into_raw(Box::new(m));
                FfcdnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a handle from [`ffcdnn_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_model_free(model: *mut FfcdnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of doubles one patch holds: `k * k * steps * 2`, laid out as
/// `[row][col][step][channel]` with channel 0 = LAI proxy, 1 = LCC proxy.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_model_input_len(model: *const FfcdnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.k * m.k * m.steps * 2)
}

/// Classifies one patch. Writes the class index (0 healthy, 1 yellow rust,
/// 2 nitrogen deficiency) to `*label` and, when `scores` is not null, the
/// three per-class scores.
///
/// # Safety
/// `values` must point to `len` doubles, `label` must be writable, and
/// `scores` must be null or point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_model_predict(
    model: *const FfcdnnModel,
    values: *const f64,
    len: usize,
    label: *mut u32,
    scores: *mut f64,
) -> FfcdnnStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return null("model");
        };
        if values.is_null() {
            return null("values");
        }
        if label.is_null() {
            return null("label");
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let result = AgentPatch::new(m.k, m.steps, data)
            .and_then(|p| prepare_one(p, 0, &m.plan))
            .and_then(|s| m.net.predict(&s));
        match result {
            Ok(p) => {
                *label = p.label.index() as u32;
                if !scores.is_null() {
                    ptr::copy_nonoverlapping(p.lengths.as_ptr(), scores, NUM_CLASSES);
                }
                FfcdnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Overall accuracy, kappa, and per-class user's and producer's accuracy of
/// a `classes x classes` count matrix given row-major as
/// `counts[predicted * classes + actual]`.
///
/// # Safety
/// `counts` must point to `classes * classes` values, `out` must be
/// writable, and `ua`/`pa` must each be null or hold `classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_metrics(
    counts: *const u64,
    classes: usize,
    out: *mut FfcdnnMetrics,
    ua: *mut f64,
    pa: *mut f64,
) -> FfcdnnStatus {
    guard(|| {
        if counts.is_null() {
            return null("counts");
        }
        if out.is_null() {
            return null("out");
        }
        let Some(cells) = classes.checked_mul(classes).filter(|&c| c > 0) else {
            set_error("classes must be positive".into());
            return FfcdnnStatus::InvalidInput;
        };
        let flat = std::slice::from_raw_parts(counts, cells);
        let rows: Vec<Vec<u64>> = flat.chunks(classes).map(<[u64]>::to_vec).collect();
        let report = match ConfusionMatrix::from_rows(&rows).and_then(|m| confusion_metrics(&m)) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        *out = FfcdnnMetrics {
            oa: report.oa,
            kappa: report.kappa.unwrap_or(f64::NAN),
        };
        for (dst, src) in [(ua, &report.ua), (pa, &report.pa)] {
            if !dst.is_null() {
                for (i, v) in src.iter().enumerate() {
                    *dst.add(i) = v.unwrap_or(f64::NAN);
                }
            }
        }
        FfcdnnStatus::Ok
    })
}

/// Forward DFT of a real signal, scaled by `1/n`. Writes `n` bins to
/// `re_out` and `im_out`.
///
/// # Safety
/// `signal` must point to `n` doubles; `re_out` and `im_out` to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ffcdnn_dft(
    signal: *const f64,
    n: usize,
    re_out: *mut f64,
    im_out: *mut f64,
) -> FfcdnnStatus {
    guard(|| {
        if signal.is_null() || re_out.is_null() || im_out.is_null() {
            return null("signal or output buffer");
        }
        match dft(std::slice::from_raw_parts(signal, n)) {
            Ok(s) => {
                for (i, b) in s.bins.iter().enumerate() {
                    *re_out.add(i) = b.re;
                    *im_out.add(i) = b.im;
                }
                FfcdnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
