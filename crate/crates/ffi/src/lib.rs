//! C ABI over the times2d toolkit.
//!
//! Every fallible call returns a [`T2dStatus`]. On failure a message is kept
//! per thread and can be read with [`t2d_last_error_message`]. Model handles
//! are opaque and must be released with [`t2d_model_free`]. A handle may move
//! between threads but must not be used by two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use times2d::checkpoint::{load_checkpoint, Checkpoint};
use times2d::metrics::{mase, point_metrics, smape};
use times2d::spectral::{rfft_magnitude, top_k_periods};
use times2d::{Error, Tensor};

/// Result codes shared by every function in this library.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum T2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    InputTooShort = 6,
    MetricUndefined = 7,
    CorruptCheckpoint = 8,
    IncompatibleCheckpoint = 9,
    NumericalFailure = 10,
    Panic = 11,
}

impl From<&Error> for T2dStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) | Error::Fold(_) => T2dStatus::Shape,
            Error::Contract(_) | Error::Parameter(_) | Error::Config(_) => T2dStatus::InvalidArgument,
            Error::NonFinite { .. } | Error::Divergence { .. } => T2dStatus::NumericalFailure,
            Error::InputTooShort(_) => T2dStatus::InputTooShort,
            Error::Parse { .. } => T2dStatus::Parse,
            Error::MetricUndefined(_) => T2dStatus::MetricUndefined,
            Error::CorruptCheckpoint { .. } => T2dStatus::CorruptCheckpoint,
            Error::Incompatible(_) => T2dStatus::IncompatibleCheckpoint,
            Error::Io { .. } => T2dStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // interior NULs would truncate the C string, so drop them
    let clean = CString::new(msg.replace('\0', "")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(clean));
}

/// Runs `f`, recording the message of any error or panic for this thread.
fn guard(f: impl FnOnce() -> Result<(), (T2dStatus, String)>) -> T2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => T2dStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            T2dStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (T2dStatus, String) {
    (T2dStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (T2dStatus, String) {
    (T2dStatus::NullPointer, format!("`{what}` is null"))
}

fn bad_arg(msg: String) -> (T2dStatus, String) {
    (T2dStatus::InvalidArgument, msg)
}

/// Borrows `len` values from `ptr`, rejecting null and empty inputs.
unsafe fn borrow_input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (T2dStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len == 0 {
        return Err(bad_arg(format!("`{what}` is empty")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// A loaded checkpoint ready to forecast.
pub struct T2dModel {
    ckpt: Checkpoint,
}

/// Shape of a model's input and output windows.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct T2dDims {
    pub seq_len: usize,
    pub pred_len: usize,
    pub n_vars: usize,
}

/// Point and scaled errors of one forecast.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct T2dMetrics {
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// Valid only when `mase_defined` is 1.
    pub mase: f64,
    pub mase_defined: i32,
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn t2d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn t2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn t2d_model_load(path: *const c_char, out: *mut *mut T2dModel) -> T2dStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| bad_arg("path is not valid UTF-8".into()))?;
        let ckpt = load_checkpoint(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(T2dModel { ckpt }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`t2d_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn t2d_model_free(model: *mut T2dModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's window shape to `*dims`.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn t2d_model_dims(model: *const T2dModel, dims: *mut T2dDims) -> T2dStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dims = dims.as_mut().ok_or_else(|| null("dims"))?;
        let cfg = model.ckpt.config();
        *dims = T2dDims {
            seq_len: cfg.seq_len,
            pred_len: cfg.pred_len,
            n_vars: cfg.n_vars,
        };
        Ok(())
    })
}

/// Forecasts `pred_len` steps from one window of `seq_len` rows.
///
/// `input` holds `seq_len · n_vars` values, row-major by time step, in data
/// units. `output` receives `pred_len · n_vars` values in the same layout.
/// Data normalization stored in the checkpoint is applied and undone.
///
/// # Safety
/// `input` and `output` must point to at least `input_len` and `output_len`
/// values respectively.
#[no_mangle]
pub unsafe extern "C" fn t2d_model_forecast(
    model: *mut T2dModel,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> T2dStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let x = borrow_input(input, input_len, "input")?;
        if output.is_null() {
            return Err(null("output"));
        }
        let cfg = model.ckpt.config().clone();
        let (s, p, n) = (cfg.seq_len, cfg.pred_len, cfg.n_vars);
        if input_len != s * n {
            return Err((T2dStatus::Shape, format!("input needs {s}x{n} = {} values, got {input_len}", s * n)));
        }
        if output_len != p * n {
            return Err((T2dStatus::Shape, format!("output needs {p}x{n} = {} values, got {output_len}", p * n)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(bad_arg("input contains non-finite values".into()));
        }
        let window = Tensor::new(vec![s, n], x.to_vec()).map_err(lib_err)?;
        let y = match model.ckpt.norm.clone() {
            Some(stats) => {
                let z = stats.normalize(&window).reshaped(&[1, s, n]).map_err(lib_err)?;
                stats.denormalize(&model.ckpt.model.predict(&z).map_err(lib_err)?)
            }
            None => {
                let z = window.reshaped(&[1, s, n]).map_err(lib_err)?;
                model.ckpt.model.predict(&z).map_err(lib_err)?
            }
        };
        std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Finds the `k` dominant periods of a single series.
///
/// Results are ordered by descending amplitude. `freqs`, `periods` and
/// `amplitudes` must each hold `k` entries.
///
/// # Safety
/// `series` must point to `len` values and every output to `k` entries.
#[no_mangle]
pub unsafe extern "C" fn t2d_top_k_periods(
    series: *const f64,
    len: usize,
    k: usize,
    freqs: *mut usize,
    periods: *mut usize,
    amplitudes: *mut f64,
) -> T2dStatus {
    guard(|| {
        let x = borrow_input(series, len, "series")?;
        if freqs.is_null() || periods.is_null() || amplitudes.is_null() {
            return Err(null("output array"));
        }
        let t = Tensor::new(vec![1, len, 1], x.to_vec()).map_err(lib_err)?;
        let spec = rfft_magnitude(&t).map_err(lib_err)?;
        let set = top_k_periods(&spec, k).map_err(lib_err)?;
        let (f, p, a) = (
            std::slice::from_raw_parts_mut(freqs, k),
            std::slice::from_raw_parts_mut(periods, k),
            std::slice::from_raw_parts_mut(amplitudes, k),
        );
        for (i, e) in set.entries().iter().enumerate() {
            f[i] = e.freq;
            p[i] = e.period;
            a[i] = e.amplitude;
        }
        Ok(())
    })
}

/// Scores one forecast. MASE uses seasonal differences of `actual` at lag
/// `season`; when that is undefined `mase_defined` is 0 and the call still
/// succeeds.
///
/// # Safety
/// `pred` and `actual` must point to `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn t2d_metrics(
    pred: *const f64,
    actual: *const f64,
    len: usize,
    season: usize,
    out: *mut T2dMetrics,
) -> T2dStatus {
    guard(|| {
        let p = borrow_input(pred, len, "pred")?;
        let a = borrow_input(actual, len, "actual")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if season == 0 {
            return Err(bad_arg("season must be >= 1".into()));
        }
        let (mse, mae) = point_metrics(p, a).map_err(lib_err)?;
        let smape = smape(p, a).map_err(lib_err)?;
        let (mase, mase_defined) = match mase(p, a, season) {
            Ok(v) => (v, 1),
            Err(Error::MetricUndefined(_)) => (f64::NAN, 0),
            Err(e) => return Err(lib_err(e)),
        };
        *out = T2dMetrics { mse, mae, smape, mase, mase_defined };
        Ok(())
    })
}
