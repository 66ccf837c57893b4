//! C ABI over the dense co-attention network.
//!
//! Every fallible function returns a [`DcnStatus`]; on failure the message is
//! available from [`dcn_last_error`] on the same thread. Models are opaque
//! handles created by `dcn_model_new`/`dcn_model_load` and released with
//! `dcn_model_free`. Strings are NUL-terminated UTF-8.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dcn::checkpoint;
use dcn::config::{DcnConfig, TrainConfig};
use dcn::model::Dcn;
use dcn::predict::count_params;
use dcn::train::data::{Dataset, SyntheticSample};
use dcn::train::{evaluate, lr_at, train_loop};
use dcn::DcnError;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    Input = 5,
    Numerical = 6,
    Format = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct DcnModel {
    inner: Dcn,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior NUL"));
}

fn status_of(e: &DcnError) -> DcnStatus {
    match e {
        DcnError::Config { .. } | DcnError::Json(_) => DcnStatus::Config,
        DcnError::Shape { .. } => DcnStatus::Shape,
        DcnError::Input(_) => DcnStatus::Input,
        DcnError::Numerical(_) => DcnStatus::Numerical,
        DcnError::Format(_) => DcnStatus::Format,
        DcnError::Io(_) => DcnStatus::Io,
    }
}

struct Fail(DcnStatus, String);

impl From<DcnError> for Fail {
    fn from(e: DcnError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DcnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DcnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DcnStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DcnStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_config(p: *const c_char) -> Result<DcnConfig, Fail> {
    if p.is_null() {
        return Ok(DcnConfig::default());
    }
    Ok(DcnConfig::from_json(read_str(p, "config_json")?)?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fresh model from a JSON config; null `config_json` means defaults.
///
/// # Safety
/// `config_json` must be null or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_new(config_json: *const c_char, out: *mut *mut DcnModel) -> DcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = read_config(config_json)?;
        let model = Dcn::new(&cfg)?;
        *out = Box::into_raw(Box::new(DcnModel { inner: model }));
        Ok(())
    })
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_load(dir: *const c_char, out: *mut *mut DcnModel) -> DcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = PathBuf::from(read_str(dir, "dir")?);
        let model = checkpoint::load(&dir)?;
        *out = Box::into_raw(Box::new(DcnModel { inner: model }));
        Ok(())
    })
}

/// Writes a checkpoint directory.
///
/// # Safety
/// `model` must come from this library; `dir` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_save(model: *const DcnModel, dir: *const c_char) -> DcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = PathBuf::from(read_str(dir, "dir")?);
        checkpoint::save(&model.inner, dir)?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_free(model: *mut DcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable scalars held by the model.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_num_params(model: *const DcnModel, out: *mut usize) -> DcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.num_params();
        Ok(())
    })
}

/// Number of answer classes, i.e. the length of a score vector.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_num_answers(model: *const DcnModel, out: *mut usize) -> DcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.config().n_attributes;
        Ok(())
    })
}

/// Analytic parameter count for a JSON config (null means defaults).
///
/// # Safety
/// `config_json` must be null or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_count_params(config_json: *const c_char, out: *mut usize) -> DcnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = count_params(&read_config(config_json)?).total;
        Ok(())
    })
}

/// `lr * 0.5^(epoch / decay_epochs)`; NaN for invalid arguments.
#[no_mangle]
pub extern "C" fn dcn_lr_at(epoch: f64, lr: f64, decay_epochs: f64) -> f64 {
    if !(epoch >= 0.0) || !(decay_epochs >= 1.0) || !lr.is_finite() {
        return f64::NAN;
    }
    let cfg = TrainConfig {
        lr,
        decay_epochs,
        ..TrainConfig::default()
    };
    lr_at(epoch, &cfg)
}

/// Answer probabilities for one synthetic sample given as JSON (the format
/// written by `dcn gen-data`). Writes `*n_out` scores into `scores`, which
/// must hold at least `capacity` doubles; reports `BufferTooSmall` with the
/// required length in `*n_out` otherwise.
///
/// # Safety
/// `model` must come from this library, `sample_json` a valid string,
/// `scores` writable for `capacity` doubles and `n_out` writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_predict(
    model: *const DcnModel,
    sample_json: *const c_char,
    scores: *mut f64,
    capacity: usize,
    n_out: *mut usize,
) -> DcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let n_out = n_out.as_mut().ok_or_else(|| null("n_out"))?;
        let sample: SyntheticSample =
            serde_json::from_str(read_str(sample_json, "sample_json")?).map_err(DcnError::from)?;
        let cfg = model.inner.config();
        let data = Dataset::generate(&DcnConfig {
            data: dcn::config::DataConfig {
                n_train: 1,
                n_test: 1,
                ..cfg.data.clone()
            },
            ..cfg.clone()
        })?;
        let out = model.inner.predict(&data.example(&sample)?)?;
        *n_out = out.len();
        if capacity < out.len() {
            return Err(Fail(
                DcnStatus::BufferTooSmall,
                format!("need {} scores, buffer holds {capacity}", out.len()),
            ));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        ptr::copy_nonoverlapping(out.as_ptr(), scores, out.len());
        Ok(())
    })
}

/// Exact-match accuracy on the test split generated from the model's config.
///
/// # Safety
/// `model` must come from this library; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_model_evaluate(model: *const DcnModel, accuracy: *mut f64) -> DcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let accuracy = accuracy.as_mut().ok_or_else(|| null("accuracy"))?;
        let data = Dataset::generate(model.inner.config())?;
        *accuracy = evaluate(&model.inner, &data, &data.test)?.accuracy;
        Ok(())
    })
}

/// Trains a fresh model from `config_json` (null means defaults) and
/// returns it in `out`. With a non-null `out_dir` the metric log and best
/// checkpoint are written there.
///
/// # Safety
/// `config_json` and `out_dir` must be null or valid strings; `out` and
/// `best_accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcn_train(
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut DcnModel,
    best_accuracy: *mut f64,
) -> DcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let best_accuracy = best_accuracy.as_mut().ok_or_else(|| null("best_accuracy"))?;
        let cfg = read_config(config_json)?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(read_str(out_dir, "out_dir")?))
        };
        let data = Dataset::generate(&cfg)?;
        let mut model = Dcn::new(&cfg)?;
        let outcome = train_loop(&mut model, &data, dir.as_deref())?;
        *best_accuracy = outcome.best_accuracy;
        *out = Box::into_raw(Box::new(DcnModel { inner: model }));
        Ok(())
    })
}
