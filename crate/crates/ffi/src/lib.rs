//! C ABI for the cfol library.
//!
//! Every function returns a [`CfolStatus`]; on failure the message is kept in a
//! thread-local slot readable with [`cfol_last_error`]. Objects are opaque
//! handles created by `*_new` / producers and released with the matching `*_free`.
//! Panics never cross the boundary; they surface as `CFOL_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cfol::adversary::{theoretical_eta, AdversaryState};
use cfol::cli::MetricsFile;
use cfol::cvar::{alpha_from_gamma, cvar_best_response, CVaRLevel};
use cfol::data::LabeledDataset;
use cfol::harness::{theorem_bound, train, RunConfig, TrainResult};
use cfol::learner::{forward_logits, predict, write_checkpoint, ModelParams};
use cfol::rng::SeededRng;
use cfol::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    OutOfRange = 4,
    BufferTooSmall = 5,
    Io = 6,
    Parse = 7,
    Runtime = 8,
    Panic = 9,
}

/// Exp3 class adversary with its own sampling stream.
pub struct CfolAdversary {
    state: AdversaryState,
    rng: SeededRng,
}

pub struct CfolDataset {
    inner: LabeledDataset,
}

pub struct CfolModel {
    inner: ModelParams,
}

pub struct CfolTrainResult {
    inner: TrainResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(CfolStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::IndexOutOfRange { .. } => CfolStatus::OutOfRange,
            Error::InvalidConfig(_) | Error::ConfigDisabled => CfolStatus::InvalidConfig,
            Error::Io(_) => CfolStatus::Io,
            Error::Parse { .. } | Error::BadMagic { .. } => CfolStatus::Parse,
            Error::Diverged(_) => CfolStatus::Runtime,
            _ => CfolStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn null(what: &str) -> Failure {
    Failure(CfolStatus::NullPointer, format!("{what} is null"))
}

fn run(f: impl FnOnce() -> FfiResult) -> CfolStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        Err(Failure(CfolStatus::Panic, "panic inside cfol".into()))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            CfolStatus::Ok
        }
        Err(Failure(status, message)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = message);
            status
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn input_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> FfiResult {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure(
            CfolStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Copies `text` plus a NUL terminator; `needed` always receives `text.len() + 1`.
unsafe fn copy_string(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> FfiResult {
    if !needed.is_null() {
        needed.write(text.len() + 1);
    }
    if buf.is_null() || len < text.len() + 1 {
        return Err(Failure(
            CfolStatus::BufferTooSmall,
            format!("{} bytes needed", text.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
    buf.add(text.len()).write(0);
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(CfolStatus::InvalidArgument, format!("{what}: {e}")))
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn cfol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after a success).
#[no_mangle]
pub unsafe extern "C" fn cfol_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> CfolStatus {
    let message = LAST_ERROR.with(|e| e.borrow().clone());
    let outcome = copy_string(&message, buf, len, needed);
    match outcome {
        Ok(()) => CfolStatus::Ok,
        Err(Failure(status, _)) => status,
    }
}

#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_new(
    arms: usize,
    eta: f64,
    gamma: f64,
    seed: u64,
    out: *mut *mut CfolAdversary,
) -> CfolStatus {
    run(|| {
        let state = AdversaryState::new(arms, eta, gamma)?;
        let handle = Box::new(CfolAdversary {
            state,
            rng: SeededRng::new(seed),
        });
        write_out(out, Box::into_raw(handle), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_free(adversary: *mut CfolAdversary) {
    if !adversary.is_null() {
        drop(Box::from_raw(adversary));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_num_arms(adversary: *const CfolAdversary, out: *mut usize) -> CfolStatus {
    run(|| {
        let adv = as_ref(adversary, "adversary")?;
        write_out(out, adv.state.num_arms(), "out")
    })
}

/// Draws an arm from the mixed distribution `p`.
#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_sample(adversary: *mut CfolAdversary, out_arm: *mut usize) -> CfolStatus {
    run(|| {
        let adv = as_mut(adversary, "adversary")?;
        let arm = adv.state.sample(&mut adv.rng);
        write_out(out_arm, arm, "out_arm")
    })
}

/// Feeds the loss in `[0, 1]` observed at `arm` (drawn from the current `p`).
#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_update(adversary: *mut CfolAdversary, arm: usize, loss: f64) -> CfolStatus {
    run(|| {
        let adv = as_mut(adversary, "adversary")?;
        let estimate = adv.state.build_estimator(arm, loss)?;
        adv.state.exp3_update(&estimate)?;
        Ok(())
    })
}

/// Copies the sampling distribution `p` into `out[0..num_arms]`.
#[no_mangle]
pub unsafe extern "C" fn cfol_adversary_probabilities(
    adversary: *const CfolAdversary,
    out: *mut f64,
    len: usize,
) -> CfolStatus {
    run(|| {
        let adv = as_ref(adversary, "adversary")?;
        copy_out(adv.state.p().weights(), out, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn cfol_theoretical_eta(k: usize, mistake_bound: f64, out: *mut f64) -> CfolStatus {
    run(|| write_out(out, theoretical_eta(k, mistake_bound)?, "out"))
}

#[no_mangle]
pub unsafe extern "C" fn cfol_alpha_from_gamma(gamma: f64, m: usize, out: *mut f64) -> CfolStatus {
    run(|| write_out(out, alpha_from_gamma(gamma, m)?.alpha(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn cfol_theorem_bound(
    mistake_bound: f64,
    k: usize,
    steps: u64,
    ensemble: usize,
    delta: f64,
    out: *mut f64,
) -> CfolStatus {
    run(|| write_out(out, theorem_bound(mistake_bound, k, steps, ensemble, delta)?, "out"))
}

/// CVaR at level `alpha` of `losses[0..len]`; the maximizing weights go to
/// `out_weights[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn cfol_cvar(
    losses: *const f64,
    len: usize,
    alpha: f64,
    out_weights: *mut f64,
    out_value: *mut f64,
) -> CfolStatus {
    run(|| {
        let losses = input_slice(losses, len, "losses")?;
        let solution = cvar_best_response(losses, CVaRLevel::new(alpha)?)?;
        copy_out(solution.weights.weights(), out_weights, len)?;
        write_out(out_value, solution.value, "out_value")
    })
}

/// Dataset from a row-major `n x d` feature matrix and labels in `[0, k)`.
#[no_mangle]
pub unsafe extern "C" fn cfol_dataset_new(
    features: *const f64,
    labels: *const u32,
    n: usize,
    d: usize,
    k: usize,
    out: *mut *mut CfolDataset,
) -> CfolStatus {
    run(|| {
        let total = n.checked_mul(d).ok_or_else(|| {
            Failure(CfolStatus::InvalidArgument, "n * d overflows".into())
        })?;
        let features = input_slice(features, total, "features")?.to_vec();
        let labels = input_slice(labels, n, "labels")?
            .iter()
            .map(|&y| y as usize)
            .collect();
        let inner = LabeledDataset::new(features, labels, k, d)?;
        write_out(out, Box::into_raw(Box::new(CfolDataset { inner })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn cfol_dataset_free(dataset: *mut CfolDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains with a JSON run config (same schema as the `run` section of an
/// experiment file).
#[no_mangle]
pub unsafe extern "C" fn cfol_train(
    config_json: *const c_char,
    dataset: *const CfolDataset,
    out: *mut *mut CfolTrainResult,
) -> CfolStatus {
    run(|| {
        let config = RunConfig::from_json(c_str(config_json, "config_json")?)?;
        let data = as_ref(dataset, "dataset")?;
        let inner = train(&config, &data.inner)?;
        write_out(out, Box::into_raw(Box::new(CfolTrainResult { inner })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn cfol_train_result_free(result: *mut CfolTrainResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// The `metrics.json` document of a run, NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cfol_train_result_metrics_json(
    result: *const CfolTrainResult,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> CfolStatus {
    run(|| {
        let result = as_ref(result, "result")?;
        let text = MetricsFile::from_result(&result.inner).to_json()?;
        copy_string(&text, buf, len, needed)
    })
}

/// Copies out the final (`early_stopped == 0`) or early-stopped model.
#[no_mangle]
pub unsafe extern "C" fn cfol_train_result_model(
    result: *const CfolTrainResult,
    early_stopped: i32,
    out: *mut *mut CfolModel,
) -> CfolStatus {
    run(|| {
        let result = as_ref(result, "result")?;
        let model = if early_stopped != 0 {
            result.inner.early_stopped_model.clone()
        } else {
            result.inner.final_model.clone()
        };
        write_out(out, Box::into_raw(Box::new(CfolModel { inner: model })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn cfol_model_free(model: *mut CfolModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicted class of `x[0..d]`.
#[no_mangle]
pub unsafe extern "C" fn cfol_model_predict(
    model: *const CfolModel,
    x: *const f64,
    d: usize,
    out_class: *mut usize,
) -> CfolStatus {
    run(|| {
        let model = as_ref(model, "model")?;
        let x = input_slice(x, d, "x")?;
        let logits = forward_logits(&model.inner, x)?;
        write_out(out_class, predict(&logits), "out_class")
    })
}

/// Writes the model in the binary checkpoint format.
#[no_mangle]
pub unsafe extern "C" fn cfol_model_save(model: *const CfolModel, path: *const c_char) -> CfolStatus {
    run(|| {
        let model = as_ref(model, "model")?;
        let path = c_str(path, "path")?;
        let file = File::create(path).map_err(|e| Failure(CfolStatus::Io, format!("{path}: {e}")))?;
        let mut out = BufWriter::new(file);
        write_checkpoint(&model.inner, &mut out)?;
        out.flush()
            .map_err(|e| Failure(CfolStatus::Io, format!("{path}: {e}")))
    })
}
