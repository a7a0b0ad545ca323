//! C ABI over `gkf`.
//!
//! Objects live behind opaque handles created by `*_new`/`*_load`/
//! `*_generate` functions and released with the matching `*_free`. Every
//! fallible function returns a [`GkfStatus`]; on failure the message is kept
//! per thread and can be read with [`gkf_last_error`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gkf::experiment::{evaluate, init_model, true_replica, EvalOptions, KfrMode};
use gkf::io::{read_episode, write_episode, Checkpoint};
use gkf::kalman::Belief;
use gkf::{gkf_step, AnyModel, Episode, Error, GeneratorConfig, GkfConfig, GssModel, ModelFamily, TrainConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GkfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GkfModelFamily {
    Replica = 0,
    Stgnn = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GkfKfr {
    On = 0,
    Off = 1,
    Both = 2,
}

/// Training hyperparameters; start from [`gkf_train_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GkfTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub window: usize,
    pub patience: usize,
    pub burn_in: usize,
    pub split: [f64; 3],
    pub seed: u64,
}

impl From<GkfTrainConfig> for TrainConfig {
    fn from(c: GkfTrainConfig) -> Self {
        TrainConfig {
            epochs: c.epochs,
            lr: c.lr,
            batch_size: c.batch_size,
            window: c.window,
            patience: c.patience,
            split: c.split,
            burn_in: c.burn_in,
            seed: c.seed,
        }
    }
}

/// Test-segment summary. Entries a mode did not compute are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GkfReport {
    pub mse_without_kfr: f64,
    pub mse_with_kfr: f64,
    pub rpi_mean: f64,
    pub rpi_std: f64,
    pub n_batches: usize,
}

pub struct GkfEpisode {
    inner: Episode,
}

pub struct GkfModel {
    inner: AnyModel,
}

/// Online filter: a model copy, noise levels and the current belief.
pub struct GkfFilter {
    model: AnyModel,
    cfg: GkfConfig,
    belief: Belief,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> GkfStatus {
    if err.is_numerical() {
        return GkfStatus::Numerical;
    }
    match err {
        Error::Io(_) => GkfStatus::Io,
        Error::InvalidConfig(_) | Error::Dimension { .. } | Error::Unsupported(_) => GkfStatus::InvalidArgument,
        _ => GkfStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> GkfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GkfStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GkfStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            GkfStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GkfStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn as_slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize, what: &'static str) -> FfiResult<()> {
    if len != src.len() {
        return Err(Failure::Arg(format!("{what} buffer has length {len}, expected {}", src.len())));
    }
    if len == 0 {
        return Ok(());
    }
    if dst.is_null() {
        return Err(Failure::Null(what));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gkf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the length of the full
/// message including the NUL, or 0 when there is none.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn gkf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len) - 1;
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Generates an episode from a preset (`"lingss"` or `"nonlingss"`).
/// `n_nodes` and `steps` of 0 keep the preset values.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_generate(
    preset: *const c_char,
    seed: u64,
    n_nodes: usize,
    steps: usize,
    out: *mut *mut GkfEpisode,
) -> GkfStatus {
    guard(|| {
        let mut cfg = GeneratorConfig::preset(as_str(preset, "preset")?, seed)?;
        if n_nodes > 0 {
            cfg.n_nodes = n_nodes;
        }
        if steps > 0 {
            cfg.steps = steps;
        }
        let inner = gkf::sim::generate(&cfg)?;
        put(out, Box::into_raw(Box::new(GkfEpisode { inner })), "out")
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_load(dir: *const c_char, out: *mut *mut GkfEpisode) -> GkfStatus {
    guard(|| {
        let inner = read_episode(&PathBuf::from(as_str(dir, "dir")?))?;
        put(out, Box::into_raw(Box::new(GkfEpisode { inner })), "out")
    })
}

/// # Safety
/// `episode` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_save(episode: *const GkfEpisode, dir: *const c_char) -> GkfStatus {
    guard(|| {
        let ep = as_ref(episode, "episode")?;
        write_episode(&PathBuf::from(as_str(dir, "dir")?), &ep.inner)?;
        Ok(())
    })
}

/// # Safety
/// `episode` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_free(episode: *mut GkfEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

/// Number of steps and nodes.
///
/// # Safety
/// `episode` must come from this library; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_shape(
    episode: *const GkfEpisode,
    steps: *mut usize,
    n_nodes: *mut usize,
) -> GkfStatus {
    guard(|| {
        let ep = as_ref(episode, "episode")?;
        put(steps, ep.inner.len(), "steps")?;
        put(n_nodes, ep.inner.n_nodes(), "n_nodes")
    })
}

/// Copies the input (`x_t`) and output (`y_t`) of step `t`; each buffer must
/// hold exactly `n_nodes` values. Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gkf_episode_step(
    episode: *const GkfEpisode,
    t: usize,
    input: *mut f64,
    output: *mut f64,
    len: usize,
) -> GkfStatus {
    guard(|| {
        let ep = &as_ref(episode, "episode")?.inner;
        if t >= ep.len() {
            return Err(Failure::Arg(format!("step {t} out of range for {} steps", ep.len())));
        }
        if !input.is_null() {
            copy_out(&ep.inputs[t], input, len, "input")?;
        }
        if !output.is_null() {
            copy_out(&ep.outputs[t], output, len, "output")?;
        }
        Ok(())
    })
}

/// The Replica model with the episode's generator parameters.
///
/// # Safety
/// `episode` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_true_replica(episode: *const GkfEpisode, out: *mut *mut GkfModel) -> GkfStatus {
    guard(|| {
        let ep = as_ref(episode, "episode")?;
        let inner: AnyModel = true_replica(&ep.inner).into();
        put(out, Box::into_raw(Box::new(GkfModel { inner })), "out")
    })
}

/// Freshly initialized model of `family` on the episode's topology.
///
/// # Safety
/// `episode` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_init(
    family: GkfModelFamily,
    episode: *const GkfEpisode,
    seed: u64,
    out: *mut *mut GkfModel,
) -> GkfStatus {
    guard(|| {
        let ep = as_ref(episode, "episode")?;
        let family = match family {
            GkfModelFamily::Replica => ModelFamily::Replica,
            GkfModelFamily::Stgnn => ModelFamily::Stgnn,
        };
        let inner = init_model(family, &ep.inner, seed)?;
        put(out, Box::into_raw(Box::new(GkfModel { inner })), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_load(path: *const c_char, out: *mut *mut GkfModel) -> GkfStatus {
    guard(|| {
        let inner = Checkpoint::load(&PathBuf::from(as_str(path, "path")?))?.to_model()?;
        put(out, Box::into_raw(Box::new(GkfModel { inner })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_save(model: *const GkfModel, path: *const c_char) -> GkfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        Checkpoint::from_model(&m.inner, None, None).save(&PathBuf::from(as_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_free(model: *mut GkfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters and length of the flattened state.
///
/// # Safety
/// `model` must come from this library; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_shape(model: *const GkfModel, n_params: *mut usize, state_len: *mut usize) -> GkfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        put(n_params, m.n_params(), "n_params")?;
        put(state_len, m.state_len(), "state_len")
    })
}

/// Copies the flat parameter vector into `buf` (exactly `n_params` long).
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_params(model: *const GkfModel, buf: *mut f64, len: usize) -> GkfStatus {
    guard(|| copy_out(as_ref(model, "model")?.inner.params(), buf, len, "params"))
}

#[no_mangle]
pub extern "C" fn gkf_train_config_default() -> GkfTrainConfig {
    let c = TrainConfig::default();
    GkfTrainConfig {
        epochs: c.epochs,
        lr: c.lr,
        batch_size: c.batch_size,
        window: c.window,
        patience: c.patience,
        burn_in: c.burn_in,
        split: c.split,
        seed: c.seed,
    }
}

/// Trains `model` in place on `episode`; writes the windowed test MSE of the
/// best-validation parameters to `test_mse` when non-null.
///
/// # Safety
/// Handles must come from this library; `test_mse` may be null.
#[no_mangle]
pub unsafe extern "C" fn gkf_model_train(
    model: *mut GkfModel,
    episode: *const GkfEpisode,
    config: GkfTrainConfig,
    test_mse: *mut f64,
) -> GkfStatus {
    guard(|| {
        let m = as_mut(model, "model")?;
        let ep = as_ref(episode, "episode")?;
        let cfg: TrainConfig = config.into();
        cfg.validate()?;
        let report = gkf::train(&mut m.inner, &ep.inner, &cfg)?;
        if !test_mse.is_null() {
            test_mse.write(report.test_mse);
        }
        Ok(())
    })
}

/// Evaluates `model` over the episode's test segment.
///
/// # Safety
/// Handles must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_evaluate(
    model: *const GkfModel,
    episode: *const GkfEpisode,
    kfr: GkfKfr,
    out: *mut GkfReport,
) -> GkfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let ep = as_ref(episode, "episode")?;
        let kfr = match kfr {
            GkfKfr::On => KfrMode::On,
            GkfKfr::Off => KfrMode::Off,
            GkfKfr::Both => KfrMode::Both,
        };
        let opts = EvalOptions {
            kfr,
            ..EvalOptions::default()
        };
        let row = evaluate(&m.inner, &ep.inner, &opts)?.row;
        let mean = |s: Option<gkf::experiment::Stat>| s.map_or(f64::NAN, |s| s.mean);
        put(
            out,
            GkfReport {
                mse_without_kfr: mean(row.mse_without_kfr),
                mse_with_kfr: mean(row.mse_with_kfr),
                rpi_mean: mean(row.rpi),
                rpi_std: row.rpi.map_or(f64::NAN, |s| s.std),
                n_batches: row.n_batches,
            },
            "out",
        )
    })
}

/// Filter over a copy of `model` with `Q = sigma_eta^2 I`,
/// `R = sigma_nu^2 I` and prior `N(0, sigma_eta^2 I)`.
///
/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkf_filter_new(
    model: *const GkfModel,
    sigma_eta: f64,
    sigma_nu: f64,
    out: *mut *mut GkfFilter,
) -> GkfStatus {
    guard(|| {
        let model = as_ref(model, "model")?.inner.clone();
        let cfg = GkfConfig::from_noise_levels(&model, sigma_eta, sigma_nu);
        cfg.validate(&model)?;
        let belief = cfg.prior.clone();
        put(out, Box::into_raw(Box::new(GkfFilter { model, cfg, belief })), "out")
    })
}

/// # Safety
/// `filter` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gkf_filter_free(filter: *mut GkfFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Resets the belief to the prior.
///
/// # Safety
/// `filter` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gkf_filter_reset(filter: *mut GkfFilter) -> GkfStatus {
    guard(|| {
        let f = as_mut(filter, "filter")?;
        f.belief = f.cfg.prior.clone();
        Ok(())
    })
}

/// One filter iteration driven by the previous input `x` (`n_x` values).
/// With `refine` the observation `y` (`n_y` values) updates the belief;
/// without it the a priori state is carried forward and `y` is ignored.
/// The a priori prediction is written to `y_prior` (`n_y` values) when it is
/// non-null.
///
/// # Safety
/// Buffers must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gkf_filter_step(
    filter: *mut GkfFilter,
    x: *const f64,
    n_x: usize,
    y: *const f64,
    n_y: usize,
    refine: bool,
    y_prior: *mut f64,
) -> GkfStatus {
    guard(|| {
        let f = as_mut(filter, "filter")?;
        let x = as_slice(x, n_x, "x")?;
        let prior_y = if refine {
            let y = as_slice(y, n_y, "y")?;
            let (next, step) = gkf_step(&f.model, &f.cfg, &f.belief, x, y, false)?;
            f.belief = next;
            step.y_prior
        } else {
            let (_, s_prior, y_prior) = gkf::gkf::gkf_predict(&f.model, &f.belief.mean, x)?;
            f.belief.mean = s_prior;
            y_prior
        };
        if !y_prior.is_null() {
            copy_out(&prior_y, y_prior, n_y, "y_prior")?;
        }
        Ok(())
    })
}

/// Copies the current state mean (`state_len` values) and, when `cov` is
/// non-null, the row-major covariance (`state_len^2` values).
///
/// # Safety
/// Buffers must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gkf_filter_state(
    filter: *const GkfFilter,
    mean: *mut f64,
    len: usize,
    cov: *mut f64,
) -> GkfStatus {
    guard(|| {
        let f = as_ref(filter, "filter")?;
        copy_out(&f.belief.mean, mean, len, "mean")?;
        if !cov.is_null() {
            let n = f.belief.mean.len();
            copy_out(f.belief.cov.as_slice(), cov, n * n, "cov")?;
        }
        Ok(())
    })
}
