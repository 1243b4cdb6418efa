//! C ABI over the plant models, the cuckoo-search optimizer and the
//! validation statistics.
//!
//! Every function returns a [`GovidStatus`]. On failure the message is kept
//! per thread and can be read with [`govid_last_error`]. Models are opaque
//! handles created by [`govid_model_new`] and released by
//! [`govid_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use govid::estimate::{error_index_percent, mse};
use govid::optim::{cs_run, CsConfig, Objective, RunSettings, SearchSpace};
use govid::params::ParamVector;
use govid::plants::{build_model, default_table, input_channels, ModelKind, OperatingPoint, PlantModel};
use govid::signals::TimeSeries;
use govid::validate::{whiteness_test, ThresholdMode, WhitenessConfig};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GovidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownParameter = 3,
    ModelError = 4,
    SimulationError = 5,
    OptimizerError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GovidModelKind {
    Ggov1 = 0,
    St6b = 1,
}

impl From<GovidModelKind> for ModelKind {
    fn from(k: GovidModelKind) -> Self {
        match k {
            GovidModelKind::Ggov1 => ModelKind::Ggov1,
            GovidModelKind::St6b => ModelKind::St6b,
        }
    }
}

/// Plant model with its parameter table, rebuilt when a parameter changes.
pub struct GovidModel {
    kind: ModelKind,
    dt: f64,
    table: ParamVector,
    model: PlantModel,
    tap_names: Vec<CString>,
}

/// Whiteness-test outcome.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GovidWhiteness {
    pub statistic: f64,
    /// Threshold the verdict used.
    pub threshold: f64,
    pub beta_squared: f64,
    pub chi2_threshold: f64,
    /// 1 when the residual passes.
    pub pass: i32,
}

/// Cuckoo-search settings. [`govid_cs_default_config`] fills the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GovidCsConfig {
    pub population: usize,
    pub max_generations: usize,
    pub stop_threshold: f64,
    pub seed: u64,
    pub p_a: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub step_scale: f64,
}

/// Outcome of a cuckoo-search run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GovidCsResult {
    pub best_fitness: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub reached_threshold: i32,
}

/// Objective callback: position of length `dim`, and the caller's pointer.
/// A NaN return aborts the run.
pub type GovidObjectiveFn = Option<extern "C" fn(x: *const f64, dim: usize, user_data: *mut c_void) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (GovidStatus, String)>) -> GovidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GovidStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GovidStatus::Panic
        }
    }
}

fn null(what: &str) -> (GovidStatus, String) {
    (GovidStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (GovidStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn name_arg<'a>(p: *const c_char) -> Result<&'a str, (GovidStatus, String)> {
    if p.is_null() {
        return Err(null("name"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GovidStatus::InvalidArgument, "name is not UTF-8".into()))
}

/// Last error message of this thread, or null after a successful call.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn govid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn build(kind: ModelKind, table: &ParamVector, dt: f64) -> Result<PlantModel, (GovidStatus, String)> {
    build_model(kind, table, dt, OperatingPoint::default()).map_err(|e| (GovidStatus::ModelError, e.to_string()))
}

/// Creates a model with the reference parameter table at the default
/// operating point.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn govid_model_new(kind: GovidModelKind, dt: f64, out: *mut *mut GovidModel) -> GovidStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = ModelKind::from(kind);
        let table = default_table(kind);
        let model = build(kind, &table, dt)?;
        let names = govid::plants::tap_channels(kind);
        let tap_names = names
            .iter()
            .map(|n| CString::new(*n).expect("channel names have no NUL"))
            .collect();
        *out = Box::into_raw(Box::new(GovidModel {
            kind,
            dt,
            table,
            model,
            tap_names,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`govid_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn govid_model_free(model: *mut GovidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn govid_model_set_param(model: *mut GovidModel, name: *const c_char, value: f64) -> GovidStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let name = name_arg(name)?;
        let mut table = m.table.clone();
        table
            .set_value(name, value)
            .map_err(|e| (GovidStatus::UnknownParameter, e.to_string()))?;
        m.model = build(m.kind, &table, m.dt)?;
        m.table = table;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `name` a NUL-terminated string; `out`
/// valid for writing.
#[no_mangle]
pub unsafe extern "C" fn govid_model_get_param(
    model: *const GovidModel,
    name: *const c_char,
    out: *mut f64,
) -> GovidStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let name = name_arg(name)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m
            .table
            .value(name)
            .map_err(|e| (GovidStatus::UnknownParameter, e.to_string()))?;
        Ok(())
    })
}

/// Number of input columns expected by [`govid_model_simulate`].
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn govid_model_input_count(model: *const GovidModel) -> usize {
    model.as_ref().map_or(0, |m| input_channels(m.kind).len())
}

/// Number of output columns written by [`govid_model_simulate`].
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn govid_model_tap_count(model: *const GovidModel) -> usize {
    model.as_ref().map_or(0, |m| m.tap_names.len())
}

/// Name of output column `index`, or null when out of range. Owned by the
/// handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn govid_model_tap_name(model: *const GovidModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.tap_names.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Simulates `n` samples. `inputs` is row-major `n × input_count` in the
/// plant's input order; `outputs` receives row-major `n × tap_count`.
///
/// # Safety
/// The buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn govid_model_simulate(
    model: *const GovidModel,
    inputs: *const f64,
    n: usize,
    outputs: *mut f64,
) -> GovidStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let names = input_channels(m.kind);
        let width = names.len();
        if n < 2 {
            return Err((GovidStatus::InvalidArgument, format!("need at least 2 samples, got {n}")));
        }
        let data = slice(inputs, n * width, "inputs")?;
        if outputs.is_null() {
            return Err(null("outputs"));
        }
        let sim_err = |e: String| (GovidStatus::SimulationError, e);
        let mut ts = TimeSeries::new(m.dt).map_err(|e| sim_err(e.to_string()))?;
        for (j, name) in names.iter().enumerate() {
            let col = (0..n).map(|k| data[k * width + j]).collect();
            ts.push(*name, col).map_err(|e| sim_err(e.to_string()))?;
        }
        let out = m.model.simulate(&ts).map_err(|e| sim_err(e.to_string()))?;
        let taps = m.tap_names.len();
        let dst = std::slice::from_raw_parts_mut(outputs, n * taps);
        for (j, name) in m.tap_names.iter().enumerate() {
            let col = out.require(name.to_str().expect("ascii")).map_err(|e| sim_err(e.to_string()))?;
            for (k, v) in col.iter().enumerate() {
                dst[k * taps + j] = *v;
            }
        }
        Ok(())
    })
}

/// Mean squared error of two equal-length signals.
///
/// # Safety
/// `y` and `yhat` must hold `n` values; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn govid_mse(y: *const f64, yhat: *const f64, n: usize, out: *mut f64) -> GovidStatus {
    guard(|| {
        let (a, b) = (slice(y, n, "y")?, slice(yhat, n, "yhat")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = mse(a, b).map_err(|e| (GovidStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Error index in percent (`100 · MSE`).
///
/// # Safety
/// As [`govid_mse`].
#[no_mangle]
pub unsafe extern "C" fn govid_error_index_percent(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    out: *mut f64,
) -> GovidStatus {
    guard(|| {
        let (a, b) = (slice(y, n, "y")?, slice(yhat, n, "yhat")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = error_index_percent(a, b).map_err(|e| (GovidStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Portmanteau whiteness test over `max_lag` lags at level `alpha`. With
/// `chi2_threshold` non-zero the verdict uses the `χ²(max_lag)` quantile,
/// otherwise `β²`.
///
/// # Safety
/// `e` must hold `n` values; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn govid_whiteness(
    e: *const f64,
    n: usize,
    max_lag: usize,
    alpha: f64,
    chi2_threshold: i32,
    out: *mut GovidWhiteness,
) -> GovidStatus {
    guard(|| {
        let e = slice(e, n, "e")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = WhitenessConfig {
            max_lag,
            alpha,
            threshold_mode: if chi2_threshold != 0 {
                ThresholdMode::Chi2
            } else {
                ThresholdMode::BetaSquared
            },
            ..WhitenessConfig::default()
        };
        let w = whiteness_test(e, &cfg).map_err(|e| (GovidStatus::InvalidArgument, e.to_string()))?;
        *out = GovidWhiteness {
            statistic: w.statistic,
            threshold: w.threshold,
            beta_squared: w.beta_squared,
            chi2_threshold: w.chi2_threshold,
            pass: i32::from(w.pass),
        };
        Ok(())
    })
}

/// Default cuckoo-search settings.
#[no_mangle]
pub extern "C" fn govid_cs_default_config() -> GovidCsConfig {
    let c = CsConfig::default();
    GovidCsConfig {
        population: c.run.population,
        max_generations: c.run.max_generations,
        stop_threshold: c.run.stop_threshold,
        seed: c.run.seed,
        p_a: c.p_a,
        alpha: c.alpha,
        lambda: c.lambda,
        step_scale: c.step_scale,
    }
}

struct CallbackObjective {
    f: extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    user_data: *mut c_void,
}

// Evaluations run sequentially, so the callback and its data are only
// touched from the calling thread.
unsafe impl Sync for CallbackObjective {}

impl Objective for CallbackObjective {
    fn evaluate(&self, x: &[f64]) -> Result<f64, String> {
        let v = (self.f)(x.as_ptr(), x.len(), self.user_data);
        if v.is_nan() {
            Err("objective returned NaN".into())
        } else {
            Ok(v)
        }
    }
}

/// Minimizes a C objective over the box `[lower, upper]` with cuckoo
/// search. The callback runs on the calling thread, one evaluation at a
/// time. `best` receives `dim` values.
///
/// # Safety
/// `lower`, `upper` and `best` must hold `dim` values; `config` and
/// `result` must be valid; `objective` must be callable with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn govid_cs_minimize(
    dim: usize,
    lower: *const f64,
    upper: *const f64,
    config: *const GovidCsConfig,
    objective: GovidObjectiveFn,
    user_data: *mut c_void,
    best: *mut f64,
    result: *mut GovidCsResult,
) -> GovidStatus {
    guard(|| {
        let lo = slice(lower, dim, "lower")?.to_vec();
        let hi = slice(upper, dim, "upper")?.to_vec();
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let f = objective.ok_or_else(|| null("objective"))?;
        if best.is_null() || result.is_null() {
            return Err(null("best or result"));
        }
        let opt_err = |e: govid::optim::OptimError| (GovidStatus::OptimizerError, e.to_string());
        let names = (0..dim).map(|i| format!("x{i}")).collect();
        let space = SearchSpace::new(names, lo, hi).map_err(opt_err)?;
        let cfg = CsConfig {
            run: RunSettings {
                population: c.population,
                max_generations: c.max_generations,
                stop_threshold: c.stop_threshold,
                seed: c.seed,
                parallel: false,
            },
            p_a: c.p_a,
            alpha: c.alpha,
            lambda: c.lambda,
            step_scale: c.step_scale,
            ..CsConfig::default()
        };
        let obj = CallbackObjective { f, user_data };
        let r = cs_run(&obj, &space, &cfg, &[]).map_err(opt_err)?;
        std::slice::from_raw_parts_mut(best, dim).copy_from_slice(&r.best);
        *result = GovidCsResult {
            best_fitness: r.best_fitness,
            generations: r.generations(),
            evaluations: r.evaluations,
            reached_threshold: i32::from(r.reached_threshold),
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_pointers_are_reported() {
        let status = unsafe { govid_mse(ptr::null(), ptr::null(), 3, ptr::null_mut()) };
        assert_eq!(status, GovidStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(govid_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "y is null");
    }

    #[test]
    fn success_clears_the_error() {
        let y = [1.0, 2.0];
        let mut out = 0.0;
        unsafe {
            govid_mse(ptr::null(), y.as_ptr(), 2, &mut out);
            assert!(!govid_last_error().is_null());
            assert_eq!(govid_mse(y.as_ptr(), y.as_ptr(), 2, &mut out), GovidStatus::Ok);
        }
        assert!(govid_last_error().is_null());
        assert_eq!(out, 0.0);
    }
}
