//! C ABI over `aoi_sampler`.
//!
//! Every fallible function returns an [`AoiStatus`] and writes its result
//! through an out pointer. On failure the message is kept per thread and read
//! with [`aoi_last_error_message`]. Panics never cross the boundary; they are
//! reported as `AOI_STATUS_PANIC`.
//!
//! Handles (`AoiModel`, `AoiSampler`) are opaque and owned by the caller, who
//! releases them with the matching `_free` function. Strings returned by the
//! library are released with [`aoi_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aoi_sampler::delay::DelayDistribution;
use aoi_sampler::sampler::{self, OnlineSampler};
use aoi_sampler::simulator::{self, EnsembleOptions, RunConfig};
use aoi_sampler::{cycle_area, oracle, output, DelayModel, Error, SamplerConfig, SamplerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    NotBracketed = 4,
    Infeasible = 5,
    Runtime = 6,
    Panic = 7,
}

/// A delay distribution.
pub struct AoiModel(DelayModel);

/// An online threshold learner.
pub struct AoiSampler(OnlineSampler);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiMoments {
    pub mean: f64,
    pub second_moment: f64,
    /// `INFINITY` for unbounded support.
    pub upper_support: f64,
}

/// `E[max{beta, D}]` and `E[max{beta, D}^2 / 2]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiThresholdIntegrals {
    pub e_max: f64,
    pub e_half_max_sq: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiOracleSolution {
    pub gamma_star: f64,
    pub nu_star: f64,
    /// Waiting threshold `gamma_star + nu_star`.
    pub beta: f64,
    pub mean_cycle_length: f64,
    pub aoi_star: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiGammaBounds {
    pub gamma_lb: f64,
    pub gamma_ub: f64,
}

/// Learner parameters. `inv_f_max = 0` disables the frequency constraint and
/// `wait_cap = INFINITY` disables the wait-cap counter.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AoiSamplerConfig {
    pub gamma_lb: f64,
    pub gamma_ub: f64,
    pub d_lb: f64,
    pub v: f64,
    pub inv_f_max: f64,
    pub wait_cap: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiSamplerState {
    pub k: u64,
    pub gamma: f64,
    pub debt: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AoiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidParameter(_) | Error::Json(_) | Error::Csv(_) => {
                AoiStatus::InvalidParameter
            }
            Error::NotBracketed { .. } => AoiStatus::NotBracketed,
            Error::Infeasible { .. } => AoiStatus::Infeasible,
            _ => AoiStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(AoiStatus::InvalidParameter, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> AoiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AoiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            AoiStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AoiStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(AoiStatus::InvalidParameter, msg)
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure(AoiStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn finite_nonneg(x: f64, what: &str) -> Outcome {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite and >= 0, got {x}")))
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(AoiStatus::Runtime, e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aoi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn aoi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a model from JSON (`{"kind": "uniform", "a": 0, "b": 1}`) or the
/// short form (`uniform:0,1`, `lognormal:1,1.3`).
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aoi_model_parse(
    spec: *const c_char,
    out: *mut *mut AoiModel,
) -> AoiStatus {
    guard(|| {
        let model: DelayModel = text(spec, "spec")?.parse()?;
        write(out, Box::into_raw(Box::new(AoiModel(model))))
    })
}

/// # Safety
/// `model` must come from [`aoi_model_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aoi_model_free(model: *mut AoiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_model_moments(
    model: *const AoiModel,
    out: *mut AoiMoments,
) -> AoiStatus {
    guard(|| {
        let m = deref(model, "model")?.0.moments();
        write(
            out,
            AoiMoments {
                mean: m.mean,
                second_moment: m.second_moment,
                upper_support: m.upper_support,
            },
        )
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_model_cdf(model: *const AoiModel, x: f64, out: *mut f64) -> AoiStatus {
    guard(|| {
        let model = deref(model, "model")?;
        if x.is_nan() {
            return Err(invalid("x is NaN".into()));
        }
        write(out, model.0.cdf(x))
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_threshold_integrals(
    model: *const AoiModel,
    beta: f64,
    out: *mut AoiThresholdIntegrals,
) -> AoiStatus {
    guard(|| {
        let model = deref(model, "model")?;
        finite_nonneg(beta, "beta")?;
        let t = model.0.threshold_integrals(beta);
        write(
            out,
            AoiThresholdIntegrals {
                e_max: t.e_max,
                e_half_max_sq: t.e_half_max_sq,
            },
        )
    })
}

/// Known-distribution optimum. `f_max = INFINITY` removes the frequency
/// constraint.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_oracle_solve(
    model: *const AoiModel,
    f_max: f64,
    tol: f64,
    out: *mut AoiOracleSolution,
) -> AoiStatus {
    guard(|| {
        let model = deref(model, "model")?;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid(format!("tol must be finite and > 0, got {tol}")));
        }
        let s = oracle::solve_constrained(&model.0, f_max, tol)?;
        write(
            out,
            AoiOracleSolution {
                gamma_star: s.gamma_star,
                nu_star: s.nu_star,
                beta: s.beta,
                mean_cycle_length: s.mean_cycle_length,
                aoi_star: s.aoi_star,
            },
        )
    })
}

/// Average age of the stationary policy that waits `(beta - D)+`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_stationary_aoi(
    model: *const AoiModel,
    beta: f64,
    out: *mut f64,
) -> AoiStatus {
    guard(|| {
        let model = deref(model, "model")?;
        finite_nonneg(beta, "beta")?;
        write(out, oracle::stationary_policy_aoi(&model.0, beta))
    })
}

/// Window known to contain the optimal threshold, from moment bounds.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_gamma_bounds(
    d_lb: f64,
    d_ub: f64,
    m_lb: f64,
    m_ub: f64,
    f_max: f64,
    out: *mut AoiGammaBounds,
) -> AoiStatus {
    guard(|| {
        let b = oracle::gamma_bounds(d_lb, d_ub, m_lb, m_ub, f_max)?;
        write(
            out,
            AoiGammaBounds {
                gamma_lb: b.gamma_lb,
                gamma_ub: b.gamma_ub,
            },
        )
    })
}

/// Step size of cycle `k` for delay lower bound `d_lb > 0`.
#[no_mangle]
pub extern "C" fn aoi_step_size(k: u64, d_lb: f64) -> f64 {
    sampler::step_size(k, d_lb)
}

/// Age area of one cycle given the previous cycle length.
#[no_mangle]
pub extern "C" fn aoi_cycle_area(prev_length: f64, delay: f64, wait: f64) -> f64 {
    cycle_area(prev_length, delay, wait)
}

fn sampler_config(c: &AoiSamplerConfig) -> Result<SamplerConfig, Failure> {
    let mut config = SamplerConfig::new(c.gamma_lb, c.gamma_ub, c.d_lb, c.v, c.inv_f_max)?;
    if c.wait_cap.is_nan() || c.wait_cap < 0.0 {
        return Err(invalid(format!(
            "wait_cap must be >= 0 or INFINITY, got {}",
            c.wait_cap
        )));
    }
    config.wait_cap = c.wait_cap.is_finite().then_some(c.wait_cap);
    config.validate()?;
    Ok(config)
}

/// New learner with the initial threshold drawn uniformly from the window
/// using `seed`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_new(
    config: *const AoiSamplerConfig,
    seed: u64,
    out: *mut *mut AoiSampler,
) -> AoiStatus {
    guard(|| {
        let config = sampler_config(deref(config, "config")?)?;
        let s = OnlineSampler::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        write(out, Box::into_raw(Box::new(AoiSampler(s))))
    })
}

/// New learner resumed from an explicit state.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_with_state(
    config: *const AoiSamplerConfig,
    state: *const AoiSamplerState,
    out: *mut *mut AoiSampler,
) -> AoiStatus {
    guard(|| {
        let config = sampler_config(deref(config, "config")?)?;
        let st = deref(state, "state")?;
        if st.k == 0 {
            return Err(invalid("state.k must be >= 1".into()));
        }
        if !(st.gamma >= config.gamma_lb && st.gamma <= config.gamma_ub) {
            return Err(invalid(format!(
                "state.gamma {} outside the window",
                st.gamma
            )));
        }
        finite_nonneg(st.debt, "state.debt")?;
        let state = SamplerState {
            k: st.k,
            gamma: st.gamma,
            debt: st.debt,
        };
        write(
            out,
            Box::into_raw(Box::new(AoiSampler(OnlineSampler::with_state(
                config, state,
            )?))),
        )
    })
}

/// # Safety
/// `sampler` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_free(sampler: *mut AoiSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Waiting time for the update whose delay was just observed. Does not change
/// the learner.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_decide_wait(
    sampler: *const AoiSampler,
    delay: f64,
    out: *mut f64,
) -> AoiStatus {
    guard(|| {
        let s = deref(sampler, "sampler")?;
        finite_nonneg(delay, "delay")?;
        write(out, s.0.decide_wait(delay))
    })
}

/// Feeds back a finished cycle.
///
/// # Safety
/// `sampler` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_observe(
    sampler: *mut AoiSampler,
    delay: f64,
    wait: f64,
) -> AoiStatus {
    guard(|| {
        let s = deref_mut(sampler, "sampler")?;
        finite_nonneg(delay, "delay")?;
        finite_nonneg(wait, "wait")?;
        s.0.observe(delay, wait);
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_state(
    sampler: *const AoiSampler,
    out: *mut AoiSamplerState,
) -> AoiStatus {
    guard(|| {
        let st = *deref(sampler, "sampler")?.0.state();
        write(
            out,
            AoiSamplerState {
                k: st.k,
                gamma: st.gamma,
                debt: st.debt,
            },
        )
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aoi_sampler_wait_cap_exceedances(
    sampler: *const AoiSampler,
    out: *mut u64,
) -> AoiStatus {
    guard(|| write(out, deref(sampler, "sampler")?.0.wait_cap_exceedances()))
}

/// Runs one simulation described by a JSON run config and returns a JSON
/// summary. Free the result with [`aoi_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aoi_simulate_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> AoiStatus {
    guard(|| {
        let config: RunConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        let run = simulator::run(&config)?;
        let t = &run.trajectory;
        let value = serde_json::json!({
            "metadata": output::metadata("simulate", &config)?,
            "result": {
                "cycles": t.len(),
                "aoi_ratio": t.aoi_ratio()?,
                "mean_interval": t.mean_interval()?,
                "horizon": t.horizon(),
                "final_state": run.final_state,
                "threshold": run.threshold,
                "wait_cap_exceedances": run.wait_cap_exceedances,
            },
        });
        write(out, into_c_string(value.to_string())?)
    })
}

/// Runs `runs` seeded replications and returns the ensemble summary as JSON.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aoi_ensemble_json(
    config_json: *const c_char,
    runs: usize,
    out: *mut *mut c_char,
) -> AoiStatus {
    guard(|| {
        let config: RunConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        let summary = simulator::ensemble(&config, &EnsembleOptions::new(runs))?;
        let value = output::ensemble_json("ensemble", &config, &summary)?;
        write(out, into_c_string(value.to_string())?)
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aoi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
