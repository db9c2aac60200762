//! Online threshold learning.
//!
//! In cycle `k` the sampler observes the delay `D_k` and waits
//! `W_k = (γ_k + U_k/V − D_k)⁺`. It then moves the threshold estimate along
//! the observed residual `Q_k − γ_k·L_k` with a diminishing step, clipped to a
//! window known to contain the optimum, and updates the frequency debt
//! `U_{k+1} = (U_k + 1/f_max − L_k)⁺`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Debt weight used when none is configured.
pub const DEFAULT_V: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Clipping window for the threshold estimate.
    pub gamma_lb: f64,
    pub gamma_ub: f64,
    /// Lower bound on the mean delay; sets the step-size scale.
    pub d_lb: f64,
    /// Debt weight `V`.
    pub v: f64,
    /// `1/f_max`; zero disables the frequency constraint.
    pub inv_f_max: f64,
    /// Waits above this bound are counted, never clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_cap: Option<f64>,
}

impl SamplerConfig {
    pub fn new(gamma_lb: f64, gamma_ub: f64, d_lb: f64, v: f64, inv_f_max: f64) -> Result<Self> {
        let config = SamplerConfig {
            gamma_lb,
            gamma_ub,
            d_lb,
            v,
            inv_f_max,
            wait_cap: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_lb.is_finite()
            && self.gamma_ub.is_finite()
            && self.gamma_lb <= self.gamma_ub)
        {
            return Err(Error::invalid(format!(
                "threshold window must satisfy gamma_lb <= gamma_ub, got [{}, {}]",
                self.gamma_lb, self.gamma_ub
            )));
        }
        if !(self.d_lb > 0.0 && self.d_lb.is_finite()) {
            return Err(Error::invalid(format!(
                "D_lb must be > 0, got {}",
                self.d_lb
            )));
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::invalid(format!("V must be > 0, got {}", self.v)));
        }
        if !(self.inv_f_max >= 0.0 && self.inv_f_max.is_finite()) {
            return Err(Error::invalid(format!(
                "1/f_max must be >= 0, got {}",
                self.inv_f_max
            )));
        }
        if let Some(cap) = self.wait_cap {
            if !(cap >= 0.0) {
                return Err(Error::invalid(format!("wait cap must be >= 0, got {cap}")));
            }
        }
        Ok(())
    }
}

/// Learner state at the start of cycle `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub k: u64,
    pub gamma: f64,
    /// Frequency debt `U_k`, in time units.
    pub debt: f64,
}

/// `k = 1`, `γ_1 ~ Uniform[γ_lb, γ_ub]`, `U_1 = 0`.
pub fn init_state<R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> SamplerState {
    let width = config.gamma_ub - config.gamma_lb;
    let gamma = if width > 0.0 {
        (config.gamma_lb + width * rng.random::<f64>()).min(config.gamma_ub)
    } else {
        config.gamma_lb
    };
    SamplerState {
        k: 1,
        gamma,
        debt: 0.0,
    }
}

/// `η_1 = 1/(2·D_lb)`, `η_k = 1/((k + 2)·D_lb)` for `k >= 2`.
pub fn step_size(k: u64, d_lb: f64) -> f64 {
    if k <= 1 {
        1.0 / (2.0 * d_lb)
    } else {
        1.0 / ((k as f64 + 2.0) * d_lb)
    }
}

/// `W_k = (γ_k + U_k/V − D_k)⁺`. Never clamped to the wait cap.
pub fn decide_wait(state: &SamplerState, config: &SamplerConfig, delay: f64) -> f64 {
    (state.gamma + state.debt / config.v - delay).max(0.0)
}

/// Robbins-Monro threshold step and debt recursion for one finished cycle.
pub fn update(state: &SamplerState, config: &SamplerConfig, delay: f64, wait: f64) -> SamplerState {
    update_with_step(state, config, delay, wait, step_size(state.k, config.d_lb))
}

/// [`update`] with an explicit step size.
pub fn update_with_step(
    state: &SamplerState,
    config: &SamplerConfig,
    delay: f64,
    wait: f64,
    eta: f64,
) -> SamplerState {
    let length = delay + wait;
    let reward = 0.5 * length * length;
    let gamma = (state.gamma + eta * (reward - state.gamma * length))
        .clamp(config.gamma_lb, config.gamma_ub);
    let debt = (state.debt + config.inv_f_max - length).max(0.0);
    SamplerState {
        k: state.k + 1,
        gamma,
        debt,
    }
}

/// Config and state bundled, with a counter of wait-cap violations.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSampler {
    config: SamplerConfig,
    state: SamplerState,
    cap_exceeded: u64,
}

impl OnlineSampler {
    pub fn new<R: Rng + ?Sized>(config: SamplerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let state = init_state(&config, rng);
        Ok(OnlineSampler {
            config,
            state,
            cap_exceeded: 0,
        })
    }

    pub fn with_state(config: SamplerConfig, state: SamplerState) -> Result<Self> {
        config.validate()?;
        Ok(OnlineSampler {
            config,
            state,
            cap_exceeded: 0,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn decide_wait(&self, delay: f64) -> f64 {
        decide_wait(&self.state, &self.config, delay)
    }

    pub fn observe(&mut self, delay: f64, wait: f64) {
        if matches!(self.config.wait_cap, Some(cap) if wait > cap) {
            self.cap_exceeded += 1;
        }
        self.state = update(&self.state, &self.config, delay, wait);
    }

    /// Number of cycles whose wait exceeded the configured cap.
    pub fn wait_cap_exceedances(&self) -> u64 {
        self.cap_exceeded
    }
}
