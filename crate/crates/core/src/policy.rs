//! Waiting policies: the online learner and the baselines it is compared with.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delay::{DelayDistribution, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::oracle::{self, DEFAULT_TOL};
use crate::sampler::{OnlineSampler, SamplerConfig, SamplerState, DEFAULT_V};

fn default_v() -> f64 {
    DEFAULT_V
}

fn default_refit_every() -> u64 {
    10
}

fn default_min_samples() -> usize {
    10
}

/// Serializable policy description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Robbins-Monro threshold learner with frequency debt.
    Online {
        #[serde(default = "default_v")]
        v: f64,
    },
    ZeroWait,
    /// Fixed wait; defaults to `(1/f_max − D̄)⁺`.
    ConstantWait {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wait: Option<f64>,
    },
    /// Threshold `(β − d)⁺`; `β` defaults to the known-distribution optimum.
    Oracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    /// Certainty-equivalent threshold re-solved on the observed delays.
    Plugin {
        #[serde(default = "default_refit_every")]
        refit_every: u64,
        #[serde(default = "default_min_samples")]
        min_samples: usize,
    },
}

impl PolicySpec {
    pub fn online() -> Self {
        PolicySpec::Online { v: DEFAULT_V }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Online { .. } => "online",
            PolicySpec::ZeroWait => "zero_wait",
            PolicySpec::ConstantWait { .. } => "constant_wait",
            PolicySpec::Oracle { .. } => "oracle",
            PolicySpec::Plugin { .. } => "plugin",
        }
    }

    /// Short label that also names the parameters, e.g. `online(V=10)`.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Online { v } => format!("online(V={v})"),
            PolicySpec::ConstantWait { wait: Some(w) } => format!("constant_wait({w})"),
            PolicySpec::Oracle { beta: Some(b) } => format!("oracle({b})"),
            PolicySpec::Plugin {
                refit_every,
                min_samples,
            } => {
                format!("plugin({refit_every},{min_samples})")
            }
            other => other.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicySpec::Online { v } if !(v > 0.0 && v.is_finite()) => {
                Err(Error::invalid(format!("V must be > 0, got {v}")))
            }
            PolicySpec::ConstantWait { wait: Some(w) } if !(w >= 0.0 && w.is_finite()) => Err(
                Error::invalid(format!("constant wait must be >= 0, got {w}")),
            ),
            PolicySpec::Oracle { beta: Some(b) } if !(b >= 0.0 && b.is_finite()) => {
                Err(Error::invalid(format!("threshold must be >= 0, got {b}")))
            }
            PolicySpec::Plugin { refit_every: 0, .. } => {
                Err(Error::invalid("plugin refit_every must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the policy for one run.
    ///
    /// `window` supplies the online learner's clipping window and step scale;
    /// `model` resolves defaults that need the true distribution (constant wait
    /// and oracle threshold). `rng` draws the learner's initial threshold.
    pub fn build<D, R>(
        &self,
        model: &D,
        inv_f_max: f64,
        window: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Policy>
    where
        D: DelayDistribution + ?Sized,
        R: Rng + ?Sized,
    {
        self.validate()?;
        Ok(match *self {
            PolicySpec::Online { v } => {
                let config = SamplerConfig {
                    v,
                    inv_f_max,
                    ..*window
                };
                Policy::Online(OnlineSampler::new(config, rng)?)
            }
            PolicySpec::ZeroWait => Policy::ZeroWait,
            PolicySpec::ConstantWait { wait } => Policy::ConstantWait {
                wait: wait.unwrap_or_else(|| (inv_f_max - model.mean()).max(0.0)),
            },
            PolicySpec::Oracle { beta } => {
                let beta = match beta {
                    Some(b) => b,
                    None => oracle::solve_constrained(model, rate(inv_f_max), DEFAULT_TOL)?.beta,
                };
                Policy::OracleThreshold { beta }
            }
            PolicySpec::Plugin {
                refit_every,
                min_samples,
            } => Policy::PlugIn(PlugIn::new(refit_every, min_samples.max(1), inv_f_max)),
        })
    }
}

fn rate(inv_f_max: f64) -> f64 {
    if inv_f_max > 0.0 {
        1.0 / inv_f_max
    } else {
        f64::INFINITY
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Accepts JSON or `name[:params]`, e.g. `online:10`, `oracle:1`,
/// `constant_wait:0.5`, `plugin:10,10`, `zero_wait`.
impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let spec: PolicySpec = serde_json::from_str(s)?;
            spec.validate()?;
            return Ok(spec);
        }
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let nums = |p: &str| -> Result<Vec<f64>> {
            p.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad number {x:?} in policy {s:?}")))
                })
                .collect()
        };
        let params = params.map(nums).transpose()?.unwrap_or_default();
        let arity = |max: usize| -> Result<()> {
            if params.len() > max {
                return Err(Error::invalid(format!(
                    "too many parameters in policy {s:?}"
                )));
            }
            Ok(())
        };
        let spec = match name.replace('-', "_").as_str() {
            "online" => {
                arity(1)?;
                PolicySpec::Online {
                    v: params.first().copied().unwrap_or(DEFAULT_V),
                }
            }
            "zero_wait" => {
                arity(0)?;
                PolicySpec::ZeroWait
            }
            "constant_wait" => {
                arity(1)?;
                PolicySpec::ConstantWait {
                    wait: params.first().copied(),
                }
            }
            "oracle" => {
                arity(1)?;
                PolicySpec::Oracle {
                    beta: params.first().copied(),
                }
            }
            "plugin" => {
                arity(2)?;
                let as_count = |x: f64| -> Result<u64> {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as u64)
                    } else {
                        Err(Error::invalid(format!(
                            "plugin parameters must be integers, got {x}"
                        )))
                    }
                };
                PolicySpec::Plugin {
                    refit_every: params
                        .first()
                        .map(|&x| as_count(x))
                        .transpose()?
                        .unwrap_or(10),
                    min_samples: params
                        .get(1)
                        .map(|&x| as_count(x))
                        .transpose()?
                        .unwrap_or(10) as usize,
                }
            }
            other => return Err(Error::invalid(format!("unknown policy {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A policy instance owned by one run.
#[derive(Debug, Clone)]
pub enum Policy {
    Online(OnlineSampler),
    ZeroWait,
    ConstantWait { wait: f64 },
    OracleThreshold { beta: f64 },
    PlugIn(PlugIn),
}

impl Policy {
    /// Wait after observing `delay`. Depends only on past cycles and `delay`.
    pub fn decide_wait(&self, delay: f64) -> f64 {
        match self {
            Policy::Online(s) => s.decide_wait(delay),
            Policy::ZeroWait => 0.0,
            Policy::ConstantWait { wait } => *wait,
            Policy::OracleThreshold { beta } => (beta - delay).max(0.0),
            Policy::PlugIn(p) => p.decide_wait(delay),
        }
    }

    /// Feeds back the finished cycle.
    pub fn observe(&mut self, delay: f64, wait: f64) {
        match self {
            Policy::Online(s) => s.observe(delay, wait),
            Policy::PlugIn(p) => p.observe(delay),
            _ => {}
        }
    }

    /// `(γ_k, U_k)` for the online learner.
    pub fn learner(&self) -> Option<(f64, f64)> {
        match self {
            Policy::Online(s) => Some((s.state().gamma, s.state().debt)),
            _ => None,
        }
    }

    pub fn sampler_state(&self) -> Option<SamplerState> {
        match self {
            Policy::Online(s) => Some(*s.state()),
            _ => None,
        }
    }

    /// Current threshold for threshold-type policies.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            Policy::Online(s) => Some(s.state().gamma),
            Policy::OracleThreshold { beta } => Some(*beta),
            Policy::PlugIn(p) => p.beta,
            _ => None,
        }
    }

    pub fn wait_cap_exceedances(&self) -> u64 {
        match self {
            Policy::Online(s) => s.wait_cap_exceedances(),
            _ => 0,
        }
    }
}

/// Zero-wait until enough delays are seen, then the oracle threshold of the
/// empirical distribution of all delays so far, refreshed periodically.
#[derive(Debug, Clone)]
pub struct PlugIn {
    refit_every: u64,
    min_samples: usize,
    inv_f_max: f64,
    seen: u64,
    pending: Vec<f64>,
    history: Option<EmpiricalDistribution>,
    beta: Option<f64>,
    failed_refits: u64,
}

impl PlugIn {
    pub fn new(refit_every: u64, min_samples: usize, inv_f_max: f64) -> Self {
        PlugIn {
            refit_every: refit_every.max(1),
            min_samples,
            inv_f_max,
            seen: 0,
            pending: Vec::new(),
            history: None,
            beta: None,
            failed_refits: 0,
        }
    }

    pub fn decide_wait(&self, delay: f64) -> f64 {
        self.beta.map_or(0.0, |b| (b - delay).max(0.0))
    }

    pub fn observe(&mut self, delay: f64) {
        self.seen += 1;
        self.pending.push(delay);
        if self.seen as usize >= self.min_samples && self.seen.is_multiple_of(self.refit_every) {
            self.refit();
        }
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// Refits that failed (e.g. all delays zero) and kept the old threshold.
    pub fn failed_refits(&self) -> u64 {
        self.failed_refits
    }

    fn refit(&mut self) {
        let batch = std::mem::take(&mut self.pending);
        let absorbed = match &mut self.history {
            Some(h) => h.absorb(&batch),
            None => EmpiricalDistribution::new(batch).map(|h| {
                self.history = Some(h);
            }),
        };
        let solved = absorbed.and_then(|_| {
            let h = self.history.as_ref().expect("history set above");
            oracle::solve_constrained(h, rate(self.inv_f_max), DEFAULT_TOL)
        });
        match solved {
            Ok(sol) => self.beta = Some(sol.beta),
            Err(_) => self.failed_refits += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(spec: &PolicySpec, model: &DelayModel, inv: f64) -> Policy {
        let window = SamplerConfig::new(0.25, 1.0 / 3.0, 0.5, DEFAULT_V, inv).unwrap();
        spec.build(model, inv, &window, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
    }

    #[test]
    fn baseline_waits() {
        let u = DelayModel::uniform(0.0, 1.0).unwrap();
        assert_eq!(build(&PolicySpec::ZeroWait, &u, 0.0).decide_wait(7.3), 0.0);
        let p = build(&PolicySpec::Oracle { beta: Some(1.0) }, &u, 0.0);
        assert!((p.decide_wait(0.4) - 0.6).abs() < 1e-15);
        let p = build(&PolicySpec::ConstantWait { wait: None }, &u, 1.0);
        assert_eq!(p.decide_wait(0.9), 0.5);
        let p = build(&PolicySpec::ConstantWait { wait: None }, &u, 0.1);
        assert_eq!(p.decide_wait(0.9), 0.0);
    }

    #[test]
    fn oracle_default_uses_known_distribution() {
        let u = DelayModel::uniform(0.0, 1.0).unwrap();
        let p = build(&PolicySpec::Oracle { beta: None }, &u, 1.0);
        assert!((p.threshold().unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn online_reports_learner_state() {
        let u = DelayModel::uniform(0.0, 1.0).unwrap();
        let mut p = build(&PolicySpec::online(), &u, 0.0);
        let (g, debt) = p.learner().unwrap();
        assert!((0.25..=1.0 / 3.0).contains(&g));
        assert_eq!(debt, 0.0);
        p.observe(0.3, p.decide_wait(0.3));
        assert_eq!(p.sampler_state().unwrap().k, 2);
        assert!(build(&PolicySpec::ZeroWait, &u, 0.0).learner().is_none());
    }

    #[test]
    fn plugin_waits_for_min_samples_then_refits() {
        let mut p = PlugIn::new(5, 10, 0.0);
        for i in 0..9 {
            p.observe(0.1 * (i + 1) as f64 / 10.0 + 0.5);
            assert_eq!(p.decide_wait(0.0), 0.0);
        }
        p.observe(0.9);
        let beta = p.beta().expect("refit after 10 samples");
        let history =
            EmpiricalDistribution::new(p.history.as_ref().unwrap().samples().to_vec()).unwrap();
        let expected = oracle::solve_unconstrained(&history, DEFAULT_TOL).unwrap();
        assert!((beta - expected).abs() < 1e-9);
        assert_eq!(p.history.as_ref().unwrap().len(), 10);
    }

    #[test]
    fn plugin_survives_degenerate_history() {
        let mut p = PlugIn::new(1, 1, 0.0);
        p.observe(0.0);
        assert_eq!(p.beta(), None);
        assert_eq!(p.failed_refits(), 1);
        p.observe(2.0);
        assert!(p.beta().is_some());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "online".parse::<PolicySpec>().unwrap(),
            PolicySpec::Online { v: 10.0 }
        );
        assert_eq!(
            "online:1".parse::<PolicySpec>().unwrap(),
            PolicySpec::Online { v: 1.0 }
        );
        assert_eq!(
            "zero-wait".parse::<PolicySpec>().unwrap(),
            PolicySpec::ZeroWait
        );
        assert_eq!(
            "oracle:0.5".parse::<PolicySpec>().unwrap(),
            PolicySpec::Oracle { beta: Some(0.5) }
        );
        assert_eq!(
            "plugin:20".parse::<PolicySpec>().unwrap(),
            PolicySpec::Plugin {
                refit_every: 20,
                min_samples: 10
            }
        );
        assert_eq!(
            r#"{"policy":"constant_wait","wait":2}"#.parse::<PolicySpec>().unwrap(),
            PolicySpec::ConstantWait { wait: Some(2.0) }
        );
        assert_eq!(
            r#"{"policy":"plugin"}"#.parse::<PolicySpec>().unwrap(),
            PolicySpec::Plugin {
                refit_every: 10,
                min_samples: 10
            }
        );
        for bad in [
            "online:0",
            "oracle:-1",
            "plugin:0",
            "plugin:1.5",
            "random",
            "zero_wait:1",
        ] {
            assert!(bad.parse::<PolicySpec>().is_err(), "{bad}");
        }
        assert!(r#"{"policy":"online","w":1}"#.parse::<PolicySpec>().is_err());
    }

    #[test]
    fn json_roundtrip() {
        for spec in [
            PolicySpec::online(),
            PolicySpec::ZeroWait,
            PolicySpec::ConstantWait { wait: None },
            PolicySpec::Oracle { beta: Some(0.3) },
            PolicySpec::Plugin {
                refit_every: 3,
                min_samples: 4,
            },
        ] {
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(
                serde_json::from_str::<PolicySpec>(&json).unwrap(),
                spec,
                "{json}"
            );
        }
    }
}
