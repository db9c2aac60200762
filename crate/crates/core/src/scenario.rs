//! Canned experiments: log-normal delays with and without a sampling-frequency
//! constraint, each with a truncated twin, plus a uniform-delay sanity case.

use serde::Serialize;

use crate::delay::{DelayDistribution, DelayModel};
use crate::error::{Error, Result};
use crate::oracle::{self, OracleSolution, DEFAULT_TOL};
use crate::policy::PolicySpec;
use crate::simulator::{ensemble, BoundsMode, EnsembleOptions, EnsembleSummary, RunConfig};

pub const NAMES: [&str; 5] = [
    "lognormal-unconstrained",
    "lognormal-unconstrained-truncated",
    "lognormal-constrained",
    "lognormal-constrained-truncated",
    "uniform",
];

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: DelayModel,
    pub inv_f_max: f64,
    pub bounds: BoundsMode,
    pub policies: Vec<PolicySpec>,
    pub cycles: u64,
    pub runs: usize,
}

impl Scenario {
    pub fn by_name(name: &str) -> Result<Scenario> {
        let truncated = name.ends_with("-truncated");
        let trunc = |m: f64, s: f64| -> Result<DelayModel> {
            if truncated {
                DelayModel::lognormal_truncated(m, s, None)
            } else {
                DelayModel::lognormal(m, s)
            }
        };
        let twin = if truncated {
            " Delays above the 99.99th percentile are redrawn."
        } else {
            ""
        };
        let estimated = BoundsMode::Estimated { warmup_n: 100 };
        let scenario = match name.trim_end_matches("-truncated") {
            "lognormal-unconstrained" => Scenario {
                name: name.to_string(),
                description: format!(
                    "Log-normal delay (mu=1, sigma=1.3), no frequency constraint; online learner \
                     with bounds estimated from 100 warmup delays against zero-wait, the oracle \
                     threshold and the plug-in baseline.{twin}"
                ),
                model: trunc(1.0, 1.3)?,
                inv_f_max: 0.0,
                bounds: estimated,
                policies: vec![
                    PolicySpec::online(),
                    PolicySpec::ZeroWait,
                    PolicySpec::Oracle { beta: None },
                    PolicySpec::Plugin {
                        refit_every: 10,
                        min_samples: 10,
                    },
                ],
                cycles: 100_000,
                runs: 100,
            },
            "lognormal-constrained" => {
                let model = trunc(1.0, 1.5)?;
                let inv = 10.0 * model.mean();
                Scenario {
                    name: name.to_string(),
                    description: format!(
                        "Log-normal delay (mu=1, sigma=1.5) with mean sampling interval at least \
                         10 mean delays; online learner for V in {{1, 10, 100}} against constant \
                         wait and the oracle threshold.{twin}"
                    ),
                    model,
                    inv_f_max: inv,
                    bounds: estimated,
                    policies: vec![
                        PolicySpec::Online { v: 1.0 },
                        PolicySpec::Online { v: 10.0 },
                        PolicySpec::Online { v: 100.0 },
                        PolicySpec::ConstantWait { wait: None },
                        PolicySpec::Oracle { beta: None },
                    ],
                    cycles: 100_000,
                    runs: 100,
                }
            }
            "uniform" if !truncated => Scenario {
                name: name.to_string(),
                description:
                    "Uniform[0,1] delay with exact moment bounds, no frequency constraint."
                        .to_string(),
                model: DelayModel::uniform(0.0, 1.0)?,
                inv_f_max: 0.0,
                bounds: BoundsMode::Exact,
                policies: vec![
                    PolicySpec::online(),
                    PolicySpec::ZeroWait,
                    PolicySpec::Oracle { beta: None },
                    PolicySpec::Plugin {
                        refit_every: 10,
                        min_samples: 10,
                    },
                ],
                cycles: 100_000,
                runs: 100,
            },
            _ => {
                return Err(Error::invalid(format!(
                    "unknown scenario {name:?}; known: {}",
                    NAMES.join(", ")
                )))
            }
        };
        Ok(scenario)
    }

    pub fn all() -> Vec<Scenario> {
        NAMES
            .iter()
            .map(|n| Scenario::by_name(n).expect("built-in scenario"))
            .collect()
    }

    /// Known-distribution optimum for this scenario.
    pub fn reference(&self) -> Result<OracleSolution> {
        let f_max = if self.inv_f_max > 0.0 {
            1.0 / self.inv_f_max
        } else {
            f64::INFINITY
        };
        oracle::solve_constrained(&self.model, f_max, DEFAULT_TOL)
    }

    pub fn run_config(&self, policy: &PolicySpec, cycles: u64, seed: u64) -> RunConfig {
        RunConfig {
            inv_f_max: self.inv_f_max,
            bounds: self.bounds,
            ..RunConfig::new(self.model.clone(), policy.clone(), cycles, seed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyResult {
    pub policy: PolicySpec,
    pub label: String,
    pub summary: EnsembleSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub reference: Option<OracleSolution>,
    pub results: Vec<PolicyResult>,
}

/// Runs every policy of the scenario on the same seeds, hence the same delays.
pub fn run_scenario(
    scenario: &Scenario,
    runs: usize,
    cycles: u64,
    seed: u64,
    parallel: bool,
) -> Result<ScenarioReport> {
    let mut scenario = scenario.clone();
    scenario.runs = runs;
    scenario.cycles = cycles;
    let options = EnsembleOptions {
        runs,
        checkpoints: None,
        parallel,
    };
    let results = scenario
        .policies
        .iter()
        .map(|p| {
            let summary = ensemble(&scenario.run_config(p, cycles, seed), &options)?;
            Ok(PolicyResult {
                policy: p.clone(),
                label: p.label(),
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioReport {
        reference: scenario.reference().ok(),
        scenario,
        seed,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Metric;

    #[test]
    fn every_name_builds() {
        for s in Scenario::all() {
            assert!(!s.policies.is_empty());
            s.reference().unwrap();
        }
        assert!(Scenario::by_name("uniform-truncated").is_err());
        assert!(Scenario::by_name("nope").is_err());
    }

    #[test]
    fn constrained_scenario_constants() {
        let s = Scenario::by_name("lognormal-constrained").unwrap();
        let mean = (1.0f64 + 1.5 * 1.5 / 2.0).exp();
        assert!((s.inv_f_max - 10.0 * mean).abs() < 1e-9 * mean);
        let t = Scenario::by_name("lognormal-constrained-truncated").unwrap();
        assert!(t.model.upper_support().is_finite());
        assert!(s.model.upper_support().is_infinite());
    }

    #[test]
    fn small_run_shares_delays_across_policies() {
        let s = Scenario::by_name("uniform").unwrap();
        let report = run_scenario(&s, 2, 64, 3, false).unwrap();
        assert_eq!(report.results.len(), s.policies.len());
        let zw = &report.results[1].summary;
        let or = &report.results[2].summary;
        // The oracle waits at least as long as zero-wait on the same delays.
        let a = zw.at(Metric::MeanInterval, 64).unwrap().0;
        let b = or.at(Metric::MeanInterval, 64).unwrap().0;
        assert!(b >= a);
    }
}
