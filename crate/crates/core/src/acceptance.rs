//! Pass/fail acceptance suite.
//!
//! Each criterion runs a fixed, seeded experiment, compares the measured value
//! with its tolerance and reports the wall time against a budget. A criterion
//! passes only if both the check and the budget hold.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cycle::Trajectory;
use crate::delay::{DelayDistribution, DelayModel};
use crate::error::Result;
use crate::oracle::{self, DEFAULT_TOL};
use crate::policy::PolicySpec;
use crate::sampler::{self, SamplerConfig};
use crate::simulator::{self, derive_seed, EnsembleOptions, Metric, MomentBounds, RunConfig};

/// Knobs for mutation checks; the defaults run the suite as shipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// Multiplies every step size in the MSE-envelope experiment.
    pub step_scale: f64,
    pub parallel: bool,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            step_scale: 1.0,
            parallel: true,
            seed: 20_240_601,
        }
    }
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub tags: &'static [&'static str],
    pub budget: Duration,
    check: fn(&Settings) -> Result<Check>,
}

impl Criterion {
    /// Matches the id, a tag, or a substring of the name.
    pub fn matches(&self, filter: &str) -> bool {
        let f = filter.trim().to_ascii_lowercase();
        f.is_empty()
            || f == self.id.to_string()
            || self.tags.iter().any(|t| *t == f)
            || self.name.contains(f.as_str())
    }

    pub fn run(&self, settings: &Settings) -> Outcome {
        let start = Instant::now();
        let check = (self.check)(settings);
        let elapsed = start.elapsed();
        let (passed, detail) = match check {
            Ok(c) => (c.passed, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        Outcome {
            id: self.id,
            name: self.name,
            passed,
            detail,
            elapsed,
            budget: self.budget,
        }
    }
}

/// Measured result of one check.
struct Check {
    passed: bool,
    detail: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    /// Whether the numerical check held, ignoring the time budget.
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Outcome {
    pub fn within_budget(&self) -> bool {
        self.elapsed <= self.budget
    }

    pub fn ok(&self) -> bool {
        self.passed && self.within_budget()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.ok() { "PASS" } else { "FAIL" };
        let over = if self.within_budget() {
            ""
        } else {
            " OVER BUDGET"
        };
        write!(
            f,
            "{status} [{:>2}] {}: {} ({:.2}s / {}s{over})",
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

pub fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion {
            id: 1,
            name: "oracle-vs-cubic",
            tags: &["oracle"],
            budget: secs(1),
            check: oracle_vs_cubic,
        },
        Criterion {
            id: 2,
            name: "zero-wait-gap",
            tags: &["oracle"],
            budget: secs(1),
            check: zero_wait_gap,
        },
        Criterion {
            id: 3,
            name: "constrained-oracle",
            tags: &["oracle", "constraint"],
            budget: secs(1),
            check: constrained_oracle,
        },
        Criterion {
            id: 4,
            name: "mse-envelope",
            tags: &["sampler", "mse"],
            budget: secs(30),
            check: mse_envelope,
        },
        Criterion {
            id: 5,
            name: "gamma-convergence",
            tags: &["sampler", "convergence"],
            budget: secs(60),
            check: gamma_convergence,
        },
        Criterion {
            id: 6,
            name: "aoi-ratio-convergence",
            tags: &["simulator", "convergence"],
            budget: secs(120),
            check: aoi_ratio_convergence,
        },
        Criterion {
            id: 7,
            name: "frequency-constraint",
            tags: &["simulator", "constraint"],
            budget: secs(120),
            check: frequency_constraint,
        },
        Criterion {
            id: 8,
            name: "lecam-ordering",
            tags: &["oracle"],
            budget: secs(1),
            check: lecam_ordering,
        },
        Criterion {
            id: 9,
            name: "theta-diagnostic",
            tags: &["sampler"],
            budget: secs(60),
            check: theta_diagnostic,
        },
        Criterion {
            id: 10,
            name: "accounting-identity",
            tags: &["core"],
            budget: secs(10),
            check: accounting_identity,
        },
    ]
}

/// Runs the criteria selected by `filter` in id order.
pub fn run(filter: Option<&str>, settings: &Settings) -> Vec<Outcome> {
    criteria()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.matches(f)))
        .map(|c| c.run(settings))
        .collect()
}

fn uniform() -> DelayModel {
    DelayModel::uniform(0.0, 1.0).expect("valid model")
}

fn cubic_root() -> f64 {
    let s = 1.25f64.sqrt();
    (0.5 + s).cbrt() + (0.5 - s).cbrt()
}

fn oracle_vs_cubic(_: &Settings) -> Result<Check> {
    let gamma = oracle::solve_unconstrained(&uniform(), DEFAULT_TOL)?;
    let err = (gamma - cubic_root()).abs();
    Ok(Check {
        passed: err <= 1e-8,
        detail: format!("gamma*={gamma:.12}, |err|={err:.2e} (tol 1e-8)"),
    })
}

fn zero_wait_gap(_: &Settings) -> Result<Check> {
    let u = uniform();
    let zw = oracle::stationary_policy_aoi(&u, 0.0);
    let star = oracle::solve_constrained(&u, f64::INFINITY, DEFAULT_TOL)?.aoi_star;
    let err = (zw - 5.0 / 6.0).abs();
    Ok(Check {
        passed: err <= 1e-12 && zw > star,
        detail: format!("zero-wait={zw:.12} (|err|={err:.1e}, tol 1e-12) > aoi*={star:.9}"),
    })
}

fn constrained_oracle(_: &Settings) -> Result<Check> {
    let u = uniform();
    let sol = oracle::solve_constrained(&u, 1.0, DEFAULT_TOL)?;
    let residual = sol.slackness_residual().abs();
    let constant = oracle::constant_wait_aoi(&u, 1.0 - u.mean());
    let passed = (sol.beta - 1.0).abs() <= 1e-8
        && (sol.aoi_star - 1.0).abs() <= 1e-8
        && residual <= 1e-9
        && (constant - 25.0 / 24.0).abs() <= 1e-12
        && constant >= sol.aoi_star;
    Ok(Check {
        passed,
        detail: format!(
            "beta={:.10}, aoi*={:.10}, slackness={residual:.1e} (tol 1e-9), constant-wait={constant:.9}",
            sol.beta, sol.aoi_star
        ),
    })
}

/// `γ` after each listed number of updates, one row per seed, driven exactly
/// like the simulator but with every step size multiplied by `step_scale`.
pub fn gamma_paths(
    model: &DelayModel,
    config: &SamplerConfig,
    seeds: &[u64],
    checkpoints: &[u64],
    step_scale: f64,
) -> Vec<Vec<f64>> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    seeds
        .iter()
        .map(|&seed| {
            let mut delays = ChaCha8Rng::seed_from_u64(seed);
            delays.set_stream(0);
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            init.set_stream(1);
            let mut state = sampler::init_state(config, &mut init);
            let mut out = Vec::with_capacity(checkpoints.len());
            for k in 1..=last {
                let d = model.sample(&mut delays);
                let w = sampler::decide_wait(&state, config, d);
                let eta = step_scale * sampler::step_size(state.k, config.d_lb);
                state = sampler::update_with_step(&state, config, d, w, eta);
                if checkpoints.contains(&k) {
                    out.push(state.gamma);
                }
            }
            out
        })
        .collect()
}

const MSE_CHECKPOINTS: [u64; 3] = [100, 1_000, 10_000];
const MSE_RUNS: u64 = 200;
const MIN_MSE_REDUCTION: f64 = 20.0;

/// Mean squared threshold error at 100, 1000 and 10000 cycles.
pub fn mse_profile(settings: &Settings) -> Result<Vec<f64>> {
    let u = uniform();
    let config = MomentBounds::exact(&u.moments()).sampler_config(0.0, sampler::DEFAULT_V)?;
    let gamma_star = oracle::solve_unconstrained(&u, DEFAULT_TOL)?;
    let seeds: Vec<u64> = (0..MSE_RUNS)
        .map(|i| derive_seed(settings.seed ^ 4, i))
        .collect();
    let paths = gamma_paths(&u, &config, &seeds, &MSE_CHECKPOINTS, settings.step_scale);
    Ok((0..MSE_CHECKPOINTS.len())
        .map(|c| {
            paths
                .iter()
                .map(|p| (p[c] - gamma_star).powi(2))
                .sum::<f64>()
                / paths.len() as f64
        })
        .collect())
}

fn mse_envelope(settings: &Settings) -> Result<Check> {
    let u = uniform();
    let m = u.moments();
    let config = MomentBounds::exact(&m).sampler_config(0.0, sampler::DEFAULT_V)?;
    let l_ub = m.upper_support + config.gamma_ub;
    let constant = l_ub.powi(4) / (config.d_lb * config.d_lb);
    let mse = mse_profile(settings)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for (&k, &e) in MSE_CHECKPOINTS.iter().zip(&mse) {
        let bound = constant / k as f64;
        passed &= e <= bound;
        parts.push(format!("K={k}: {e:.3e} <= {bound:.3e}"));
    }
    let reduction = mse[0] / mse[2];
    passed &= reduction >= MIN_MSE_REDUCTION;
    Ok(Check {
        passed,
        detail: format!(
            "{}; MSE(100)/MSE(10000)={reduction:.1} (>= 20)",
            parts.join(", ")
        ),
    })
}

fn final_values(
    config: &RunConfig,
    runs: usize,
    metric: Metric,
    settings: &Settings,
) -> Result<Vec<f64>> {
    let options = EnsembleOptions {
        runs,
        checkpoints: Some(vec![config.cycles]),
        parallel: settings.parallel,
    };
    let summary = simulator::ensemble(config, &options)?;
    Ok(summary
        .values_at(metric, config.cycles)
        .expect("metric tracked"))
}

fn gamma_convergence(settings: &Settings) -> Result<Check> {
    let u = uniform();
    let gamma_star = oracle::solve_unconstrained(&u, DEFAULT_TOL)?;
    let config = RunConfig::new(u, PolicySpec::online(), 100_000, settings.seed ^ 5);
    let gammas = final_values(&config, 200, Metric::Gamma, settings)?;
    let close = gammas
        .iter()
        .filter(|g| (*g - gamma_star).abs() <= 0.02)
        .count();
    let frac = close as f64 / gammas.len() as f64;
    let worst = gammas
        .iter()
        .map(|g| (g - gamma_star).abs())
        .fold(0.0, f64::max);
    Ok(Check {
        passed: frac >= 0.95,
        detail: format!(
            "{close}/200 within 0.02 of gamma* ({:.1}% >= 95%), worst {worst:.2e}",
            100.0 * frac
        ),
    })
}

fn aoi_ratio_convergence(settings: &Settings) -> Result<Check> {
    let models = [
        ("uniform", uniform()),
        (
            "lognormal-trunc",
            DelayModel::lognormal_truncated(1.0, 1.3, None)?,
        ),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, model) in models {
        let star = oracle::solve_unconstrained(&model, DEFAULT_TOL)? + model.mean();
        let mut means = Vec::new();
        for policy in [PolicySpec::online(), PolicySpec::ZeroWait] {
            let config = RunConfig::new(model.clone(), policy, 100_000, settings.seed ^ 6);
            let v = final_values(&config, 100, Metric::AoiRatio, settings)?;
            means.push(v.iter().sum::<f64>() / v.len() as f64);
        }
        let rel = (means[0] - star).abs() / star;
        passed &= rel <= 0.01 && means[0] < means[1];
        parts.push(format!(
            "{name}: online {:.5} vs aoi* {star:.5} ({:.3}% <= 1%), zero-wait {:.5}",
            means[0],
            100.0 * rel,
            means[1]
        ));
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
    })
}

fn frequency_constraint(settings: &Settings) -> Result<Check> {
    let model = DelayModel::lognormal(1.0, 1.5)?;
    let inv = 10.0 * model.mean();
    let mut parts = Vec::new();
    let mut deficits = Vec::new();
    let mut passed = true;
    for v in [1.0, 10.0] {
        let mut config = RunConfig::new(
            model.clone(),
            PolicySpec::Online { v },
            100_000,
            settings.seed ^ 7,
        );
        config.inv_f_max = inv;
        let intervals = final_values(&config, 100, Metric::MeanInterval, settings)?;
        let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
        passed &= mean >= 0.98 * inv;
        // Signed: negative once the constraint is met with room to spare.
        deficits.push((inv - mean) / inv);
        parts.push(format!(
            "V={v}: mean interval {mean:.4} ({:.4} x 1/f_max)",
            mean / inv
        ));
    }
    passed &= deficits[0] <= deficits[1];
    Ok(Check {
        passed,
        detail: format!(
            "1/f_max={inv:.4}; {}; signed relative deficit V=1 {:.2e} <= V=10 {:.2e}",
            parts.join(", "),
            deficits[0],
            deficits[1]
        ),
    })
}

fn lecam_ordering(_: &Settings) -> Result<Check> {
    let g1 = oracle::solve_unconstrained(&uniform(), DEFAULT_TOL)?;
    let g2 = oracle::solve_unconstrained(&DelayModel::lecam(0.1611, 0.5, 100)?, DEFAULT_TOL)?;
    Ok(Check {
        passed: g2 >= g1,
        detail: format!("gamma(perturbed)={g2:.10} >= gamma(uniform)={g1:.10}"),
    })
}

fn theta_diagnostic(settings: &Settings) -> Result<Check> {
    let config = RunConfig::new(uniform(), PolicySpec::online(), 100_000, settings.seed ^ 9);
    let thetas = final_values(&config, 100, Metric::Theta, settings)?;
    let small = thetas.iter().filter(|t| t.abs() <= 0.02).count();
    let worst = thetas.iter().map(|t| t.abs()).fold(0.0, f64::max);
    Ok(Check {
        passed: small >= 90,
        detail: format!("{small}/100 runs with |theta_K| <= 0.02 (>= 90), worst {worst:.2e}"),
    })
}

fn accounting_identity(settings: &Settings) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 10);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=200);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let cycles: Vec<(f64, f64)> = (0..k)
            .map(|_| {
                let d = if rng.random_bool(0.05) {
                    0.0
                } else {
                    scale * rng.random::<f64>()
                };
                let w = if rng.random_bool(0.5) {
                    0.0
                } else {
                    scale * rng.random::<f64>()
                };
                (d, w)
            })
            .collect();
        let t = Trajectory::from_cycles(cycles)?;
        let direct = t.total_area();
        if direct == 0.0 {
            continue;
        }
        let path = t.sample_path_integral(t.horizon())?;
        worst = worst.max((direct - path).abs() / direct);
    }
    Ok(Check {
        passed: worst <= 1e-9,
        detail: format!("max relative error {worst:.2e} over 1000 paths (tol 1e-9)"),
    })
}
