//! Cycle-level simulation of the wait-for-ACK channel.
//!
//! Every run owns two ChaCha8 streams derived from its seed: stream 0 feeds
//! delays and stream 1 feeds policy randomness. Runs of different policies
//! with the same seed therefore see the same delay sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{partial_cycle_area, CycleAccumulator, CycleRecord, Trajectory};
use crate::delay::{DelayDistribution, DelayModel, MomentSummary};
use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::oracle::{self, OracleSolution, DEFAULT_TOL};
use crate::policy::{Policy, PolicySpec};
use crate::sampler::{SamplerConfig, SamplerState, DEFAULT_V};

/// Two-sided 95% normal quantile used for every confidence interval.
pub const Z_975: f64 = 1.96;
pub const DEFAULT_WARMUP: usize = 100;
/// Bound estimates are the warmup statistics divided and multiplied by this.
const BOUND_SLACK: f64 = 10.0;

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}

fn default_record_every() -> u64 {
    1
}

fn default_policy() -> PolicySpec {
    PolicySpec::online()
}

/// Where the online learner's moment bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsMode {
    /// The model's true mean and second moment.
    #[default]
    Exact,
    /// `D̂/10, 10·D̂, M̂/10, 10·M̂` from `warmup_n` delays drawn before cycle 1.
    Estimated {
        #[serde(default = "default_warmup")]
        warmup_n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBounds {
    pub d_lb: f64,
    pub d_ub: f64,
    pub m_lb: f64,
    pub m_ub: f64,
}

impl MomentBounds {
    pub fn exact(m: &MomentSummary) -> Self {
        MomentBounds {
            d_lb: m.mean,
            d_ub: m.mean,
            m_lb: m.second_moment,
            m_ub: m.second_moment,
        }
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("bound estimation needs at least one delay"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().copied().collect::<KahanSum>().value() / n;
        let second = samples.iter().map(|d| d * d).collect::<KahanSum>().value() / n;
        Ok(MomentBounds {
            d_lb: mean / BOUND_SLACK,
            d_ub: mean * BOUND_SLACK,
            m_lb: second / BOUND_SLACK,
            m_ub: second * BOUND_SLACK,
        })
    }

    /// Sampler configuration with the clipping window implied by these bounds.
    pub fn sampler_config(&self, inv_f_max: f64, v: f64) -> Result<SamplerConfig> {
        let f_max = if inv_f_max > 0.0 {
            1.0 / inv_f_max
        } else {
            f64::INFINITY
        };
        let b = oracle::gamma_bounds(self.d_lb, self.d_ub, self.m_lb, self.m_ub, f_max)?;
        SamplerConfig::new(b.gamma_lb, b.gamma_ub, self.d_lb, v, inv_f_max)
    }
}

/// Draws `n` delays and applies the tenfold-slack recipe.
pub fn estimate_moment_bounds<D, R>(model: &D, n: usize, rng: &mut R) -> Result<MomentBounds>
where
    D: DelayDistribution + ?Sized,
    R: Rng + ?Sized,
{
    let samples: Vec<f64> = (0..n).map(|_| model.sample(rng)).collect();
    MomentBounds::from_samples(&samples)
}

/// One simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: DelayModel,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    /// Number of cycles `K`.
    pub cycles: u64,
    /// `1/f_max`; zero disables the frequency constraint.
    #[serde(default)]
    pub inv_f_max: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: BoundsMode,
    /// Trajectory CSV keeps every `record_every`-th cycle.
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Optional `W_ub`; exceedances are counted, waits are never clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_cap: Option<f64>,
}

impl RunConfig {
    pub fn new(model: DelayModel, policy: PolicySpec, cycles: u64, seed: u64) -> Self {
        RunConfig {
            model,
            policy,
            cycles,
            inv_f_max: 0.0,
            seed,
            bounds: BoundsMode::Exact,
            record_every: 1,
            wait_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::invalid("cycles (K) must be >= 1"));
        }
        if !(self.inv_f_max >= 0.0 && self.inv_f_max.is_finite()) {
            return Err(Error::invalid(format!(
                "inv_f_max must be >= 0, got {}",
                self.inv_f_max
            )));
        }
        if let BoundsMode::Estimated { warmup_n: 0 } = self.bounds {
            return Err(Error::invalid("warmup_n must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        self.policy.validate()
    }

    /// `f_max`, infinite when unconstrained.
    pub fn f_max(&self) -> f64 {
        if self.inv_f_max > 0.0 {
            1.0 / self.inv_f_max
        } else {
            f64::INFINITY
        }
    }
}

/// Seed of run `index` under `master`, via two SplitMix64 rounds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index))
}

fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut delays = ChaCha8Rng::seed_from_u64(seed);
    delays.set_stream(0);
    let mut policy = ChaCha8Rng::seed_from_u64(seed);
    policy.set_stream(1);
    (delays, policy)
}

/// Step-by-step engine for one run.
pub struct Simulation<'a> {
    model: &'a DelayModel,
    policy: Policy,
    acc: CycleAccumulator,
    delays: ChaCha8Rng,
    bounds: MomentBounds,
    window: SamplerConfig,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self> {
        Self::with_seed(config, config.seed)
    }

    pub fn with_seed(config: &'a RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (mut delays, mut policy_rng) = streams(seed);
        let bounds = match config.bounds {
            BoundsMode::Exact => MomentBounds::exact(&config.model.moments()),
            BoundsMode::Estimated { warmup_n } => {
                estimate_moment_bounds(&config.model, warmup_n, &mut delays)?
            }
        };
        let mut window = bounds.sampler_config(config.inv_f_max, DEFAULT_V)?;
        window.wait_cap = config.wait_cap;
        let policy =
            config
                .policy
                .build(&config.model, config.inv_f_max, &window, &mut policy_rng)?;
        Ok(Simulation {
            model: &config.model,
            policy,
            acc: CycleAccumulator::new(),
            delays,
            bounds,
            window,
        })
    }

    /// Observe `D_k`, decide `W_k`, record the cycle, then update the policy.
    pub fn step(&mut self) -> CycleRecord {
        let delay = self.model.sample(&mut self.delays);
        let wait = self.policy.decide_wait(delay);
        let record = self.acc.advance(delay, wait, self.policy.learner());
        self.policy.observe(delay, wait);
        record
    }

    pub fn accumulator(&self) -> &CycleAccumulator {
        &self.acc
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn bounds(&self) -> &MomentBounds {
        &self.bounds
    }

    /// Clipping window and step scale given to the online learner.
    pub fn window(&self) -> &SamplerConfig {
        &self.window
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub final_state: Option<SamplerState>,
    pub threshold: Option<f64>,
    pub bounds: MomentBounds,
    pub window: SamplerConfig,
    pub wait_cap_exceedances: u64,
}

/// Simulates `K` cycles starting at `S_1 = 0` and keeps every record.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config)?;
    let mut trajectory = Trajectory::new();
    for _ in 0..config.cycles {
        let r = sim.step();
        trajectory.push(r.delay, r.wait, r.gamma.zip(r.debt));
    }
    Ok(RunOutput {
        trajectory,
        final_state: sim.policy.sampler_state(),
        threshold: sim.policy.threshold(),
        bounds: sim.bounds,
        window: sim.window,
        wait_cap_exceedances: sim.policy.wait_cap_exceedances(),
    })
}

/// Quantities tracked at each checkpoint of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `Σ X_k / Σ L_k` after `c` cycles.
    AoiRatio,
    /// `(1/t)·∫₀ᵗ A(s) ds` at `t = c·D̄`.
    TimeAvgAoi,
    /// `γ` used in cycle `c + 1` (online policy only).
    Gamma,
    /// `S_{c+1}/c`.
    MeanInterval,
    /// `U` after cycle `c` (online policy only).
    Debt,
    /// `θ_c` against the known-distribution optimum.
    Theta,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::AoiRatio,
        Metric::TimeAvgAoi,
        Metric::Gamma,
        Metric::MeanInterval,
        Metric::Debt,
        Metric::Theta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AoiRatio => "aoi_ratio",
            Metric::TimeAvgAoi => "time_avg_aoi",
            Metric::Gamma => "gamma",
            Metric::MeanInterval => "mean_interval",
            Metric::Debt => "debt",
            Metric::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub runs: usize,
    /// Cycle indices to report; `None` means powers of two plus `K`.
    pub checkpoints: Option<Vec<u64>>,
    pub parallel: bool,
}

impl EnsembleOptions {
    pub fn new(runs: usize) -> Self {
        EnsembleOptions {
            runs,
            checkpoints: None,
            parallel: true,
        }
    }
}

/// Per-run metric values, `values[m][c]` for metric `m` at checkpoint `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub seed: u64,
    pub metrics: Vec<Metric>,
    pub values: Vec<Vec<f64>>,
    pub final_state: Option<SamplerState>,
    pub wait_cap_exceedances: u64,
}

impl RunTrace {
    pub fn get(&self, metric: Metric) -> Option<&[f64]> {
        self.metrics
            .iter()
            .position(|&m| m == metric)
            .map(|i| self.values[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: Vec<f64>,
    pub ci_half_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub checkpoints: Vec<u64>,
    pub runs: usize,
    /// `D̄`; time-average checkpoints sit at `c·D̄`.
    pub time_unit: f64,
    /// Known-distribution optimum used for `θ`, if it could be solved.
    pub reference: Option<OracleSolution>,
    pub metrics: Vec<MetricSummary>,
    #[serde(skip)]
    pub traces: Vec<RunTrace>,
}

impl EnsembleSummary {
    pub fn metric(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    fn checkpoint_index(&self, checkpoint: u64) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == checkpoint)
    }

    /// `(mean, CI half-width)` of a metric at a checkpoint.
    pub fn at(&self, metric: Metric, checkpoint: u64) -> Option<(f64, f64)> {
        let i = self.checkpoint_index(checkpoint)?;
        self.metric(metric).map(|m| (m.mean[i], m.ci_half_width[i]))
    }

    /// Every run's value of a metric at a checkpoint.
    pub fn values_at(&self, metric: Metric, checkpoint: u64) -> Option<Vec<f64>> {
        let i = self.checkpoint_index(checkpoint)?;
        self.traces
            .iter()
            .map(|t| t.get(metric).map(|v| v[i]))
            .collect()
    }
}

/// Powers of two below `k`, then `k`.
pub fn default_checkpoints(k: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (0..64).map(|i| 1u64 << i).take_while(|&c| c < k).collect();
    out.push(k);
    out
}

/// Sample mean and `1.96·s/√n`.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().copied().collect::<KahanSum>().value() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = values
        .iter()
        .map(|v| (v - mean).powi(2))
        .collect::<KahanSum>()
        .value();
    let sd = (ss / (n - 1) as f64).sqrt();
    (mean, Z_975 * sd / (n as f64).sqrt())
}

/// Independent runs with seeds derived from `config.seed`.
pub fn ensemble(config: &RunConfig, options: &EnsembleOptions) -> Result<EnsembleSummary> {
    let seeds: Vec<u64> = (0..options.runs as u64)
        .map(|i| derive_seed(config.seed, i))
        .collect();
    ensemble_with_seeds(
        config,
        &seeds,
        options.checkpoints.as_deref(),
        options.parallel,
    )
}

/// Runs one simulation per seed and aggregates at the checkpoints.
///
/// Results are identical whether runs execute in parallel or serially.
pub fn ensemble_with_seeds(
    config: &RunConfig,
    seeds: &[u64],
    checkpoints: Option<&[u64]>,
    parallel: bool,
) -> Result<EnsembleSummary> {
    config.validate()?;
    if seeds.len() < 2 {
        return Err(Error::invalid(format!(
            "an ensemble needs >= 2 runs, got {}",
            seeds.len()
        )));
    }
    let checkpoints = resolve_checkpoints(checkpoints, config.cycles)?;
    let reference = oracle::solve_constrained(&config.model, config.f_max(), DEFAULT_TOL).ok();
    let online = matches!(config.policy, PolicySpec::Online { .. });
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| match m {
            Metric::Gamma | Metric::Debt => online,
            Metric::Theta => reference.is_some(),
            _ => true,
        })
        .collect();

    let trace = |&seed: &u64| trace_run(config, seed, &checkpoints, &metrics, reference.as_ref());
    let traces: Vec<RunTrace> = if parallel {
        seeds.par_iter().map(trace).collect::<Result<_>>()?
    } else {
        seeds.iter().map(trace).collect::<Result<_>>()?
    };

    let summaries = metrics
        .iter()
        .enumerate()
        .map(|(mi, &metric)| {
            let (mean, ci_half_width) = (0..checkpoints.len())
                .map(|ci| mean_ci(&traces.iter().map(|t| t.values[mi][ci]).collect::<Vec<_>>()))
                .unzip();
            MetricSummary {
                metric,
                mean,
                ci_half_width,
            }
        })
        .collect();

    Ok(EnsembleSummary {
        checkpoints,
        runs: seeds.len(),
        time_unit: config.model.mean(),
        reference,
        metrics: summaries,
        traces,
    })
}

fn resolve_checkpoints(requested: Option<&[u64]>, k: u64) -> Result<Vec<u64>> {
    let mut out = match requested {
        Some(list) if !list.is_empty() => list.to_vec(),
        _ => default_checkpoints(k),
    };
    out.sort_unstable();
    out.dedup();
    if out[0] == 0 || *out.last().expect("nonempty") > k {
        return Err(Error::invalid(format!("checkpoints must lie in [1, {k}]")));
    }
    Ok(out)
}

/// Extra cycles allowed beyond `K` while waiting for time checkpoints.
const MAX_OVERRUN_FACTOR: u64 = 100;

fn trace_run(
    config: &RunConfig,
    seed: u64,
    checkpoints: &[u64],
    metrics: &[Metric],
    reference: Option<&OracleSolution>,
) -> Result<RunTrace> {
    let mut sim = Simulation::with_seed(config, seed)?;
    let mean_delay = config.model.mean();
    let times: Vec<f64> = checkpoints.iter().map(|&c| c as f64 * mean_delay).collect();
    let mut cycle_values = vec![Vec::with_capacity(checkpoints.len()); metrics.len()];
    let mut time_values = Vec::with_capacity(times.len());
    let (mut ci, mut ti) = (0, 0);
    let limit = config
        .cycles
        .saturating_mul(MAX_OVERRUN_FACTOR)
        .max(config.cycles + 1_000_000);
    while ci < checkpoints.len() || ti < times.len() {
        let acc = sim.accumulator();
        if acc.cycles() >= limit {
            break;
        }
        let (prev_length, area_before) = (acc.prev_length(), acc.total_area());
        let r = sim.step();
        let end = r.next_sample_time();
        while ti < times.len() && times[ti] <= end {
            let tau = (times[ti] - r.sample_time).max(0.0);
            time_values
                .push((area_before + partial_cycle_area(prev_length, r.delay, tau)) / times[ti]);
            ti += 1;
        }
        if ci < checkpoints.len() && r.k == checkpoints[ci] {
            let acc = sim.accumulator();
            let learner = sim.policy().learner();
            for (mi, metric) in metrics.iter().enumerate() {
                let v = match metric {
                    Metric::AoiRatio => acc.aoi_ratio().unwrap_or(f64::NAN),
                    Metric::MeanInterval => acc.mean_interval()?,
                    Metric::Gamma => learner.map_or(f64::NAN, |(g, _)| g),
                    Metric::Debt => learner.map_or(f64::NAN, |(_, u)| u),
                    Metric::Theta => match reference {
                        Some(s) => acc.theta(s.gamma_star, mean_delay)?,
                        None => f64::NAN,
                    },
                    Metric::TimeAvgAoi => continue,
                };
                cycle_values[mi].push(v);
            }
            ci += 1;
        }
    }
    time_values.resize(times.len(), f64::NAN);
    if let Some(mi) = metrics.iter().position(|&m| m == Metric::TimeAvgAoi) {
        cycle_values[mi] = time_values;
    }
    for v in &mut cycle_values {
        v.resize(checkpoints.len(), f64::NAN);
    }
    Ok(RunTrace {
        seed,
        metrics: metrics.to_vec(),
        values: cycle_values,
        final_state: sim.policy().sampler_state(),
        wait_cap_exceedances: sim.policy().wait_cap_exceedances(),
    })
}
