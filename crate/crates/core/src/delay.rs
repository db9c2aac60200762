//! Channel delay distributions.
//!
//! Every solver in the crate consumes a distribution through two threshold
//! integrals, `E[max{β, D}]` and `E[½·max{β, D}²]`. They are evaluated in
//! closed form for piecewise-uniform and atomic models and by adaptive
//! quadrature in standardized log coordinates for the log-normal family.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, KahanSum};

/// Percentile used when log-normal truncation is requested without a bound.
pub const AUTO_TRUNCATION_PERCENTILE: f64 = 0.9999;

/// Standardized-log half width beyond the integrand peak that is integrated.
const LOG_TAIL_CUT: f64 = 14.0;
const LOG_PANELS: usize = 64;
const LOG_REL_TOL: f64 = 1e-13;

/// First two moments and the support bound of a delay distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub second_moment: f64,
    /// `f64::INFINITY` for unbounded support.
    pub upper_support: f64,
}

/// `E[max{β, D}]` and `E[½·max{β, D}²]` at one threshold β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdIntegrals {
    pub e_max: f64,
    pub e_half_max_sq: f64,
}

/// Operations the oracle and the simulator need from a delay law.
pub trait DelayDistribution {
    /// One i.i.d. draw. Always in `[0, upper_support]`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    fn cdf(&self, x: f64) -> f64;

    /// Smallest `x` with `cdf(x) >= p`, for `p` in `[0, 1]`.
    fn quantile(&self, p: f64) -> f64;

    fn moments(&self) -> MomentSummary;

    /// Threshold integrals at `beta >= 0`.
    fn threshold_integrals(&self, beta: f64) -> ThresholdIntegrals;

    fn mean(&self) -> f64 {
        self.moments().mean
    }

    fn upper_support(&self) -> f64 {
        self.moments().upper_support
    }
}

/// Serialized description of a delay model.
///
/// ```json
/// {"kind": "lognormal", "mu": 1.0, "sigma": 1.3, "truncation": "auto"}
/// {"kind": "uniform", "a": 0.0, "b": 1.0}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelaySpec {
    #[serde(rename = "lognormal")]
    LogNormal {
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation: Option<Truncation>,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    Deterministic {
        d: f64,
    },
    #[serde(rename = "lecam")]
    LeCam {
        delta: f64,
        c: f64,
        k: u32,
    },
    Empirical {
        samples: Vec<f64>,
    },
}

/// Log-normal truncation: an explicit bound, or `"auto"` for the
/// 99.99th percentile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truncation {
    Bound(f64),
    Keyword(TruncationKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationKeyword {
    Auto,
}

/// A validated delay distribution. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelaySpec", into = "DelaySpec")]
pub struct DelayModel {
    repr: Repr,
    moments: MomentSummary,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    LogNormal(LogNormal),
    Uniform {
        a: f64,
        b: f64,
        pieces: Piecewise,
    },
    Deterministic {
        d: f64,
    },
    LeCam {
        delta: f64,
        c: f64,
        k: u32,
        pieces: Piecewise,
    },
    Empirical(EmpiricalDistribution),
}

impl DelayModel {
    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::try_from(DelaySpec::LogNormal {
            mu,
            sigma,
            truncation: None,
        })
    }

    /// Log-normal resampled above `bound`; `None` picks the 99.99th percentile.
    pub fn lognormal_truncated(mu: f64, sigma: f64, bound: Option<f64>) -> Result<Self> {
        let truncation = Some(match bound {
            Some(b) => Truncation::Bound(b),
            None => Truncation::Keyword(TruncationKeyword::Auto),
        });
        Self::try_from(DelaySpec::LogNormal {
            mu,
            sigma,
            truncation,
        })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::try_from(DelaySpec::Uniform { a, b })
    }

    pub fn deterministic(d: f64) -> Result<Self> {
        Self::try_from(DelaySpec::Deterministic { d })
    }

    /// Uniform[0, 1] with `c/√k` of density moved from `[0, δ/2]` to `[1−δ/2, 1]`.
    pub fn lecam(delta: f64, c: f64, k: u32) -> Result<Self> {
        Self::try_from(DelaySpec::LeCam { delta, c, k })
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        Ok(Self::from_repr(Repr::Empirical(
            EmpiricalDistribution::new(samples)?,
        )))
    }

    /// Empirical model from a one-column CSV of delays (an optional header
    /// line is skipped).
    pub fn empirical_from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_repr(Repr::Empirical(
            EmpiricalDistribution::from_csv(path)?,
        )))
    }

    pub fn spec(&self) -> DelaySpec {
        self.clone().into()
    }

    /// Short family name, as used in the `kind` JSON tag.
    pub fn kind(&self) -> &'static str {
        match self.repr {
            Repr::LogNormal(_) => "lognormal",
            Repr::Uniform { .. } => "uniform",
            Repr::Deterministic { .. } => "deterministic",
            Repr::LeCam { .. } => "lecam",
            Repr::Empirical(_) => "empirical",
        }
    }

    fn from_repr(repr: Repr) -> Self {
        let moments = match &repr {
            Repr::LogNormal(ln) => ln.moments(),
            Repr::Uniform { a, b, .. } => MomentSummary {
                mean: 0.5 * (a + b),
                second_moment: (a * a + a * b + b * b) / 3.0,
                upper_support: *b,
            },
            Repr::Deterministic { d } => MomentSummary {
                mean: *d,
                second_moment: d * d,
                upper_support: *d,
            },
            Repr::LeCam { pieces, .. } => pieces.moments(),
            Repr::Empirical(emp) => emp.moments(),
        };
        DelayModel { repr, moments }
    }
}

impl TryFrom<DelaySpec> for DelayModel {
    type Error = Error;

    fn try_from(spec: DelaySpec) -> Result<Self> {
        let repr = match spec {
            DelaySpec::LogNormal {
                mu,
                sigma,
                truncation,
            } => {
                if !mu.is_finite() {
                    return Err(Error::invalid(format!(
                        "lognormal mu must be finite, got {mu}"
                    )));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!(
                        "lognormal sigma must be > 0, got {sigma}"
                    )));
                }
                let upper = match truncation {
                    None => None,
                    Some(Truncation::Keyword(TruncationKeyword::Auto)) => {
                        Some(lognormal_quantile(mu, sigma, AUTO_TRUNCATION_PERCENTILE))
                    }
                    Some(Truncation::Bound(b)) => {
                        if !(b > 0.0 && b.is_finite()) {
                            return Err(Error::invalid(format!(
                                "lognormal truncation bound must be > 0, got {b}"
                            )));
                        }
                        Some(b)
                    }
                };
                Repr::LogNormal(LogNormal::new(mu, sigma, upper))
            }
            DelaySpec::Uniform { a, b } => {
                if !(a >= 0.0 && b > a && b.is_finite()) {
                    return Err(Error::invalid(format!(
                        "uniform needs 0 <= a < b, got a={a}, b={b}"
                    )));
                }
                let pieces = Piecewise::new(vec![Segment {
                    lo: a,
                    hi: b,
                    density: 1.0 / (b - a),
                }]);
                Repr::Uniform { a, b, pieces }
            }
            DelaySpec::Deterministic { d } => {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::invalid(format!(
                        "deterministic delay must be > 0, got {d}"
                    )));
                }
                Repr::Deterministic { d }
            }
            DelaySpec::LeCam { delta, c, k } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::invalid(format!(
                        "lecam delta must be in (0, 1), got {delta}"
                    )));
                }
                if !(c > 0.0 && c <= 0.5) {
                    return Err(Error::invalid(format!(
                        "lecam c must be in (0, 1/2], got {c}"
                    )));
                }
                if k == 0 {
                    return Err(Error::invalid("lecam k must be a positive integer"));
                }
                let eps = c / f64::from(k).sqrt();
                let half = 0.5 * delta;
                let pieces = Piecewise::new(vec![
                    Segment {
                        lo: 0.0,
                        hi: half,
                        density: 1.0 - eps,
                    },
                    Segment {
                        lo: half,
                        hi: 1.0 - half,
                        density: 1.0,
                    },
                    Segment {
                        lo: 1.0 - half,
                        hi: 1.0,
                        density: 1.0 + eps,
                    },
                ]);
                Repr::LeCam {
                    delta,
                    c,
                    k,
                    pieces,
                }
            }
            DelaySpec::Empirical { samples } => {
                Repr::Empirical(EmpiricalDistribution::new(samples)?)
            }
        };
        Ok(Self::from_repr(repr))
    }
}

impl From<DelayModel> for DelaySpec {
    fn from(model: DelayModel) -> Self {
        match model.repr {
            Repr::LogNormal(ln) => DelaySpec::LogNormal {
                mu: ln.mu,
                sigma: ln.sigma,
                truncation: ln.upper.map(Truncation::Bound),
            },
            Repr::Uniform { a, b, .. } => DelaySpec::Uniform { a, b },
            Repr::Deterministic { d } => DelaySpec::Deterministic { d },
            Repr::LeCam { delta, c, k, .. } => DelaySpec::LeCam { delta, c, k },
            Repr::Empirical(emp) => DelaySpec::Empirical {
                samples: emp.sorted,
            },
        }
    }
}

impl DelayDistribution for DelayModel {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.repr {
            Repr::LogNormal(ln) => ln.sample(rng),
            Repr::Uniform { a, b, .. } => a + (b - a) * rng.random::<f64>(),
            Repr::Deterministic { d } => *d,
            Repr::LeCam { pieces, .. } => pieces.quantile(rng.random::<f64>()),
            Repr::Empirical(emp) => emp.sample(rng),
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::LogNormal(ln) => ln.cdf(x),
            Repr::Uniform { pieces, .. } | Repr::LeCam { pieces, .. } => pieces.cdf(x),
            Repr::Deterministic { d } => {
                if x >= *d {
                    1.0
                } else {
                    0.0
                }
            }
            Repr::Empirical(emp) => emp.cdf(x),
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.repr {
            Repr::LogNormal(ln) => ln.quantile(p),
            Repr::Uniform { pieces, .. } | Repr::LeCam { pieces, .. } => pieces.quantile(p),
            Repr::Deterministic { d } => *d,
            Repr::Empirical(emp) => emp.quantile(p),
        }
    }

    fn moments(&self) -> MomentSummary {
        self.moments
    }

    fn threshold_integrals(&self, beta: f64) -> ThresholdIntegrals {
        let beta = beta.max(0.0);
        match &self.repr {
            Repr::LogNormal(ln) => ln.threshold_integrals(beta),
            Repr::Uniform { pieces, .. } | Repr::LeCam { pieces, .. } => {
                pieces.threshold_integrals(beta)
            }
            Repr::Deterministic { d } => {
                let m = beta.max(*d);
                ThresholdIntegrals {
                    e_max: m,
                    e_half_max_sq: 0.5 * m * m,
                }
            }
            Repr::Empirical(emp) => emp.threshold_integrals(beta),
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::LogNormal(ln) => match ln.upper {
                Some(b) => write!(f, "lognormal:{},{},{}", ln.mu, ln.sigma, b),
                None => write!(f, "lognormal:{},{}", ln.mu, ln.sigma),
            },
            Repr::Uniform { a, b, .. } => write!(f, "uniform:{a},{b}"),
            Repr::Deterministic { d } => write!(f, "deterministic:{d}"),
            Repr::LeCam { delta, c, k, .. } => write!(f, "lecam:{delta},{c},{k}"),
            Repr::Empirical(emp) => write!(f, "empirical[{} samples]", emp.len()),
        }
    }
}

/// Parses either a JSON object or the CLI shorthand:
/// `uniform:A,B`, `deterministic:D`, `lognormal:MU,SIGMA[,auto|BOUND]`,
/// `lecam:DELTA,C,K`, `empirical:PATH.csv`.
impl FromStr for DelayModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(serde_json::from_str(s)?);
        }
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        if kind == "empirical" {
            return Self::empirical_from_csv(args);
        }
        let parts: Vec<&str> = args
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .collect();
        let num = |i: usize| -> Result<f64> {
            let raw = parts.get(i).ok_or_else(|| {
                Error::invalid(format!("model `{s}`: missing argument {}", i + 1))
            })?;
            raw.parse::<f64>()
                .map_err(|_| Error::invalid(format!("model `{s}`: `{raw}` is not a number")))
        };
        let expect_args = |n: usize| -> Result<()> {
            if parts.len() > n {
                return Err(Error::invalid(format!("model `{s}`: too many arguments")));
            }
            Ok(())
        };
        match kind {
            "uniform" => {
                expect_args(2)?;
                Self::uniform(num(0)?, num(1)?)
            }
            "deterministic" => {
                expect_args(1)?;
                Self::deterministic(num(0)?)
            }
            "lognormal" => {
                expect_args(3)?;
                match parts.get(2) {
                    None => Self::lognormal(num(0)?, num(1)?),
                    Some(&"auto") => Self::lognormal_truncated(num(0)?, num(1)?, None),
                    Some(_) => Self::lognormal_truncated(num(0)?, num(1)?, Some(num(2)?)),
                }
            }
            "lecam" => {
                expect_args(3)?;
                let k = parts[2].parse::<u32>().map_err(|_| {
                    Error::invalid(format!("model `{s}`: k must be a positive integer"))
                })?;
                Self::lecam(num(0)?, num(1)?, k)
            }
            other => Err(Error::invalid(format!(
                "unknown delay model kind `{other}`"
            ))),
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn lognormal_quantile(mu: f64, sigma: f64, p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        (mu + sigma * std_normal_quantile(p)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LogNormal {
    mu: f64,
    sigma: f64,
    upper: Option<f64>,
    /// Untruncated probability mass below `upper` (1 when untruncated).
    mass: f64,
}

impl LogNormal {
    fn new(mu: f64, sigma: f64, upper: Option<f64>) -> Self {
        let mut ln = LogNormal {
            mu,
            sigma,
            upper,
            mass: 1.0,
        };
        if let Some(b) = upper {
            ln.mass = std_normal_cdf(ln.z(b));
        }
        ln
    }

    fn z(&self, x: f64) -> f64 {
        (x.ln() - self.mu) / self.sigma
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = (self.mu + self.sigma * z).exp();
            match self.upper {
                Some(b) if x > b => continue,
                _ => return x,
            }
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if let Some(b) = self.upper {
            if x >= b {
                return 1.0;
            }
        }
        (std_normal_cdf(self.z(x)) / self.mass).min(1.0)
    }

    fn quantile(&self, p: f64) -> f64 {
        let q = lognormal_quantile(self.mu, self.sigma, p * self.mass);
        match self.upper {
            Some(b) => q.min(b),
            None => q,
        }
    }

    /// `∫_{from}^{upper} x^order p(x) dx` for the untruncated density,
    /// integrated over `z = (ln x − μ)/σ`.
    fn partial_moment(&self, order: i32, from: f64) -> f64 {
        let n = f64::from(order);
        let peak = n * self.sigma;
        let z_lo = if from > 0.0 {
            self.z(from).max(peak - LOG_TAIL_CUT)
        } else {
            peak - LOG_TAIL_CUT
        };
        let z_hi = match self.upper {
            Some(b) => self.z(b).min(peak + LOG_TAIL_CUT),
            None => peak + LOG_TAIL_CUT,
        };
        if z_hi <= z_lo {
            return 0.0;
        }
        let (mu, sigma) = (self.mu, self.sigma);
        let scale = (n * mu + 0.5 * n * n * sigma * sigma).exp();
        adaptive_simpson(
            |z| (n * (mu + sigma * z)).exp() * std_normal_pdf(z),
            z_lo,
            z_hi,
            LOG_REL_TOL * scale,
            LOG_PANELS,
        )
    }

    fn moments(&self) -> MomentSummary {
        match self.upper {
            None => {
                let s2 = self.sigma * self.sigma;
                MomentSummary {
                    mean: (self.mu + 0.5 * s2).exp(),
                    second_moment: (2.0 * self.mu + 2.0 * s2).exp(),
                    upper_support: f64::INFINITY,
                }
            }
            Some(b) => MomentSummary {
                mean: self.partial_moment(1, 0.0) / self.mass,
                second_moment: self.partial_moment(2, 0.0) / self.mass,
                upper_support: b,
            },
        }
    }

    fn threshold_integrals(&self, beta: f64) -> ThresholdIntegrals {
        if let Some(b) = self.upper {
            if beta >= b {
                return ThresholdIntegrals {
                    e_max: beta,
                    e_half_max_sq: 0.5 * beta * beta,
                };
            }
        }
        let below = self.cdf(beta);
        let tail1 = self.partial_moment(1, beta) / self.mass;
        let tail2 = self.partial_moment(2, beta) / self.mass;
        ThresholdIntegrals {
            e_max: beta * below + tail1,
            e_half_max_sq: 0.5 * (beta * beta * below + tail2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    lo: f64,
    hi: f64,
    density: f64,
}

/// Density that is constant on each of a few adjacent segments.
#[derive(Debug, Clone, PartialEq)]
struct Piecewise {
    segments: Vec<Segment>,
}

impl Piecewise {
    fn new(segments: Vec<Segment>) -> Self {
        Piecewise { segments }
    }

    fn cdf(&self, x: f64) -> f64 {
        let mass: f64 = self
            .segments
            .iter()
            .map(|s| s.density * (x.clamp(s.lo, s.hi) - s.lo))
            .sum();
        mass.clamp(0.0, 1.0)
    }

    fn quantile(&self, p: f64) -> f64 {
        let mut below = 0.0;
        for s in &self.segments {
            let mass = s.density * (s.hi - s.lo);
            if p <= below + mass {
                return (s.lo + (p - below) / s.density).min(s.hi);
            }
            below += mass;
        }
        self.segments.last().map_or(0.0, |s| s.hi)
    }

    fn threshold_integrals(&self, beta: f64) -> ThresholdIntegrals {
        let mut below = 0.0;
        let mut tail1 = 0.0;
        let mut tail2 = 0.0;
        for s in &self.segments {
            let m = beta.clamp(s.lo, s.hi);
            below += s.density * (m - s.lo);
            tail1 += s.density * (s.hi * s.hi - m * m) / 2.0;
            tail2 += s.density * (s.hi.powi(3) - m.powi(3)) / 3.0;
        }
        ThresholdIntegrals {
            e_max: beta * below + tail1,
            e_half_max_sq: 0.5 * (beta * beta * below + tail2),
        }
    }

    fn moments(&self) -> MomentSummary {
        let at_zero = self.threshold_integrals(0.0);
        MomentSummary {
            mean: at_zero.e_max,
            second_moment: 2.0 * at_zero.e_half_max_sq,
            upper_support: self.segments.last().map_or(0.0, |s| s.hi),
        }
    }
}

/// Discrete uniform distribution over observed delays.
///
/// Samples are kept sorted with prefix sums of `x` and `x²`, so threshold
/// integrals cost one binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        validate_samples(&samples)?;
        samples.sort_by(f64::total_cmp);
        let mut emp = EmpiricalDistribution {
            sorted: samples,
            prefix: vec![0.0],
            prefix_sq: vec![0.0],
        };
        emp.rebuild_prefix(0);
        if emp.sorted.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::invalid(
                "empirical samples must include a positive delay",
            ));
        }
        Ok(emp)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)?;
        let mut samples = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let Some(field) = record.get(0).map(str::trim) else {
                continue;
            };
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(x) => samples.push(x),
                Err(_) if line == 0 => {}
                Err(_) => {
                    return Err(Error::invalid(format!(
                        "{}: line {}: `{field}` is not a delay",
                        path.display(),
                        line + 1
                    )))
                }
            }
        }
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Merges a batch of new observations into the sorted sample set.
    pub fn absorb(&mut self, batch: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        validate_samples(batch)?;
        let mut batch = batch.to_vec();
        batch.sort_by(f64::total_cmp);
        let start = self.sorted.partition_point(|&x| x <= batch[0]);
        let tail: Vec<f64> = self.sorted.drain(start..).collect();
        let (mut i, mut j) = (0, 0);
        while i < tail.len() && j < batch.len() {
            if tail[i] <= batch[j] {
                self.sorted.push(tail[i]);
                i += 1;
            } else {
                self.sorted.push(batch[j]);
                j += 1;
            }
        }
        self.sorted.extend_from_slice(&tail[i..]);
        self.sorted.extend_from_slice(&batch[j..]);
        self.rebuild_prefix(start);
        Ok(())
    }

    fn rebuild_prefix(&mut self, start: usize) {
        self.prefix.truncate(start + 1);
        self.prefix_sq.truncate(start + 1);
        let (mut s1, mut s2) = (self.prefix[start], self.prefix_sq[start]);
        for &x in &self.sorted[start..] {
            s1 += x;
            s2 += x * x;
            self.prefix.push(s1);
            self.prefix_sq.push(s2);
        }
    }

    fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&s| s <= x)
    }

    fn moments(&self) -> MomentSummary {
        let n = self.len() as f64;
        let mean = self.sorted.iter().copied().collect::<KahanSum>().value() / n;
        let second = self
            .sorted
            .iter()
            .map(|x| x * x)
            .collect::<KahanSum>()
            .value()
            / n;
        MomentSummary {
            mean,
            second_moment: second,
            upper_support: *self.sorted.last().expect("nonempty"),
        }
    }
}

fn validate_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("empirical model needs at least one sample"));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::invalid(format!(
            "empirical delays must be finite and >= 0, got {bad}"
        )));
    }
    Ok(())
}

impl DelayDistribution for EmpiricalDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sorted[rng.random_range(0..self.sorted.len())]
    }

    fn cdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.len() as f64
    }

    fn quantile(&self, p: f64) -> f64 {
        let n = self.len();
        let idx = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[idx]
    }

    fn moments(&self) -> MomentSummary {
        EmpiricalDistribution::moments(self)
    }

    fn threshold_integrals(&self, beta: f64) -> ThresholdIntegrals {
        let n = self.len();
        let j = self.count_le(beta);
        let below = j as f64;
        let tail1 = self.prefix[n] - self.prefix[j];
        let tail2 = self.prefix_sq[n] - self.prefix_sq[j];
        ThresholdIntegrals {
            e_max: (beta * below + tail1) / n as f64,
            e_half_max_sq: 0.5 * (beta * beta * below + tail2) / n as f64,
        }
    }

    fn mean(&self) -> f64 {
        self.prefix[self.len()] / self.len() as f64
    }

    fn upper_support(&self) -> f64 {
        *self.sorted.last().expect("nonempty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn uniform_threshold_integrals_examples() {
        let u = DelayModel::uniform(0.0, 1.0).unwrap();
        let t0 = u.threshold_integrals(0.0);
        assert!(close(t0.e_max, 0.5, 1e-15) && close(t0.e_half_max_sq, 1.0 / 6.0, 1e-15));
        let t = u.threshold_integrals(0.5);
        assert!(close(t.e_max, 0.625, 1e-15));
        assert!(close(t.e_half_max_sq, 0.5 * (0.125 + 0.875 / 3.0), 1e-15));
        let t1 = u.threshold_integrals(1.0);
        assert_eq!((t1.e_max, t1.e_half_max_sq), (1.0, 0.5));
    }

    #[test]
    fn closed_form_moments() {
        let u = DelayModel::uniform(0.0, 1.0).unwrap().moments();
        assert_eq!(
            (u.mean, u.second_moment, u.upper_support),
            (0.5, 1.0 / 3.0, 1.0)
        );
        let d = DelayModel::deterministic(1.0).unwrap().moments();
        assert_eq!((d.mean, d.second_moment, d.upper_support), (1.0, 1.0, 1.0));
        let ln = DelayModel::lognormal(1.0, 1.3).unwrap().moments();
        assert!(close(ln.mean, (1.0f64 + 0.845).exp(), 1e-15));
        assert!(ln.upper_support.is_infinite());
    }

    #[test]
    fn lecam_mean_matches_piecewise_oracle() {
        let (delta, c, k) = (0.1611, 0.5, 100u32);
        let eps = c / f64::from(k).sqrt();
        let m = DelayModel::lecam(delta, c, k).unwrap();
        let expected = 0.5 + eps * (delta / 2.0) * (1.0 - delta / 2.0);
        assert!(close(m.moments().mean, expected, 1e-14));
        assert!(close(m.cdf(1.0), 1.0, 1e-15));
    }

    #[test]
    fn deterministic_sampling() {
        let d = DelayModel::deterministic(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == 1.0));
    }

    #[test]
    fn truncated_lognormal_respects_bound() {
        let m = DelayModel::lognormal_truncated(1.0, 1.3, Some(5.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| {
            let x = m.sample(&mut rng);
            (0.0..=5.0).contains(&x)
        }));
        assert_eq!(m.cdf(5.0), 1.0);
        assert_eq!(m.upper_support(), 5.0);
    }

    #[test]
    fn auto_truncation_is_the_percentile() {
        let m = DelayModel::lognormal_truncated(1.0, 1.3, None).unwrap();
        let b = m.upper_support();
        let untruncated = DelayModel::lognormal(1.0, 1.3).unwrap();
        assert!(close(untruncated.cdf(b), AUTO_TRUNCATION_PERCENTILE, 1e-12));
    }

    #[test]
    fn validation_errors() {
        assert!(DelayModel::uniform(1.0, 1.0).is_err());
        assert!(DelayModel::uniform(-0.5, 1.0).is_err());
        assert!(DelayModel::deterministic(0.0).is_err());
        assert!(DelayModel::lognormal(1.0, 0.0).is_err());
        assert!(DelayModel::lecam(1.0, 0.5, 100).is_err());
        assert!(DelayModel::lecam(0.2, 0.6, 100).is_err());
        assert!(DelayModel::lecam(0.2, 0.5, 0).is_err());
        assert!(DelayModel::empirical(vec![]).is_err());
        assert!(DelayModel::empirical(vec![0.0, 0.0]).is_err());
        assert!(DelayModel::empirical(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn json_roundtrip_and_tags() {
        let m: DelayModel =
            serde_json::from_str(r#"{"kind":"lognormal","mu":1,"sigma":1.3,"truncation":"auto"}"#)
                .unwrap();
        let back: DelayModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(
            serde_json::from_str::<DelayModel>(r#"{"kind":"uniform","a":0,"b":1,"x":2}"#).is_err()
        );
        assert!(serde_json::from_str::<DelayModel>(r#"{"kind":"uniform","a":1,"b":0}"#).is_err());
        let lc: DelayModel =
            serde_json::from_str(r#"{"kind":"lecam","delta":0.1,"c":0.5,"k":4}"#).unwrap();
        assert_eq!(lc.kind(), "lecam");
    }

    #[test]
    fn shorthand_parsing() {
        assert_eq!(
            "uniform:0,1".parse::<DelayModel>().unwrap(),
            DelayModel::uniform(0.0, 1.0).unwrap()
        );
        assert_eq!("deterministic:2".parse::<DelayModel>().unwrap().mean(), 2.0);
        let t = "lognormal:1,1.5,auto".parse::<DelayModel>().unwrap();
        assert!(t.upper_support().is_finite());
        assert!("lognormal:1".parse::<DelayModel>().is_err());
        assert!("uniform:0,1,2".parse::<DelayModel>().is_err());
        assert!("gamma:1,2".parse::<DelayModel>().is_err());
        assert!(r#"{"kind":"deterministic","d":3}"#.parse::<DelayModel>().is_ok());
    }

    #[test]
    fn empirical_absorb_matches_fresh_construction() {
        let mut emp = EmpiricalDistribution::new(vec![0.5, 0.1, 0.9]).unwrap();
        emp.absorb(&[0.3, 1.2, 0.05]).unwrap();
        let fresh = EmpiricalDistribution::new(vec![0.5, 0.1, 0.9, 0.3, 1.2, 0.05]).unwrap();
        assert_eq!(emp.samples(), fresh.samples());
        for beta in [0.0, 0.2, 0.5, 1.0, 2.0] {
            let (a, b) = (
                emp.threshold_integrals(beta),
                fresh.threshold_integrals(beta),
            );
            assert!(
                close(a.e_max, b.e_max, 1e-15) && close(a.e_half_max_sq, b.e_half_max_sq, 1e-15)
            );
        }
    }

    #[test]
    fn empirical_quantile_and_cdf() {
        let emp = EmpiricalDistribution::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(emp.quantile(0.0), 1.0);
        assert_eq!(emp.quantile(0.5), 2.0);
        assert_eq!(emp.quantile(0.51), 3.0);
        assert_eq!(emp.quantile(1.0), 4.0);
        assert_eq!(emp.cdf(2.5), 0.5);
    }

    #[test]
    fn empirical_csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("delays.csv");
        std::fs::write(&path, "delay\n0.5\n1.5\n\n2.0\n").unwrap();
        let m = DelayModel::empirical_from_csv(&path).unwrap();
        assert_eq!(m.mean(), 4.0 / 3.0);
        std::fs::write(&path, "0.5\nabc\n").unwrap();
        assert!(DelayModel::empirical_from_csv(&path).is_err());
    }
}
