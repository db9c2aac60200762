//! Cycle-level age accounting.
//!
//! Cycle `k` runs from sampling instant `S_k` to `S_{k+1} = S_k + D_k + W_k`.
//! Its age area is a parallelogram (the previous cycle's length times the
//! current delay) plus a triangle on the current cycle length. A virtual update
//! generated and delivered at `t = 0` fixes `S_1 = 0`, `L_0 = 0`, `A(0) = 0`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::KahanSum;

/// Age area accrued over one cycle: `prev_length·delay + ½(delay + wait)²`.
pub fn cycle_area(prev_length: f64, delay: f64, wait: f64) -> f64 {
    let length = delay + wait;
    prev_length * delay + 0.5 * length * length
}

/// Age area from `S_k` to `S_k + tau` for `0 <= tau <= L_k`.
pub fn partial_cycle_area(prev_length: f64, delay: f64, tau: f64) -> f64 {
    prev_length * tau.min(delay) + 0.5 * tau * tau
}

/// One sampling cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub k: u64,
    pub delay: f64,
    pub wait: f64,
    pub length: f64,
    pub reward: f64,
    pub area: f64,
    pub sample_time: f64,
    pub reception_time: f64,
    /// Threshold estimate used in this cycle (online policy only).
    pub gamma: Option<f64>,
    /// Frequency debt at the start of this cycle (online policy only).
    pub debt: Option<f64>,
    /// Cumulative area over cumulative length through this cycle.
    pub cum_ratio: f64,
}

impl CycleRecord {
    /// End of the cycle, `S_{k+1}`.
    pub fn next_sample_time(&self) -> f64 {
        self.reception_time + self.wait
    }
}

/// Streaming cycle builder with compensated running sums.
#[derive(Debug, Clone, Default)]
pub struct CycleAccumulator {
    cycles: u64,
    clock: f64,
    prev_length: f64,
    area: KahanSum,
    length: KahanSum,
}

impl CycleAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends cycle `k + 1` with the given delay and wait.
    pub fn advance(&mut self, delay: f64, wait: f64, learner: Option<(f64, f64)>) -> CycleRecord {
        debug_assert!(delay >= 0.0 && wait >= 0.0);
        let length = delay + wait;
        let area = cycle_area(self.prev_length, delay, wait);
        let sample_time = self.clock;
        self.cycles += 1;
        self.area.add(area);
        self.length.add(length);
        self.clock = sample_time + length;
        self.prev_length = length;
        let total_length = self.length.value();
        CycleRecord {
            k: self.cycles,
            delay,
            wait,
            length,
            reward: 0.5 * length * length,
            area,
            sample_time,
            reception_time: sample_time + delay,
            gamma: learner.map(|(g, _)| g),
            debt: learner.map(|(_, u)| u),
            cum_ratio: if total_length > 0.0 {
                self.area.value() / total_length
            } else {
                0.0
            },
        }
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// `S_{K+1}`: the time at which the next sample would be taken.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn prev_length(&self) -> f64 {
        self.prev_length
    }

    pub fn total_area(&self) -> f64 {
        self.area.value()
    }

    pub fn total_length(&self) -> f64 {
        self.length.value()
    }

    pub fn aoi_ratio(&self) -> Result<f64> {
        if self.cycles == 0 {
            return Err(Error::EmptyTrajectory);
        }
        let length = self.total_length();
        if length <= 0.0 {
            return Err(Error::invalid("trajectory has zero total length"));
        }
        Ok(self.total_area() / length)
    }

    /// `(1/K)·Σ X_k − (γ* + D̄)·(1/K)·Σ L_k`.
    pub fn theta(&self, gamma_star: f64, mean_delay: f64) -> Result<f64> {
        if self.cycles == 0 {
            return Err(Error::EmptyTrajectory);
        }
        let k = self.cycles as f64;
        Ok(self.total_area() / k - (gamma_star + mean_delay) * self.total_length() / k)
    }

    /// Mean sampling interval `S_{K+1}/K`.
    pub fn mean_interval(&self) -> Result<f64> {
        if self.cycles == 0 {
            return Err(Error::EmptyTrajectory);
        }
        Ok(self.clock / self.cycles as f64)
    }
}

/// A fully recorded sequence of cycles `1..=K`.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    records: Vec<CycleRecord>,
    acc: CycleAccumulator,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trajectory from `(delay, wait)` pairs.
    pub fn from_cycles<I>(cycles: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut t = Trajectory::new();
        for (d, w) in cycles {
            if !(d >= 0.0 && w >= 0.0 && d.is_finite() && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "cycle needs finite delay, wait >= 0; got ({d}, {w})"
                )));
            }
            t.push(d, w, None);
        }
        Ok(t)
    }

    pub fn push(&mut self, delay: f64, wait: f64, learner: Option<(f64, f64)>) -> &CycleRecord {
        let record = self.acc.advance(delay, wait, learner);
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[CycleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accumulator(&self) -> &CycleAccumulator {
        &self.acc
    }

    pub fn total_area(&self) -> f64 {
        self.acc.total_area()
    }

    pub fn total_length(&self) -> f64 {
        self.acc.total_length()
    }

    /// `S_{K+1}`.
    pub fn horizon(&self) -> f64 {
        self.acc.clock()
    }

    /// `Σ X_k / Σ L_k`.
    pub fn aoi_ratio(&self) -> Result<f64> {
        self.acc.aoi_ratio()
    }

    pub fn theta_diagnostic(&self, gamma_star: f64, mean_delay: f64) -> Result<f64> {
        self.acc.theta(gamma_star, mean_delay)
    }

    pub fn mean_interval(&self) -> Result<f64> {
        self.acc.mean_interval()
    }

    /// `∫₀ᵗ A(s) ds`, integrated piecewise between reception instants.
    ///
    /// Uses only the timestamps: on `[R_j, R_{j+1})` the age is `s − S_j`,
    /// with `R_0 = S_0 = 0` for the virtual initial update.
    pub fn sample_path_integral(&self, t: f64) -> Result<f64> {
        if self.records.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(Error::OutsideHorizon { t, horizon });
        }
        let segment = |from: f64, to: f64, origin: f64| {
            0.5 * ((to - origin).powi(2) - (from - origin).powi(2))
        };
        let mut total = KahanSum::new();
        let (mut seg_start, mut origin) = (0.0, 0.0);
        for r in &self.records {
            if r.reception_time >= t {
                break;
            }
            total.add(segment(seg_start, r.reception_time, origin));
            seg_start = r.reception_time;
            origin = r.sample_time;
        }
        total.add(segment(seg_start, t, origin));
        Ok(total.value())
    }

    /// Time-average age `(1/t)·∫₀ᵗ A(s) ds` for `0 < t <= S_{K+1}`.
    pub fn time_average_aoi(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::OutsideHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(self.sample_path_integral(t)? / t)
    }

    /// Writes the trajectory CSV, keeping every `every`-th cycle and the last.
    pub fn write_csv<W: Write>(&self, writer: W, every: u64) -> Result<()> {
        write_records_csv(writer, thinned(&self.records, every))
    }
}

/// Records with `k % every == 0`, plus the final record.
pub fn thinned(records: &[CycleRecord], every: u64) -> impl Iterator<Item = &CycleRecord> + '_ {
    let every = every.max(1);
    let last = records.last().map(|r| r.k);
    records
        .iter()
        .filter(move |r| r.k % every == 0 || Some(r.k) == last)
}

/// CSV with columns `k,D,W,L,Q,X,S,R,gamma,U,cum_ratio`.
pub fn write_records_csv<'a, W, I>(writer: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a CycleRecord>,
{
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "k",
        "D",
        "W",
        "L",
        "Q",
        "X",
        "S",
        "R",
        "gamma",
        "U",
        "cum_ratio",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        out.write_record([
            r.k.to_string(),
            r.delay.to_string(),
            r.wait.to_string(),
            r.length.to_string(),
            r.reward.to_string(),
            r.area.to_string(),
            r.sample_time.to_string(),
            r.reception_time.to_string(),
            opt(r.gamma),
            opt(r.debt),
            r.cum_ratio.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_area_matches_full_cycle_and_path_integral() {
        assert_eq!(partial_cycle_area(2.0, 1.0, 1.5), cycle_area(2.0, 1.0, 0.5));
        let t = Trajectory::from_cycles([(1.0, 0.5), (0.7, 0.0), (0.2, 1.1)]).unwrap();
        let r = t.records()[2];
        for tau in [0.0, 0.1, 0.2, 0.9, 1.3] {
            let direct = t.records()[..2].iter().map(|r| r.area).sum::<f64>()
                + partial_cycle_area(t.records()[1].length, r.delay, tau);
            let path = t.sample_path_integral(r.sample_time + tau).unwrap();
            assert!(
                (direct - path).abs() < 1e-12,
                "tau {tau}: {direct} vs {path}"
            );
        }
    }

    #[test]
    fn cycle_area_examples() {
        assert_eq!(cycle_area(0.0, 1.0, 0.0), 0.5);
        assert_eq!(cycle_area(2.0, 1.0, 0.5), 3.125);
        assert_eq!(cycle_area(7.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn ratio_examples() {
        let one = Trajectory::from_cycles([(1.0, 0.0)]).unwrap();
        assert_eq!(one.aoi_ratio().unwrap(), 0.5);
        let two = Trajectory::from_cycles([(1.0, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!(two.aoi_ratio().unwrap(), 1.0);
        let hundred = Trajectory::from_cycles(std::iter::repeat_n((1.0, 0.0), 100)).unwrap();
        assert!((hundred.aoi_ratio().unwrap() - 1.49).abs() < 1e-12);
    }

    #[test]
    fn empty_trajectory_errors() {
        let t = Trajectory::new();
        assert!(matches!(t.aoi_ratio(), Err(Error::EmptyTrajectory)));
        assert!(matches!(
            t.theta_diagnostic(0.3, 0.5),
            Err(Error::EmptyTrajectory)
        ));
        assert!(t.time_average_aoi(1.0).is_err());
    }

    #[test]
    fn record_invariants() {
        let t = Trajectory::from_cycles([(1.0, 0.5), (0.2, 0.0), (3.0, 1.0)]).unwrap();
        let r = t.records();
        assert_eq!(r[0].sample_time, 0.0);
        for w in r.windows(2) {
            assert_eq!(w[1].sample_time, w[0].reception_time + w[0].wait);
            assert_eq!(w[1].area, w[0].length * w[1].delay + w[1].reward);
        }
        for c in r {
            assert_eq!(c.length, c.delay + c.wait);
            assert_eq!(c.reward, 0.5 * c.length * c.length);
            assert_eq!(c.reception_time, c.sample_time + c.delay);
        }
        assert_eq!(t.horizon(), t.total_length());
    }

    #[test]
    fn time_average_at_horizon_equals_ratio() {
        let t = Trajectory::from_cycles([(1.0, 0.5), (0.2, 0.0), (3.0, 1.0)]).unwrap();
        let h = t.horizon();
        assert!((t.time_average_aoi(h).unwrap() - t.aoi_ratio().unwrap()).abs() < 1e-14);
        assert!(matches!(
            t.time_average_aoi(h + 1e-9),
            Err(Error::OutsideHorizon { .. })
        ));
        assert!(t.time_average_aoi(0.0).is_err());
    }

    #[test]
    fn time_average_near_zero() {
        let t = Trajectory::from_cycles([(1.0, 0.0), (1.0, 0.0)]).unwrap();
        // A(s) = s on [0, 1): the average over [0, t] is t/2.
        assert!((t.time_average_aoi(1e-6).unwrap() - 5e-7).abs() < 1e-18);
    }

    #[test]
    fn time_average_matches_riemann_sum() {
        let t = Trajectory::from_cycles([(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]).unwrap();
        let horizon = 2.0;
        let step = 1e-4;
        let n = (horizon / step) as usize;
        // Midpoint rule on A(s) rebuilt from the definition: s − S_{i(s)}.
        let age = |s: f64| {
            let latest = t.records().iter().rfind(|r| r.reception_time <= s);
            s - latest.map_or(0.0, |r| r.sample_time)
        };
        let riemann: f64 = (0..n)
            .map(|i| age((i as f64 + 0.5) * step) * step)
            .sum::<f64>()
            / horizon;
        let exact = t.time_average_aoi(horizon).unwrap();
        assert!((exact - riemann).abs() < 1e-6, "{exact} vs {riemann}");
        assert!((exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_identity() {
        let t = Trajectory::from_cycles([(0.3, 0.2), (0.9, 0.0), (0.1, 0.4)]).unwrap();
        let mean_delay = 0.5;
        let gamma = t.aoi_ratio().unwrap() - mean_delay;
        assert!(t.theta_diagnostic(gamma, mean_delay).unwrap().abs() < 1e-15);
    }

    #[test]
    fn csv_thinning_keeps_last() {
        let t = Trajectory::from_cycles(std::iter::repeat_n((1.0, 0.0), 7)).unwrap();
        let ks: Vec<u64> = thinned(t.records(), 3).map(|r| r.k).collect();
        assert_eq!(ks, vec![3, 6, 7]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,D,W,L,Q,X,S,R,gamma,U,cum_ratio\n3,1,0,1,0.5,1.5,2,3,,,"));
        assert_eq!(text.lines().count(), 4);
    }
}
