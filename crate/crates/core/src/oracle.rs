//! Known-distribution optimum.
//!
//! The optimal policy waits `(β − d)⁺` after a delay `d`. Without a frequency
//! constraint `β = γ*`, the unique root of the nonincreasing function
//! `ḡ(γ) = E[½·max{γ,D}²] − γ·E[max{γ,D}]`, and the optimal average age is
//! `γ* + D̄`. When the mean cycle length must be at least `1/f_max` and the
//! unconstrained threshold violates it, `β` is raised until the constraint
//! binds and the dual variable `ν* = β − γ*` becomes positive.

use serde::{Deserialize, Serialize};

use crate::delay::DelayDistribution;
use crate::error::{Error, Result};
use crate::numeric::bisect_nonincreasing;

/// Default bracket width for every bisection.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 200;
/// Each bracket endpoint may be pushed out by up to `2^6`.
const BRACKET_EXPANSIONS: u32 = 6;
/// Tail probability used to cap the constrained search on unbounded support.
const SEARCH_TAIL: f64 = 1e-12;

/// Interval known to contain `γ*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub gamma_lb: f64,
    pub gamma_ub: f64,
}

/// Known-distribution optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub gamma_star: f64,
    pub nu_star: f64,
    /// Waiting threshold `γ* + ν*`.
    pub beta: f64,
    /// `E[max{β, D}]`.
    pub mean_cycle_length: f64,
    /// Optimal average age `γ* + D̄`.
    pub aoi_star: f64,
    /// `None` when the frequency constraint is disabled.
    pub f_max: Option<f64>,
}

impl OracleSolution {
    /// `ν*·(E[max{β,D}] − 1/f_max)`, zero at an optimum.
    pub fn slackness_residual(&self) -> f64 {
        match self.f_max {
            Some(f) => self.nu_star * (self.mean_cycle_length - 1.0 / f),
            None => 0.0,
        }
    }
}

/// `1/f_max`, with `f_max = ∞` mapped to 0.
pub fn inverse_rate(f_max: f64) -> Result<f64> {
    if !(f_max > 0.0) {
        return Err(Error::invalid(format!(
            "f_max must be > 0 (or infinite), got {f_max}"
        )));
    }
    Ok(if f_max.is_infinite() {
        0.0
    } else {
        1.0 / f_max
    })
}

/// `ḡ(γ) = E[½·max{γ,D}²] − γ·E[max{γ,D}]`.
///
/// Continuous and nonincreasing; its derivative is `−E[max{γ, D}]`.
pub fn g_bar<D: DelayDistribution + ?Sized>(model: &D, gamma: f64) -> f64 {
    let t = model.threshold_integrals(gamma);
    t.e_half_max_sq - gamma * t.e_max
}

/// Bracket for `γ*` from moment bounds.
///
/// `γ_lb = ½·D_lb` and
/// `γ_ub = (½·M_ub + D_ub/f + ½/f²) / (D_lb + 1/f)`, which is `½·M_ub/D_lb`
/// when `f_max` is infinite.
pub fn gamma_bounds(d_lb: f64, d_ub: f64, m_lb: f64, m_ub: f64, f_max: f64) -> Result<GammaBounds> {
    if !(d_lb > 0.0 && d_lb <= d_ub && d_ub.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < D_lb <= D_ub, got D_lb={d_lb}, D_ub={d_ub}"
        )));
    }
    if !(m_lb > 0.0 && m_lb <= m_ub && m_ub.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < M_lb <= M_ub, got M_lb={m_lb}, M_ub={m_ub}"
        )));
    }
    let inv = inverse_rate(f_max)?;
    let gamma_lb = 0.5 * d_lb;
    let gamma_ub = (0.5 * m_ub + d_ub * inv + 0.5 * inv * inv) / (d_lb + inv);
    // Equal to gamma_lb for a point mass, where rounding can put it one ulp below.
    Ok(GammaBounds {
        gamma_lb,
        gamma_ub: gamma_ub.max(gamma_lb),
    })
}

/// `γ*` by bisection on the bracket built from the model's exact moments.
pub fn solve_unconstrained<D: DelayDistribution + ?Sized>(model: &D, tol: f64) -> Result<f64> {
    let m = model.moments();
    let bounds = gamma_bounds(
        m.mean,
        m.mean,
        m.second_moment,
        m.second_moment,
        f64::INFINITY,
    )?;
    solve_unconstrained_within(model, bounds, tol)
}

/// `γ*` by bisection on a caller-supplied bracket.
///
/// A bracket that fails to straddle the root is widened geometrically (at
/// most `2^6` on each side) before giving up with [`Error::NotBracketed`].
pub fn solve_unconstrained_within<D: DelayDistribution + ?Sized>(
    model: &D,
    bounds: GammaBounds,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    let (mut lo, mut hi) = (bounds.gamma_lb.max(0.0), bounds.gamma_ub);
    if !(hi >= lo) {
        return Err(Error::invalid(format!("empty bracket [{lo}, {hi}]")));
    }
    let (mut g_lo, mut g_hi) = (g_bar(model, lo), g_bar(model, hi));
    for _ in 0..BRACKET_EXPANSIONS {
        if g_lo >= -tol && g_hi <= tol {
            break;
        }
        if g_lo < -tol {
            lo *= 0.5;
            g_lo = g_bar(model, lo);
        }
        if g_hi > tol {
            hi *= 2.0;
            g_hi = g_bar(model, hi);
        }
    }
    if !(g_lo >= -tol && g_hi <= tol) {
        return Err(Error::NotBracketed { lo, hi, g_lo, g_hi });
    }
    Ok(bisect_nonincreasing(
        |g| g_bar(model, g),
        lo,
        hi,
        tol,
        MAX_ITER,
    ))
}

/// Optimum under the sampling-frequency constraint `E[L] >= 1/f_max`.
///
/// Pass `f64::INFINITY` to disable the constraint.
pub fn solve_constrained<D: DelayDistribution + ?Sized>(
    model: &D,
    f_max: f64,
    tol: f64,
) -> Result<OracleSolution> {
    let inv = inverse_rate(f_max)?;
    let f_opt = (inv > 0.0).then_some(f_max);
    let mean = model.mean();
    let gamma_u = solve_unconstrained(model, tol)?;
    let length_u = model.threshold_integrals(gamma_u).e_max;
    if length_u >= inv {
        return Ok(OracleSolution {
            gamma_star: gamma_u,
            nu_star: 0.0,
            beta: gamma_u,
            mean_cycle_length: length_u,
            aoi_star: gamma_u + mean,
            f_max: f_opt,
        });
    }

    let m = model.moments();
    let ub = gamma_bounds(m.mean, m.mean, m.second_moment, m.second_moment, f_max)?.gamma_ub;
    let support = if m.upper_support.is_finite() {
        m.upper_support
    } else {
        model.quantile(1.0 - SEARCH_TAIL)
    };
    let cap = ub + inv + support;
    let attainable = model.threshold_integrals(cap).e_max;
    if !(attainable >= inv) {
        return Err(Error::Infeasible {
            required: inv,
            attainable,
            cap,
        });
    }
    let beta = bisect_nonincreasing(
        |b| inv - model.threshold_integrals(b).e_max,
        gamma_u,
        cap,
        tol,
        MAX_ITER,
    );
    let t = model.threshold_integrals(beta);
    let gamma_star = t.e_half_max_sq / t.e_max;
    Ok(OracleSolution {
        gamma_star,
        nu_star: beta - gamma_star,
        beta,
        mean_cycle_length: t.e_max,
        aoi_star: gamma_star + mean,
        f_max: f_opt,
    })
}

/// Average age of the stationary policy `π(d) = (β − d)⁺`.
pub fn stationary_policy_aoi<D: DelayDistribution + ?Sized>(model: &D, beta: f64) -> f64 {
    let t = model.threshold_integrals(beta);
    t.e_half_max_sq / t.e_max + model.mean()
}

/// Average age of the policy that always waits `wait`.
pub fn constant_wait_aoi<D: DelayDistribution + ?Sized>(model: &D, wait: f64) -> f64 {
    let m = model.moments();
    let num = 0.5 * m.second_moment + wait * m.mean + 0.5 * wait * wait;
    num / (m.mean + wait) + m.mean
}

/// `(β, average age)` on an even grid of `points` thresholds in `[0, beta_max]`.
pub fn aoi_curve<D: DelayDistribution + ?Sized>(
    model: &D,
    beta_max: f64,
    points: usize,
) -> Vec<(f64, f64)> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let beta = beta_max * i as f64 / (points - 1) as f64;
            (beta, stationary_policy_aoi(model, beta))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayModel;

    const CUBIC_ROOT: f64 = 0.322_185_354_626_085_6;

    fn uniform() -> DelayModel {
        DelayModel::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn point_mass_bracket_survives_rounding() {
        let d = 3.269582382881209;
        let model = DelayModel::deterministic(d).unwrap();
        let m = model.moments();
        let b = gamma_bounds(
            m.mean,
            m.mean,
            m.second_moment,
            m.second_moment,
            f64::INFINITY,
        )
        .unwrap();
        assert!(b.gamma_ub >= b.gamma_lb);
        assert!((solve_unconstrained(&model, DEFAULT_TOL).unwrap() - 0.5 * d).abs() < 1e-9);
        let sol = solve_constrained(&model, 1.0 / (0.2 * d), DEFAULT_TOL).unwrap();
        assert_eq!(sol.nu_star, 0.0);
    }

    #[test]
    fn g_bar_examples() {
        let u = uniform();
        assert!((g_bar(&u, 0.25) - 0.0390625).abs() < 1e-15);
        assert!((g_bar(&u, 0.5) - (0.875 / 6.0 + 0.0625 - 0.3125)).abs() < 1e-15);
        assert!((g_bar(&u, 0.5) + 0.1041667).abs() < 1e-7);
        assert_eq!(g_bar(&DelayModel::deterministic(1.0).unwrap(), 0.5), 0.0);
    }

    #[test]
    fn gamma_bounds_examples() {
        let b = gamma_bounds(0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, f64::INFINITY).unwrap();
        assert_eq!(b.gamma_lb, 0.25);
        assert!((b.gamma_ub - 1.0 / 3.0).abs() < 1e-15);
        let c = gamma_bounds(0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0).unwrap();
        assert!((c.gamma_ub - (1.0 / 6.0 + 1.0) / 1.5).abs() < 1e-15);
        assert!((c.gamma_ub - 0.777778).abs() < 1e-6);
        let d = gamma_bounds(1.0, 1.0, 1.0, 1.0, f64::INFINITY).unwrap();
        assert_eq!((d.gamma_lb, d.gamma_ub), (0.5, 0.5));
    }

    #[test]
    fn gamma_bounds_rejects_bad_orderings() {
        assert!(gamma_bounds(0.0, 1.0, 1.0, 1.0, f64::INFINITY).is_err());
        assert!(gamma_bounds(2.0, 1.0, 1.0, 1.0, f64::INFINITY).is_err());
        assert!(gamma_bounds(1.0, 1.0, 2.0, 1.0, f64::INFINITY).is_err());
        assert!(gamma_bounds(1.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn unconstrained_examples() {
        let g = solve_unconstrained(&uniform(), DEFAULT_TOL).unwrap();
        assert!((g - CUBIC_ROOT).abs() < 1e-9);
        assert!((g * g * g + 3.0 * g - 1.0).abs() < 1e-9);
        for d in [0.1, 1.0, 7.5] {
            let det = DelayModel::deterministic(d).unwrap();
            assert!((solve_unconstrained(&det, DEFAULT_TOL).unwrap() - d / 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn loose_bounds_are_expanded_then_rejected() {
        let u = uniform();
        let tight = GammaBounds {
            gamma_lb: 0.33,
            gamma_ub: 0.34,
        };
        let g = solve_unconstrained_within(&u, tight, DEFAULT_TOL).unwrap();
        assert!((g - CUBIC_ROOT).abs() < 1e-9);
        let far = GammaBounds {
            gamma_lb: 50.0,
            gamma_ub: 60.0,
        };
        let err = solve_unconstrained_within(&u, far, DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, Error::NotBracketed { .. }), "{err}");
        assert!(err.to_string().contains("needs >= 0"));
    }

    #[test]
    fn constrained_examples() {
        let u = uniform();
        let s = solve_constrained(&u, 1.0, DEFAULT_TOL).unwrap();
        assert!((s.beta - 1.0).abs() < 1e-9);
        assert!((s.gamma_star - 0.5).abs() < 1e-9);
        assert!((s.nu_star - 0.5).abs() < 1e-9);
        assert!((s.aoi_star - 1.0).abs() < 1e-9);
        assert!(s.slackness_residual().abs() <= 1e-9);

        let slack = solve_constrained(&u, 10.0, DEFAULT_TOL).unwrap();
        assert_eq!(slack.nu_star, 0.0);
        assert!((slack.gamma_star - CUBIC_ROOT).abs() < 1e-9);
        assert!((slack.mean_cycle_length - 0.5519).abs() < 1e-4);

        let det = solve_constrained(
            &DelayModel::deterministic(1.0).unwrap(),
            f64::INFINITY,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!((det.gamma_star - 0.5).abs() < 1e-10);
        assert_eq!(det.nu_star, 0.0);
        assert!((det.aoi_star - 1.5).abs() < 1e-10);
        assert_eq!(det.f_max, None);
    }

    #[test]
    fn constrained_optimality_condition_holds() {
        let u = uniform();
        for f_max in [0.5, 1.0, 1.5, 1.8] {
            let s = solve_constrained(&u, f_max, DEFAULT_TOL).unwrap();
            let t = u.threshold_integrals(s.beta);
            let residual = t.e_half_max_sq - s.gamma_star * t.e_max;
            assert!(residual.abs() < 1e-12);
            assert!(s.nu_star > 0.0);
            assert!((s.mean_cycle_length - 1.0 / f_max).abs() <= DEFAULT_TOL);
        }
    }

    #[test]
    fn stationary_policy_examples() {
        let u = uniform();
        assert!((stationary_policy_aoi(&u, 0.0) - 5.0 / 6.0).abs() < 1e-15);
        let at_opt = stationary_policy_aoi(&u, CUBIC_ROOT);
        assert!((at_opt - 0.822185).abs() < 1e-6);
        assert!(at_opt <= 5.0 / 6.0);
        let det = DelayModel::deterministic(1.0).unwrap();
        assert_eq!(stationary_policy_aoi(&det, 0.5), 1.5);
    }

    #[test]
    fn constant_wait_comparator() {
        assert!((constant_wait_aoi(&uniform(), 0.5) - 25.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(solve_constrained(&uniform(), 0.0, DEFAULT_TOL).is_err());
        assert!(solve_constrained(&uniform(), -1.0, DEFAULT_TOL).is_err());
        assert!(solve_unconstrained(&uniform(), 0.0).is_err());
    }
}
