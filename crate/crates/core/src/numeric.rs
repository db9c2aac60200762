//! Small numerical kernels: compensated summation, adaptive Simpson
//! quadrature and bisection on monotone functions.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

const SIMPSON_MAX_DEPTH: u32 = 40;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into `panels` equal pieces so that narrow peaks
/// are not missed by the coarse initial estimate.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    if !(b > a) {
        return 0.0;
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    let mut total = KahanSum::new();
    for i in 0..panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == panels { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total.add(simpson_step(
            &f, lo, hi, flo, fmid, fhi, whole, panel_tol, 0,
        ));
    }
    total.value()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth >= SIMPSON_MAX_DEPTH || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
}

/// Root of a nonincreasing function with `f(lo) >= 0 >= f(hi)`, by bisection
/// until the bracket is narrower than `tol` or `max_iter` halvings were done.
///
/// Returns the midpoint of the final bracket.
pub fn bisect_nonincreasing<F>(f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if value == 0.0 {
            return mid;
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = KahanSum::new();
        acc.add(1.0);
        for _ in 0..1_000_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-10)).abs() < 1e-22);
    }

    #[test]
    fn simpson_polynomial_and_gaussian() {
        let cubic = adaptive_simpson(|x| x * x * x - x, 0.0, 2.0, 1e-12, 1);
        assert!((cubic - 2.0).abs() < 1e-12);

        let gauss = adaptive_simpson(
            |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -12.0,
            12.0,
            1e-14,
            16,
        );
        assert!((gauss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_empty_interval() {
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-9, 4), 0.0);
        assert_eq!(adaptive_simpson(|x| x, 2.0, 1.0, 1e-9, 4), 0.0);
    }

    #[test]
    fn bisection_on_decreasing_line() {
        let root = bisect_nonincreasing(|x| 0.3 - x, 0.0, 1.0, 1e-12, 200);
        assert!((root - 0.3).abs() < 1e-12);
    }
}
