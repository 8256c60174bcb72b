//! Stationary law of the one-site model with additions uniform on `[0, b]`.
//!
//! With `y = h / b` and `m = ceil(y) - 1`,
//!
//! ```text
//! F(h) = f0 * sum_{k=0}^{m} (-1)^k / (b^k k!) * (h - k b)^k * e^{(h - k b) / b},   0 < h <= 1
//! ```
//!
//! `F(0) = f0` is the atom at zero and `f0` is fixed by `F(1) = 1`. The law
//! solves the delay equation
//!
//! ```text
//! F(h) = (1/b) * int_0^{min(h, b)} F(h - u) du + F(0)
//! ```
//!
//! and has a density with a jump of size `f0 / b` at `h = b`.

mod quad;
mod series;

use num_bigint::BigInt;
use serde::Serialize;

use crate::error::{Result, SandpileError};
use crate::rng::SimRng;

pub use quad::{adaptive_simpson, integrate_piecewise};
use series::SeriesEvaluator;

/// Closed-form evaluator for the one-site distribution function and density.
#[derive(Debug, Clone)]
pub struct OneSiteDistribution {
    b: f64,
    f0: f64,
    ln_s_one: f64,
    ev: SeriesEvaluator,
}

impl OneSiteDistribution {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(SandpileError::InvalidParams(format!(
                "need 0 < b <= 1, got b = {b}"
            )));
        }
        let y_max = 1.0 / b;
        let ev = SeriesEvaluator::new(y_max);
        let y = ev.ratio(1.0, b);
        let ln_s_one = ev.ln(&ev.s(&y, terms_left(y_max)));
        let f0 = (-y_max - ln_s_one).exp();
        Ok(OneSiteDistribution {
            b,
            f0,
            ln_s_one,
            ev,
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Mass of the atom at zero.
    pub fn f0(&self) -> f64 {
        self.f0
    }

    fn y(&self, h: f64) -> BigInt {
        self.ev.ratio(h, self.b)
    }

    /// `ln(F(h) / f0)` minus `h / b`, i.e. `ln S(h / b)`.
    fn ln_s(&self, h: f64) -> f64 {
        let m = terms_left(h / self.b);
        self.ev.ln(&self.ev.s(&self.y(h), m))
    }

    pub fn cdf(&self, h: f64) -> f64 {
        if h < 0.0 {
            return 0.0;
        }
        if h >= 1.0 {
            return 1.0;
        }
        if h == 0.0 {
            return self.f0;
        }
        let y = h / self.b;
        if y <= 1.0 {
            return self.f0 * y.exp();
        }
        ((h - 1.0) / self.b + self.ln_s(h) - self.ln_s_one).exp()
    }

    /// Left and right limits of the density at `h`. They differ only at `h = b`.
    pub fn pdf_limits(&self, h: f64) -> (f64, f64) {
        (self.density(h, false), self.density(h, true))
    }

    /// The density, taken right-continuous. Zero outside `(0, 1)`.
    pub fn pdf(&self, h: f64) -> f64 {
        if h >= 1.0 {
            return self.density(h, false);
        }
        self.density(h, true)
    }

    fn density(&self, h: f64, right: bool) -> f64 {
        if !(0.0..=1.0).contains(&h) || (h == 0.0 && !right) || (h == 1.0 && right) {
            return 0.0;
        }
        self.branch_density(h, right)
    }

    /// Derivative of the closed form on the branch left or right of `h`,
    /// without clipping to the support.
    fn branch_density(&self, h: f64, right: bool) -> f64 {
        let y = h / self.b;
        let m = if right {
            y.floor() as u64
        } else {
            terms_left(y)
        };
        if m == 0 {
            return self.f0 / self.b * y.exp();
        }
        let sp = self.ev.s_prime(&self.y(h), m);
        if sp <= BigInt::ZERO {
            return 0.0;
        }
        ((h - 1.0) / self.b + self.ev.ln(&sp) - self.ln_s_one).exp() / self.b
    }

    /// Points where the closed form changes branch: `b, 2b, ...` below one.
    pub fn breakpoints(&self) -> Vec<f64> {
        (1..)
            .map(|k| k as f64 * self.b)
            .take_while(|&p| p < 1.0)
            .collect()
    }
}

/// `ceil(y) - 1`, the index of the last series term at `y`.
fn terms_left(y: f64) -> u64 {
    (y.ceil() as u64).saturating_sub(1)
}

pub fn onesite_cdf(d: &OneSiteDistribution, h: f64) -> f64 {
    d.cdf(h)
}

pub fn onesite_pdf(d: &OneSiteDistribution, h: f64) -> f64 {
    d.pdf(h)
}

/// How far the closed form is from solving the delay equation at `h`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DelayResidual {
    pub h: f64,
    /// `F(h)` minus the right side of the integral equation.
    pub integral_form: f64,
    /// `f(h) - (F(h) - F(h - b)) / b`, only for `b <= h <= 1`.
    pub differential_form: Option<f64>,
}

/// Absolute tolerance handed to the quadrature.
pub const QUADRATURE_TOL: f64 = 1e-9;

pub fn onesite_delay_residual(d: &OneSiteDistribution, h: f64) -> DelayResidual {
    let b = d.b;
    let f = |s: f64| d.cdf(s);
    let lo = (h - b).max(0.0);
    let integral = if h <= 0.0 {
        0.0
    } else {
        integrate_piecewise(&f, lo, h, &d.breakpoints(), QUADRATURE_TOL * b)
    };
    let integral_form = d.cdf(h) - (integral / b + d.f0);
    let differential_form =
        (h >= b && h <= 1.0).then(|| d.branch_density(h, true) - (d.cdf(h) - d.cdf(h - b)) / b);
    DelayResidual {
        h,
        integral_form,
        differential_form,
    }
}

/// Monte Carlo estimate of `F(h)` from the renewal representation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RenewalEstimate {
    pub h: f64,
    pub estimate: f64,
    /// Delta-method standard error of the ratio of means.
    pub std_error: f64,
    pub numerator_mean: f64,
    pub denominator_mean: f64,
}

/// Estimate `(E N(h/b) + 1) / (E N(1/b) + 1)` where `N(s)` counts the partial
/// sums of uniform `[0, 1]` increments that stay at or below `s`.
pub fn renewal_oracle(b: f64, h: f64, samples: u64, rng: &mut SimRng) -> Result<RenewalEstimate> {
    renewal_oracle_grid(b, &[h], samples, rng).map(|mut v| v.remove(0))
}

/// Same as [`renewal_oracle`] for several `h`, sharing one set of renewal paths.
pub fn renewal_oracle_grid(
    b: f64,
    hs: &[f64],
    samples: u64,
    rng: &mut SimRng,
) -> Result<Vec<RenewalEstimate>> {
    if samples == 0 {
        return Err(SandpileError::InsufficientSamples);
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(SandpileError::InvalidParams(format!(
            "need 0 < b <= 1, got b = {b}"
        )));
    }
    let horizon = 1.0 / b;
    let levels: Vec<f64> = hs
        .iter()
        .map(|&h| if h >= 1.0 { horizon } else { h.max(0.0) / b })
        .collect();
    let k = hs.len();
    let (mut sx, mut sxx, mut sxy) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let (mut sy, mut syy) = (0.0, 0.0);
    let mut path = Vec::new();
    for _ in 0..samples {
        path.clear();
        let mut s = rng.unit();
        while s <= horizon {
            path.push(s);
            s += rng.unit();
        }
        let y = path.len() as f64 + 1.0;
        sy += y;
        syy += y * y;
        for (i, &level) in levels.iter().enumerate() {
            let x = path.partition_point(|&p| p <= level) as f64 + 1.0;
            sx[i] += x;
            sxx[i] += x * x;
            sxy[i] += x * y;
        }
    }
    let n = samples as f64;
    let my = sy / n;
    let vy = (syy / n - my * my).max(0.0);
    Ok((0..k)
        .map(|i| {
            let mx = sx[i] / n;
            let vx = (sxx[i] / n - mx * mx).max(0.0);
            let cxy = sxy[i] / n - mx * my;
            let r = mx / my;
            let var = ((vx - 2.0 * r * cxy + r * r * vy) / (my * my) / n).max(0.0);
            RenewalEstimate {
                h: hs[i],
                estimate: r,
                std_error: var.sqrt(),
                numerator_mean: mx,
                denominator_mean: my,
            }
        })
        .collect())
}

/// One row of the exported `(h, F, f)` table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OneSiteRow {
    pub h: f64,
    pub cdf: f64,
    pub pdf: f64,
}

/// Table on `points` equally spaced values of `h` in `[0, 1]`, plus `h = b`
/// where both one-sided densities are emitted.
pub fn onesite_table(d: &OneSiteDistribution, points: usize) -> Vec<OneSiteRow> {
    let points = points.max(2);
    let mut hs: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect();
    if d.b < 1.0 && !hs.contains(&d.b) {
        hs.push(d.b);
        hs.sort_by(f64::total_cmp);
    }
    let mut rows = Vec::with_capacity(hs.len() + 1);
    for h in hs {
        let (left, right) = d.pdf_limits(h);
        if h > 0.0 && h < 1.0 && left != right {
            rows.push(OneSiteRow {
                h,
                cdf: d.cdf(h),
                pdf: left,
            });
        }
        let pdf = if h == 1.0 { left } else { right };
        rows.push(OneSiteRow {
            h,
            cdf: d.cdf(h),
            pdf,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn b_one_is_exponential() {
        let d = OneSiteDistribution::new(1.0).unwrap();
        assert!((d.f0() - (-1.0f64).exp()).abs() < 1e-12);
        for h in [0.1, 0.5, 0.9] {
            assert!((d.cdf(h) - (h - 1.0).exp()).abs() < 1e-12);
            assert!((d.pdf(h) - (h - 1.0).exp()).abs() < 1e-12);
        }
        assert_eq!(d.cdf(1.0), 1.0);
    }

    #[test]
    fn support_boundaries() {
        let d = OneSiteDistribution::new(0.5).unwrap();
        assert_eq!(d.cdf(-0.5), 0.0);
        assert_eq!(d.cdf(2.0), 1.0);
        assert_eq!(d.cdf(0.0), d.f0());
        assert!(d.f0() > 0.0 && d.f0() <= 1.0);
    }

    #[test]
    fn exponential_branch_below_b() {
        for b in [0.1, 0.5, 0.7] {
            let d = OneSiteDistribution::new(b).unwrap();
            for h in [0.25 * b, 0.5 * b, b] {
                let want = d.f0() * (h / b).exp();
                assert!((d.cdf(h) - want).abs() < 1e-14);
            }
            for h in [0.25 * b, 0.5 * b] {
                let want = d.f0() / b * (h / b).exp();
                assert!((d.pdf(h) - want).abs() < 1e-13 * want.max(1.0));
            }
        }
    }

    #[test]
    fn density_jumps_at_b() {
        for b in [0.5, 0.1] {
            let d = OneSiteDistribution::new(b).unwrap();
            let (left, right) = d.pdf_limits(b);
            assert!((left - d.f0() / b * E).abs() < 1e-12 * left);
            assert!((left - right - d.f0() / b).abs() < 1e-12 * left);
        }
    }

    #[test]
    fn b_half_matches_hand_formula() {
        // second branch with m = 1: F = f0 (e^{2h} - 2(h - 1/2) e^{2h - 1})
        let d = OneSiteDistribution::new(0.5).unwrap();
        let f0 = 1.0 / (E * E - E);
        assert!((d.f0() - f0).abs() < 1e-14);
        for h in [0.6f64, 0.75, 0.95] {
            let want = f0 * ((2.0 * h).exp() - 2.0 * (h - 0.5) * (2.0 * h - 1.0).exp());
            assert!((d.cdf(h) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_differences_match_density() {
        for b in [1.0, 0.5, 0.1, 0.03] {
            let d = OneSiteDistribution::new(b).unwrap();
            let step = 1e-7;
            for i in 1..200 {
                let h = i as f64 / 200.0;
                if (h - b).abs() < 1e-6 {
                    continue;
                }
                let fd = (d.cdf(h + step) - d.cdf(h - step)) / (2.0 * step);
                let p = d.pdf(h);
                assert!(
                    (fd - p).abs() <= 1e-6 * p.max(1.0),
                    "b={b} h={h} fd={fd} pdf={p}"
                );
            }
        }
    }

    #[test]
    fn density_integrates_to_continuous_mass() {
        for b in [1.0, 0.5, 0.1] {
            let d = OneSiteDistribution::new(b).unwrap();
            let mass = integrate_piecewise(&|h| d.pdf(h), 0.0, 1.0, &d.breakpoints(), 1e-11);
            assert!((mass - (1.0 - d.f0())).abs() < 1e-8, "b={b}");
        }
    }

    #[test]
    fn cdf_is_monotone_on_fine_grid() {
        for b in [1.0, 0.5, 0.3, 0.1, 0.01] {
            let d = OneSiteDistribution::new(b).unwrap();
            let mut prev = d.cdf(0.0);
            for i in 1..=10_000 {
                let v = d.cdf(i as f64 / 10_000.0);
                assert!(v >= prev - 1e-15, "b={b} i={i}");
                prev = v;
            }
            assert!((prev - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_b_is_close_to_uniform() {
        let d = OneSiteDistribution::new(0.01).unwrap();
        let worst = (0..=100)
            .map(|i| i as f64 / 100.0)
            .map(|h| (d.cdf(h) - h).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.02, "{worst}");
        assert!(d.f0() > 0.0);
    }

    #[test]
    fn residual_is_zero_at_origin() {
        let d = OneSiteDistribution::new(0.5).unwrap();
        assert_eq!(onesite_delay_residual(&d, 0.0).integral_form, 0.0);
    }

    #[test]
    fn delay_equation_holds() {
        for b in [1.0, 0.5, 0.1] {
            let d = OneSiteDistribution::new(b).unwrap();
            for i in 0..=100 {
                let r = onesite_delay_residual(&d, i as f64 / 100.0);
                assert!(r.integral_form.abs() <= 1e-6, "b={b} h={}", r.h);
                if let Some(df) = r.differential_form {
                    assert!(df.abs() <= 1e-6, "b={b} h={}", r.h);
                }
            }
        }
    }

    #[test]
    fn renewal_oracle_edges() {
        let mut rng = SimRng::seed_from_u64(3);
        let at_one = renewal_oracle(0.5, 1.0, 1000, &mut rng).unwrap();
        assert_eq!(at_one.estimate, 1.0);
        assert_eq!(at_one.std_error, 0.0);
        assert!(matches!(
            renewal_oracle(0.5, 0.3, 0, &mut rng),
            Err(SandpileError::InsufficientSamples)
        ));
    }

    #[test]
    fn renewal_oracle_b_one() {
        // E N(s) = e^s - 1 on [0, 1]
        let mut rng = SimRng::seed_from_u64(11);
        let est = renewal_oracle(1.0, 0.5, 200_000, &mut rng).unwrap();
        let want = (-0.5f64).exp();
        assert!((est.estimate - want).abs() < 4.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn table_has_both_sides_of_the_jump() {
        let d = OneSiteDistribution::new(0.5).unwrap();
        let rows = onesite_table(&d, 101);
        let at_b: Vec<_> = rows.iter().filter(|r| r.h == 0.5).collect();
        assert_eq!(at_b.len(), 2);
        assert!(at_b[0].pdf > at_b[1].pdf);
        assert_eq!(rows.len(), 102);
        // b off the grid is inserted
        let rows = onesite_table(&OneSiteDistribution::new(0.3).unwrap(), 10);
        assert_eq!(rows.iter().filter(|r| r.h == 0.3).count(), 2);
        assert_eq!(rows.len(), 12);
        assert!(rows.windows(2).all(|w| w[0].h <= w[1].h));
    }
}
