//! Small statistical helpers: batch means, chi-square and Kolmogorov-Smirnov
//! tests, and the sup distance between an empirical and an exact CDF.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `|value - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            return if self.value == target {
                0.0
            } else {
                f64::INFINITY
            };
        }
        (self.value - target).abs() / self.std_error
    }

    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Default number of batches.
pub const BATCHES: usize = 50;

/// Running batch sums for a series of known length.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BatchMeans {
    batch_len: u64,
    seen: u64,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl BatchMeans {
    /// Prepare for `total` observations split into `batches` batches.
    pub fn new(total: u64, batches: usize) -> Self {
        let batches = batches.max(1) as u64;
        let b = batches.min(total.max(1));
        let batch_len = (total / b).max(1);
        BatchMeans {
            batch_len,
            seen: 0,
            sums: vec![0.0; b as usize],
            counts: vec![0; b as usize],
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let i = ((self.seen / self.batch_len) as usize).min(self.sums.len() - 1);
        self.sums[i] += x;
        self.counts[i] += 1;
        self.seen += 1;
    }

    pub fn count(&self) -> u64 {
        self.seen
    }

    /// Means of the nonempty batches.
    pub fn batch_means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect()
    }

    /// Append the batches of another series (e.g. an independent replica).
    pub fn absorb(&mut self, other: &BatchMeans) {
        self.sums.extend_from_slice(&other.sums);
        self.counts.extend_from_slice(&other.counts);
        self.seen += other.seen;
    }

    /// Overall mean with the batch-means standard error.
    pub fn estimate(&self) -> Estimate {
        let total: f64 = self.sums.iter().sum();
        let value = if self.seen == 0 {
            f64::NAN
        } else {
            total / self.seen as f64
        };
        let means = self.batch_means();
        Estimate {
            value,
            std_error: std_error_of_mean(&means),
        }
    }
}

/// Standard error of the mean of `xs` treated as independent draws.
pub fn std_error_of_mean(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k < 2 {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / k as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        let n = (self.count + o.count) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.count as f64 / n;
        self.m2 += o.m2 + d * d * self.count as f64 * o.count as f64 / n;
        self.count += o.count;
    }
}

/// Outcome of a goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

impl TestOutcome {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

fn chi_square_p(stat: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Pearson test of `observed` counts against equal cell probabilities.
pub fn chi_square_uniform(observed: &[u64]) -> TestOutcome {
    let total: u64 = observed.iter().sum();
    let expected = total as f64 / observed.len() as f64;
    let stat = observed
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let dof = observed.len() as f64 - 1.0;
    TestOutcome {
        statistic: stat,
        dof,
        p_value: chi_square_p(stat, dof),
    }
}

/// Pearson test of positive integer samples against a geometric law on
/// `{1, 2, ...}` with success probability `p`. The tail is pooled so every
/// cell expects at least five observations.
pub fn chi_square_geometric(samples: &[u64], p: f64) -> TestOutcome {
    let n = samples.len() as f64;
    let mut cells: Vec<(u64, f64)> = Vec::new();
    let mut k = 1u64;
    let mut tail = 1.0;
    loop {
        let pk = p * (1.0 - p).powi(k as i32 - 1);
        if (tail - pk) * n < 5.0 {
            break;
        }
        cells.push((k, pk));
        tail -= pk;
        k += 1;
    }
    let last = k;
    let mut observed = vec![0u64; cells.len() + 1];
    for &s in samples {
        let idx = if s >= last {
            cells.len()
        } else {
            (s.max(1) - 1) as usize
        };
        observed[idx] += 1;
    }
    let mut stat = 0.0;
    for (i, &(_, pk)) in cells.iter().enumerate() {
        stat += (observed[i] as f64 - n * pk).powi(2) / (n * pk);
    }
    stat += (observed[cells.len()] as f64 - n * tail).powi(2) / (n * tail);
    let dof = cells.len() as f64;
    TestOutcome {
        statistic: stat,
        dof,
        p_value: chi_square_p(stat, dof),
    }
}

/// Asymptotic Kolmogorov distribution tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against uniform `[0, 1)`.
pub fn ks_uniform(samples: &[f64]) -> TestOutcome {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let p = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d);
    TestOutcome {
        statistic: d,
        dof: n,
        p_value: p,
    }
}

/// Sup distance between the empirical CDF of `samples` and a CDF that is
/// continuous except for possible atoms. `cdf_left(v)` is the left limit at `v`.
pub fn ecdf_sup_distance<F, G>(samples: &[f64], cdf: F, cdf_left: G) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let v = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == v {
            j += 1;
        }
        let before = i as f64 / n;
        let after = j as f64 / n;
        worst = worst
            .max((before - cdf_left(v)).abs())
            .max((after - cdf(v)).abs());
        i = j;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    #[test]
    fn moments_and_merge() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        assert!((all.mean - 5.0).abs() < 1e-12);
        assert!((all.variance() - 16.5).abs() < 1e-12);
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..2].iter().for_each(|&x| a.push(x));
        xs[2..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_iid_noise() {
        let mut rng = SimRng::seed_from_u64(1);
        let n = 100_000;
        let mut bm = BatchMeans::new(n, BATCHES);
        for _ in 0..n {
            bm.push(rng.unit());
        }
        let e = bm.estimate();
        assert_eq!(bm.batch_means().len(), BATCHES);
        // iid uniform: se = sqrt(1/12 / n)
        let want = (1.0 / 12.0 / n as f64).sqrt();
        assert!((e.std_error / want - 1.0).abs() < 0.5);
        assert!(e.within_sigmas(0.5, 4.0));
    }

    #[test]
    fn short_series_get_fewer_batches() {
        let mut bm = BatchMeans::new(3, BATCHES);
        (0..3).for_each(|i| bm.push(i as f64));
        assert_eq!(bm.batch_means(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn chi_square_reference_values() {
        let t = chi_square_uniform(&[60, 40]);
        assert!((t.statistic - 4.0).abs() < 1e-12);
        assert!((t.p_value - 0.0455).abs() < 1e-3);
        assert!(chi_square_uniform(&[100, 100, 100]).p_value > 0.99);
    }

    #[test]
    fn geometric_fit_accepts_geometric_draws() {
        let mut rng = SimRng::seed_from_u64(5);
        let p = 0.16;
        let xs: Vec<u64> = (0..10_000)
            .map(|_| {
                let mut k = 1;
                while rng.unit() >= p {
                    k += 1;
                }
                k
            })
            .collect();
        assert!(chi_square_geometric(&xs, p).passes(0.01));
        assert!(!chi_square_geometric(&xs, 0.25).passes(0.01));
    }

    #[test]
    fn kolmogorov_reference_values() {
        assert!((kolmogorov_tail(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_tail(1.63) - 0.0098).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_uniform_rejects_skewed() {
        let mut rng = SimRng::seed_from_u64(9);
        let u: Vec<f64> = (0..5000).map(|_| rng.unit()).collect();
        assert!(ks_uniform(&u).passes(0.01));
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(!ks_uniform(&sq).passes(0.01));
    }

    #[test]
    fn ecdf_distance_with_atom() {
        // half the mass at zero, rest uniform on (0, 1)
        let cdf = |v: f64| {
            if v < 0.0 {
                0.0
            } else {
                (0.5 + 0.5 * v).min(1.0)
            }
        };
        let left = |v: f64| if v <= 0.0 { 0.0 } else { cdf(v) };
        let xs = [0.0, 0.0, 0.5, 1.0];
        let d = ecdf_sup_distance(&xs, cdf, left);
        // after the zeros the ECDF is 0.5 = F(0); at 0.5 before = 0.5 vs 0.75
        assert!((d - 0.25).abs() < 1e-12);
    }
}
