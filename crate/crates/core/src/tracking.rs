//! Redistribution coefficients of avalanches and the long-run decomposition
//! of site energies into fractions of individual additions.
//!
//! For an avalanche started at `x`, `F[i][j]` is the share of the
//! pre-avalanche energy of toppled site `i` that ends up at site `j`. The
//! addition itself sits at `x` before the first toppling, so it is
//! redistributed with the same coefficients as `x`'s own energy:
//!
//! ```text
//! post[j] = sum_{i in T} F[i][j] * pre[i] + F[x][j] * u + pre[j] * [j anomalous, not toppled]
//! ```

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::AvalancheReport;
use crate::error::{Result, SandpileError};
use crate::model::Configuration;

/// Dense coefficient block: rows are toppled sites, columns the avalanche range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMatrix {
    addition_site: usize,
    sources: Vec<usize>,
    targets: Vec<usize>,
    values: Vec<f64>,
}

impl FMatrix {
    pub(crate) fn from_parts(
        addition_site: usize,
        sources: Vec<usize>,
        targets: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), sources.len() * targets.len());
        FMatrix {
            addition_site,
            sources,
            targets,
            values,
        }
    }

    /// No toppling happened.
    pub fn empty(addition_site: usize) -> Self {
        FMatrix {
            addition_site,
            sources: Vec::new(),
            targets: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn addition_site(&self) -> usize {
        self.addition_site
    }

    /// Toppled sites, sorted.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Sites in the range, sorted.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// `F[i][j]`, zero when `i` did not topple or `j` is outside the range.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (
            self.sources.binary_search(&i),
            self.targets.binary_search(&j),
        ) {
            (Ok(r), Ok(c)) => self.values[r * self.targets.len() + c],
            _ => 0.0,
        }
    }

    /// Share of the addition that ends at `j`.
    pub fn addition_share(&self, j: usize) -> f64 {
        self.get(self.addition_site, j)
    }

    /// `F[x][j] + sum_{i in T} F[i][j]`.
    pub fn column_sum(&self, j: usize) -> f64 {
        let Ok(c) = self.targets.binary_search(&j) else {
            return 0.0;
        };
        let w = self.targets.len();
        let s: f64 = (0..self.sources.len())
            .map(|r| self.values[r * w + c])
            .sum();
        s + self.addition_share(j)
    }

    /// Post-avalanche energies of the range predicted by the coefficients.
    pub fn reconstruct(
        &self,
        pre: &[f64],
        u: f64,
        anomalous_changed: &[usize],
    ) -> Vec<(usize, f64)> {
        let w = self.targets.len();
        self.targets
            .iter()
            .enumerate()
            .map(|(c, &j)| {
                let mut v: f64 = self
                    .sources
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| self.values[r * w + c] * pre[i])
                    .sum();
                v += self.addition_share(j) * u;
                if anomalous_changed.binary_search(&j).is_ok() {
                    v += pre[j];
                }
                (j, v)
            })
            .collect()
    }

    /// Largest absolute difference to another coefficient block over the same sites.
    pub fn max_abs_diff(&self, other: &FMatrix) -> Option<f64> {
        if self.sources != other.sources || self.targets != other.targets {
            return None;
        }
        Some(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Lower bound on the share of the addition received by every nonempty site
/// of the range: `2^-ceil(3N/2)`.
pub fn addition_share_floor(n: usize) -> f64 {
    let e = (3 * n).div_ceil(2) as i32;
    2f64.powi(-e)
}

/// Envelope for the largest fraction of addition `theta` still present at
/// time `t`: `(1 - 2^-ceil(3N/2))^floor((t - theta) / (N + 1))`.
pub fn decay_envelope(n: usize, theta: u64, t: u64) -> f64 {
    let k = t.saturating_sub(theta) / (n as u64 + 1);
    (1.0 - addition_share_floor(n)).powf(k as f64)
}

/// Linear map of one wave on all `n` sites: `map[i * n + j]` is the weight of
/// the energy at `i` before the wave in the energy at `j` after it.
fn wave_map(n: usize, toppled: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    for &s in toppled {
        for i in 0..n {
            let half = 0.5 * m[i * n + s];
            if half == 0.0 {
                continue;
            }
            m[i * n + s] = 0.0;
            if s > 0 {
                m[i * n + s - 1] += half;
            }
            if s + 1 < n {
                m[i * n + s + 1] += half;
            }
        }
    }
    m
}

fn validate(report: &AvalancheReport) -> Result<usize> {
    let n = report.pre_energies.len();
    let x = report.event.site;
    if x >= n || report.topple_counts.len() != n {
        return Err(SandpileError::MalformedReport(
            "site or count vector out of range".into(),
        ));
    }
    for w in &report.waves {
        if w.toppled.first() != Some(&x) {
            return Err(SandpileError::MalformedReport(format!(
                "wave {} does not start at the addition site",
                w.index
            )));
        }
        let mut seen = vec![false; n];
        for &s in &w.toppled {
            if s >= n || seen[s] {
                return Err(SandpileError::MalformedReport(format!(
                    "wave {} topples site {s} twice or out of range",
                    w.index
                )));
            }
            seen[s] = true;
        }
    }
    Ok(n)
}

/// Compose the per-wave linear maps of an avalanche into its coefficient block.
pub fn wave_f_coefficients(report: &AvalancheReport) -> Result<FMatrix> {
    let n = validate(report)?;
    let x = report.event.site;
    if report.waves.is_empty() {
        return Ok(FMatrix::empty(x));
    }
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        f[i * n + i] = 1.0;
    }
    let mut next = vec![0.0; n * n];
    for w in &report.waves {
        let step = wave_map(n, &w.toppled);
        next.fill(0.0);
        for m in 0..n {
            for i in 0..n {
                let a = f[m * n + i];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[m * n + j] += a * step[i * n + j];
                }
            }
        }
        std::mem::swap(&mut f, &mut next);
    }
    let sources = report.toppled_set.clone();
    let targets = report.range.clone();
    let mut values = Vec::with_capacity(sources.len() * targets.len());
    for &i in &sources {
        for &j in &targets {
            values.push(f[i * n + j]);
        }
    }
    Ok(FMatrix::from_parts(x, sources, targets, values))
}

/// Checks of the coefficient identities for one avalanche.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FCheck {
    /// Largest |column sum - post reduction value| over the range.
    pub sum_error: f64,
    /// Smallest addition share over nonempty sites of the range.
    pub min_addition_share: f64,
    /// Number of monotonicity failures (nonempty sites only).
    pub monotone_violations: usize,
    /// Largest |reconstructed - actual| over the range.
    pub reconstruction_error: f64,
}

/// Evaluate the coefficient identities of `f` against the avalanche outcome.
pub fn check_f_invariants(f: &FMatrix, report: &AvalancheReport, post: &Configuration) -> FCheck {
    let e = post.energies();
    let n = e.len();
    let x = f.addition_site();
    let mut out = FCheck {
        min_addition_share: f64::INFINITY,
        ..FCheck::default()
    };
    for &j in f.targets() {
        let r = if e[j] != 0.0 { 1.0 } else { 0.0 };
        out.sum_error = out.sum_error.max((f.column_sum(j) - r).abs());
        if e[j] != 0.0 {
            let share = f.addition_share(j);
            out.min_addition_share = out.min_addition_share.min(share);
            let tol = 1e-12 * share.max(1e-300);
            if j >= x && j + 1 < n && f.addition_share(j + 1) > share + tol {
                out.monotone_violations += 1;
            }
            if j <= x && j > 0 && f.addition_share(j - 1) > share + tol {
                out.monotone_violations += 1;
            }
        }
    }
    for (j, v) in f.reconstruct(
        &report.pre_energies,
        report.event.amount,
        &report.anomalous_changed,
    ) {
        out.reconstruction_error = out.reconstruction_error.max((v - e[j]).abs());
    }
    out
}

/// Fractions of one addition spread over the sites.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditionRow {
    pub theta: u64,
    pub amount: f64,
    pub fractions: Vec<f64>,
}

impl AdditionRow {
    pub fn max_fraction(&self) -> f64 {
        self.fractions.iter().copied().fold(0.0, f64::max)
    }
}

/// Decomposition of the current energies into fractions of the additions made
/// since `origin_time` and of the energies present at `origin_time`.
#[derive(Debug, Clone)]
pub struct CoefficientState {
    n: usize,
    origin_time: u64,
    time: u64,
    rows: VecDeque<AdditionRow>,
    /// `b[m * n + j]`: share of the initial energy of `m` now at `j`.
    b_matrix: Vec<f64>,
    initial: Vec<f64>,
    window: Option<usize>,
    dropped_rows: u64,
}

/// Pruning threshold for rows in windowed mode.
pub const PRUNE_BELOW: f64 = 1e-12;

impl CoefficientState {
    /// Start tracking at time `origin_time` from configuration `c`. With
    /// `window = None` nothing is ever dropped ("full tracking").
    pub fn new(c: &Configuration, origin_time: u64, window: Option<usize>) -> Self {
        let n = c.len();
        let mut b_matrix = vec![0.0; n * n];
        for (j, &e) in c.energies().iter().enumerate() {
            if e != 0.0 {
                b_matrix[j * n + j] = 1.0;
            }
        }
        CoefficientState {
            n,
            origin_time,
            time: origin_time,
            rows: VecDeque::new(),
            b_matrix,
            initial: c.energies().to_vec(),
            window,
            dropped_rows: 0,
        }
    }

    /// Default window `10 * N * (N + 1)`.
    pub fn default_window(n: usize) -> usize {
        10 * n * (n + 1)
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn origin_time(&self) -> u64 {
        self.origin_time
    }

    pub fn rows(&self) -> impl Iterator<Item = &AdditionRow> {
        self.rows.iter()
    }

    pub fn dropped_rows(&self) -> u64 {
        self.dropped_rows
    }

    /// `A[theta][j]`, zero for untracked additions.
    pub fn a(&self, theta: u64, j: usize) -> f64 {
        self.rows
            .iter()
            .find(|r| r.theta == theta)
            .map_or(0.0, |r| r.fractions[j])
    }

    /// `B[m][j]`.
    pub fn b(&self, m: usize, j: usize) -> f64 {
        self.b_matrix[m * self.n + j]
    }

    /// `sum_theta A[theta][j] + sum_m B[m][j]`.
    pub fn site_total(&self, j: usize) -> f64 {
        let a: f64 = self.rows.iter().map(|r| r.fractions[j]).sum();
        let b: f64 = (0..self.n).map(|m| self.b(m, j)).sum();
        a + b
    }

    /// `sum_theta A[theta][j]^2`.
    pub fn squared_addition_mass(&self, j: usize) -> f64 {
        self.rows
            .iter()
            .map(|r| r.fractions[j] * r.fractions[j])
            .sum()
    }

    /// Energies predicted by the decomposition.
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let a: f64 = self.rows.iter().map(|r| r.fractions[j] * r.amount).sum();
                let b: f64 = (0..self.n).map(|m| self.b(m, j) * self.initial[m]).sum();
                a + b
            })
            .collect()
    }

    /// Push one avalanche (or plain addition) through the decomposition.
    pub fn update_fractions(&mut self, report: &AvalancheReport, f: &FMatrix) -> Result<()> {
        let n = self.n;
        if report.pre_energies.len() != n {
            return Err(SandpileError::DimensionMismatch {
                expected: n,
                got: report.pre_energies.len(),
            });
        }
        let x = report.event.site;
        let theta = self.time + 1;
        let mut new_row = vec![0.0; n];
        if f.is_empty() {
            new_row[x] = 1.0;
        } else {
            if f.addition_site() != x {
                return Err(SandpileError::MalformedReport(
                    "F matrix belongs to another addition".into(),
                ));
            }
            let targets = f.targets();
            let own: Vec<bool> = targets
                .iter()
                .map(|j| report.anomalous_changed.binary_search(j).is_ok())
                .collect();
            let mut buf = vec![0.0; targets.len()];
            let mut push = |v: &mut [f64]| {
                for (c, &j) in targets.iter().enumerate() {
                    let mut s: f64 = f.sources().iter().map(|&i| f.get(i, j) * v[i]).sum();
                    if own[c] {
                        s += v[j];
                    }
                    buf[c] = s;
                }
                for (c, &j) in targets.iter().enumerate() {
                    v[j] = buf[c];
                }
            };
            for row in self.rows.iter_mut() {
                push(&mut row.fractions);
            }
            for m in 0..n {
                push(&mut self.b_matrix[m * n..(m + 1) * n]);
            }
            for &j in targets {
                new_row[j] = f.addition_share(j);
            }
        }
        self.rows.push_back(AdditionRow {
            theta,
            amount: report.event.amount,
            fractions: new_row,
        });
        self.time = theta;
        self.prune();
        Ok(())
    }

    fn prune(&mut self) {
        let Some(w) = self.window else { return };
        let before = self.rows.len();
        self.rows.retain(|r| r.max_fraction() >= PRUNE_BELOW);
        while self.rows.len() > w {
            self.rows.pop_front();
        }
        self.dropped_rows += (before - self.rows.len()) as u64;
    }

    /// Rows as `(t, theta, j, A)` CSV lines for nonzero entries.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "t,theta,j,A")?;
        }
        for r in &self.rows {
            for (j, &v) in r.fractions.iter().enumerate() {
                if v != 0.0 {
                    writeln!(out, "{},{},{},{:e}", self.time, r.theta, j, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Largest remaining fraction of each tracked addition at time `t`.
pub fn decay_diagnostics(state: &CoefficientState) -> Vec<(u64, f64)> {
    state.rows().map(|r| (r.theta, r.max_fraction())).collect()
}

/// Follows [`decay_diagnostics`] over time, counting increases of the
/// per-addition maxima (and the per-initial-site maxima of `B`) and
/// envelope violations.
#[derive(Debug, Clone, Default)]
pub struct DecayMonitor {
    last_a: std::collections::HashMap<u64, f64>,
    last_b: Vec<f64>,
    pub monotone_violations: usize,
    pub envelope_violations: usize,
    pub checks: usize,
}

impl DecayMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, state: &CoefficientState) {
        let n = state.n_sites();
        let t = state.time();
        let tol = 1e-12;
        let mut seen = std::collections::HashMap::with_capacity(self.last_a.len() + 1);
        for (theta, m) in decay_diagnostics(state) {
            if let Some(&prev) = self.last_a.get(&theta) {
                if m > prev * (1.0 + tol) {
                    self.monotone_violations += 1;
                }
            }
            if m > decay_envelope(n, theta, t) * (1.0 + tol) {
                self.envelope_violations += 1;
            }
            seen.insert(theta, m);
            self.checks += 1;
        }
        self.last_a = seen;
        let b_max: Vec<f64> = (0..n)
            .map(|m| (0..n).map(|j| state.b(m, j)).fold(0.0, f64::max))
            .collect();
        if self.last_b.len() == n {
            for (prev, cur) in self.last_b.iter().zip(&b_max) {
                if *cur > prev * (1.0 + tol) {
                    self.monotone_violations += 1;
                }
            }
        }
        self.last_b = b_max;
    }
}
