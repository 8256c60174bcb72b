//! Zhang toppling, wave-ordered stabilization and the Markov step.
//!
//! A toppling empties the site and sends half of its energy to each
//! neighbour; halves sent past either end of the chain are lost. After an
//! addition at `x` the avalanche is organised in waves: `x` topples, then the
//! topplings spread outward (nearest sites first, left before right at equal
//! distance) without toppling `x` again. If `x` is unstable at the end of a
//! wave, another wave starts.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};
use crate::model::{Configuration, ModelParams, CRITICAL_ENERGY};
use crate::rng::SimRng;
use crate::tracking::FMatrix;

/// One random addition: `amount` at `site` at step `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditionEvent {
    pub time: u64,
    pub site: usize,
    pub amount: f64,
}

/// The topplings of one wave, in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// 1-based wave number.
    pub index: usize,
    pub toppled: Vec<usize>,
    pub left_end: usize,
    pub right_end: usize,
}

/// Full record of one addition and the avalanche it caused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvalancheReport {
    pub event: AdditionEvent,
    /// Energies before the addition.
    pub pre_energies: Vec<f64>,
    pub waves: Vec<Wave>,
    /// Sites that toppled, together with their neighbours (sorted).
    pub range: Vec<usize>,
    /// Sites that toppled at least once (sorted).
    pub toppled_set: Vec<usize>,
    /// Sites in the range that were anomalous and did not topple (sorted).
    pub anomalous_changed: Vec<usize>,
    pub topple_counts: Vec<u32>,
    /// Redistribution coefficients tracked alongside the topplings.
    pub f_matrix: Option<FMatrix>,
    pub dissipated: f64,
}

impl AvalancheReport {
    pub fn had_avalanche(&self) -> bool {
        !self.waves.is_empty()
    }
}

/// Cheap summary returned by the hot-path step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub site: usize,
    pub amount: f64,
    pub dissipated: f64,
    pub topplings: u32,
}

pub(crate) trait Recorder {
    fn start_wave(&mut self) {}
    fn toppled(&mut self, _site: usize, _n: usize) {}
}

#[derive(Default)]
pub(crate) struct WaveRecorder {
    pub waves: Vec<Vec<usize>>,
}

impl Recorder for WaveRecorder {
    fn start_wave(&mut self) {
        self.waves.push(Vec::new());
    }
    fn toppled(&mut self, site: usize, _n: usize) {
        self.waves.last_mut().expect("wave started").push(site);
    }
}

/// Tracks, for every site, the linear combination of pre-avalanche energies
/// (with the addition folded into the addition site) that it currently holds.
pub(crate) struct CoefficientRecorder {
    n: usize,
    /// `coef[j * n + i]`: weight of source `i` in site `j`.
    pub coef: Vec<f64>,
    pub waves: WaveRecorder,
}

impl CoefficientRecorder {
    pub fn new(n: usize) -> Self {
        let mut coef = vec![0.0; n * n];
        for i in 0..n {
            coef[i * n + i] = 1.0;
        }
        CoefficientRecorder {
            n,
            coef,
            waves: WaveRecorder::default(),
        }
    }
}

impl Recorder for CoefficientRecorder {
    fn start_wave(&mut self) {
        self.waves.start_wave();
    }
    fn toppled(&mut self, s: usize, _n: usize) {
        self.waves.toppled(s, self.n);
        let n = self.n;
        let row: Vec<f64> = self.coef[s * n..(s + 1) * n]
            .iter()
            .map(|c| 0.5 * c)
            .collect();
        for nb in [s.wrapping_sub(1), s + 1] {
            if nb < n {
                for (dst, c) in self.coef[nb * n..(nb + 1) * n].iter_mut().zip(&row) {
                    *dst += c;
                }
            }
        }
        self.coef[s * n..(s + 1) * n].fill(0.0);
    }
}

/// Topples `s` in place and returns the energy lost through the boundary.
#[inline]
fn topple_in_place(e: &mut [f64], s: usize) -> f64 {
    let n = e.len();
    let half = 0.5 * e[s];
    e[s] = 0.0;
    let mut lost = 0.0;
    if s > 0 {
        e[s - 1] += half;
    } else {
        lost += half;
    }
    if s + 1 < n {
        e[s + 1] += half;
    } else {
        lost += half;
    }
    lost
}

/// Stabilizes after an addition at `x` (already applied), wave by wave.
/// Returns the dissipated energy.
pub(crate) fn stabilize_waves<R: Recorder>(e: &mut [f64], x: usize, rec: &mut R) -> f64 {
    let n = e.len();
    let mut lost = 0.0;
    while e[x] >= CRITICAL_ENERGY {
        rec.start_wave();
        rec.toppled(x, n);
        lost += topple_in_place(e, x);
        let (mut left, mut right) = (x > 0, x + 1 < n);
        let mut d = 1;
        while left || right {
            if left {
                let s = x - d;
                if e[s] >= CRITICAL_ENERGY {
                    rec.toppled(s, n);
                    lost += topple_in_place(e, s);
                    left = s > 0;
                } else {
                    left = false;
                }
            }
            if right {
                let s = x + d;
                if e[s] >= CRITICAL_ENERGY {
                    rec.toppled(s, n);
                    lost += topple_in_place(e, s);
                    right = s + 1 < n;
                } else {
                    right = false;
                }
            }
            d += 1;
        }
    }
    lost
}

/// Topple the unstable site `x`.
pub fn topple(c: &Configuration, x: usize) -> Result<Configuration> {
    check_site(x, c.len())?;
    if c.energies()[x] < CRITICAL_ENERGY {
        return Err(SandpileError::StableSite(x));
    }
    let mut out = c.clone();
    topple_in_place(out.energies_mut(), x);
    Ok(out)
}

fn check_site(x: usize, n: usize) -> Result<()> {
    if x >= n {
        return Err(SandpileError::SiteOutOfRange {
            site: x,
            n_sites: n,
        });
    }
    Ok(())
}

/// The addition operator: add `u` at `x` and stabilize. The report carries the
/// wave decomposition and the directly tracked redistribution coefficients.
pub fn add_and_stabilize(
    params: &ModelParams,
    c: &Configuration,
    x: usize,
    u: f64,
) -> Result<(Configuration, AvalancheReport)> {
    if c.len() != params.n_sites {
        return Err(SandpileError::DimensionMismatch {
            expected: params.n_sites,
            got: c.len(),
        });
    }
    params.check_amount(u)?;
    add_and_stabilize_any_amount(
        c,
        AdditionEvent {
            time: 0,
            site: x,
            amount: u,
        },
    )
}

/// As [`add_and_stabilize`] but without checking the amount against `[a, b]`.
pub fn add_and_stabilize_any_amount(
    c: &Configuration,
    event: AdditionEvent,
) -> Result<(Configuration, AvalancheReport)> {
    let x = event.site;
    check_site(x, c.len())?;
    c.check_stable()?;
    if event.amount.is_nan() || event.amount < 0.0 {
        return Err(SandpileError::NegativeEnergy(event.amount));
    }
    let n = c.len();
    let pre = c.energies().to_vec();
    let mut next = c.clone();
    let e = next.energies_mut();
    e[x] += event.amount;
    let mut rec = CoefficientRecorder::new(n);
    let dissipated = stabilize_waves(e, x, &mut rec);
    let report = build_report(event, pre, rec, dissipated, next.energies());
    Ok((next, report))
}

fn build_report(
    event: AdditionEvent,
    pre: Vec<f64>,
    rec: CoefficientRecorder,
    dissipated: f64,
    _post: &[f64],
) -> AvalancheReport {
    let n = pre.len();
    let mut topple_counts = vec![0u32; n];
    let mut waves = Vec::with_capacity(rec.waves.waves.len());
    for (k, toppled) in rec.waves.waves.into_iter().enumerate() {
        for &s in &toppled {
            topple_counts[s] += 1;
        }
        let left_end = *toppled.iter().min().expect("wave topples its origin");
        let right_end = *toppled.iter().max().expect("wave topples its origin");
        waves.push(Wave {
            index: k + 1,
            toppled,
            left_end,
            right_end,
        });
    }
    let toppled_set: Vec<usize> = (0..n).filter(|&j| topple_counts[j] > 0).collect();
    let mut in_range = vec![false; n];
    for &s in &toppled_set {
        in_range[s] = true;
        if s > 0 {
            in_range[s - 1] = true;
        }
        if s + 1 < n {
            in_range[s + 1] = true;
        }
    }
    let range: Vec<usize> = (0..n).filter(|&j| in_range[j]).collect();
    let anomalous_changed: Vec<usize> = range
        .iter()
        .copied()
        .filter(|&j| topple_counts[j] == 0 && pre[j] > 0.0 && pre[j] < 0.5)
        .collect();
    let f_matrix = if toppled_set.is_empty() {
        None
    } else {
        let mut values = Vec::with_capacity(toppled_set.len() * range.len());
        for &i in &toppled_set {
            for &j in &range {
                values.push(rec.coef[j * n + i]);
            }
        }
        Some(FMatrix::from_parts(
            event.site,
            toppled_set.clone(),
            range.clone(),
            values,
        ))
    };
    AvalancheReport {
        event,
        pre_energies: pre,
        waves,
        range,
        toppled_set,
        anomalous_changed,
        topple_counts,
        f_matrix,
        dissipated,
    }
}

/// One step of the chain: uniform site, uniform amount on `[a, b]`.
pub fn step(
    c: &Configuration,
    rng: &mut SimRng,
    params: &ModelParams,
) -> Result<(Configuration, AvalancheReport)> {
    let x = rng.site(params.n_sites);
    let u = rng.uniform(params.a, params.b);
    add_and_stabilize(params, c, x, u)
}

/// Toppling-order policy for [`stabilize_any_order`].
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TopplePolicy {
    LeftmostFirst,
    RightmostFirst,
    UniformRandom(SimRng),
}

impl TopplePolicy {
    fn choose(&mut self, unstable: &[usize]) -> usize {
        match self {
            TopplePolicy::LeftmostFirst => unstable[0],
            TopplePolicy::RightmostFirst => unstable[unstable.len() - 1],
            TopplePolicy::UniformRandom(rng) => unstable[rng.site(unstable.len())],
        }
    }
}

/// Result of [`stabilize_any_order`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnyOrderOutcome {
    pub config: Configuration,
    pub topple_counts: Vec<u32>,
    pub dissipated: f64,
    /// After every toppling: unstable sites were separated by empty sites and
    /// all had energy below 2.
    pub closure_held: bool,
}

fn unstable_separated(e: &[f64]) -> bool {
    let mut last_unstable: Option<usize> = None;
    let mut empty_since = false;
    for (j, &v) in e.iter().enumerate() {
        if v >= CRITICAL_ENERGY {
            if last_unstable.is_some() && !empty_since {
                return false;
            }
            last_unstable = Some(j);
            empty_since = false;
        } else if v == 0.0 {
            empty_since = true;
        }
    }
    true
}

/// Stabilize a configuration one toppling at a time, in the order chosen by
/// `policy`. The input must have an empty site between any two unstable sites.
pub fn stabilize_any_order(c: &Configuration, mut policy: TopplePolicy) -> Result<AnyOrderOutcome> {
    let mut e = c.energies().to_vec();
    if !unstable_separated(&e) {
        return Err(SandpileError::NotReachable(
            "two unstable sites without an empty site between them".into(),
        ));
    }
    let n = e.len();
    let mut counts = vec![0u32; n];
    let mut dissipated = 0.0;
    let mut closure_held = true;
    let mut unstable: Vec<usize> = Vec::new();
    loop {
        unstable.clear();
        unstable.extend((0..n).filter(|&j| e[j] >= CRITICAL_ENERGY));
        if unstable.is_empty() {
            break;
        }
        let s = policy.choose(&unstable);
        dissipated += topple_in_place(&mut e, s);
        counts[s] += 1;
        if !unstable_separated(&e) || e.iter().any(|&v| v >= 2.0) {
            closure_held = false;
        }
    }
    Ok(AnyOrderOutcome {
        config: Configuration::new(e)?,
        topple_counts: counts,
        dissipated,
        closure_held,
    })
}

/// A running chain that owns its configuration.
#[derive(Debug, Clone)]
pub struct Sandpile {
    params: ModelParams,
    config: Configuration,
    time: u64,
}

impl Sandpile {
    pub fn new(params: ModelParams, config: Configuration) -> Result<Self> {
        if config.len() != params.n_sites {
            return Err(SandpileError::DimensionMismatch {
                expected: params.n_sites,
                got: config.len(),
            });
        }
        config.check_stable()?;
        Ok(Sandpile {
            params,
            config,
            time: 0,
        })
    }

    pub fn empty(params: ModelParams) -> Self {
        Sandpile {
            config: Configuration::empty(params.n_sites),
            params,
            time: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn energies(&self) -> &[f64] {
        self.config.energies()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Apply a given addition without recording details.
    pub fn apply(&mut self, x: usize, u: f64) -> StepSummary {
        let e = self.config.energies_mut();
        e[x] += u;
        let mut topplings = Counter(0);
        let dissipated = stabilize_waves(e, x, &mut topplings);
        self.time += 1;
        StepSummary {
            site: x,
            amount: u,
            dissipated,
            topplings: topplings.0,
        }
    }

    /// Draw and apply one random addition.
    pub fn step(&mut self, rng: &mut SimRng) -> StepSummary {
        let x = rng.site(self.params.n_sites);
        let u = rng.uniform(self.params.a, self.params.b);
        self.apply(x, u)
    }

    /// Apply a given addition and return the full report.
    pub fn apply_with_report(&mut self, x: usize, u: f64) -> AvalancheReport {
        let event = AdditionEvent {
            time: self.time + 1,
            site: x,
            amount: u,
        };
        let (next, report) = add_and_stabilize_any_amount(&self.config, event)
            .expect("chain state is stable and site is in range");
        self.config = next;
        self.time += 1;
        report
    }

    pub fn step_with_report(&mut self, rng: &mut SimRng) -> AvalancheReport {
        let x = rng.site(self.params.n_sites);
        let u = rng.uniform(self.params.a, self.params.b);
        self.apply_with_report(x, u)
    }

    pub fn set_config(&mut self, config: Configuration) {
        assert_eq!(config.len(), self.params.n_sites);
        self.config = config;
    }
}

struct Counter(u32);

impl Recorder for Counter {
    fn toppled(&mut self, _site: usize, _n: usize) {
        self.0 += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn topple_examples() {
        // The non-abelian pair of topplings.
        let xi = cfg(&[1.2, 1.6]);
        let t2 = topple(&xi, 1).unwrap();
        assert_eq!(t2.energies(), &[2.0, 0.0]);
        assert_eq!(topple(&t2, 0).unwrap().energies(), &[0.0, 1.0]);
        let t1 = topple(&xi, 0).unwrap();
        assert!(close(
            topple(&t1, 1).unwrap().energies(),
            &[1.1, 0.0],
            1e-15
        ));
        assert_eq!(
            topple(&cfg(&[0.0, 1.0, 0.0]), 1).unwrap().energies(),
            &[0.5, 0.0, 0.5]
        );
        assert_eq!(
            topple(&cfg(&[0.0, 0.9]), 1),
            Err(SandpileError::StableSite(1))
        );
    }

    #[test]
    fn single_site_loses_everything() {
        let p = ModelParams::new(1, 0.0, 1.0).unwrap();
        let (c, r) = add_and_stabilize(&p, &cfg(&[0.4]), 0, 0.7).unwrap();
        assert_eq!(c.energies(), &[0.0]);
        assert!((r.dissipated - 1.1).abs() < 1e-15);
        assert_eq!(r.waves.len(), 1);
    }

    #[test]
    fn two_site_avalanche() {
        // (0.9, 0.8) + 0.5 at site 1: (1.4, 0.8) -> (0, 1.5) -> (0.75, 0).
        let p = ModelParams::new(2, 0.0, 1.0).unwrap();
        let (c, r) = add_and_stabilize(&p, &cfg(&[0.9, 0.8]), 0, 0.5).unwrap();
        assert!(close(c.energies(), &[0.75, 0.0], 1e-15));
        // losses: 0.7 from site 1, 0.75 from site 2.
        assert!((r.dissipated - 1.45).abs() < 1e-12);
        assert_eq!(r.topple_counts, vec![1, 1]);
        assert_eq!(r.waves.len(), 1);
        assert_eq!(r.range, vec![0, 1]);

        // (0.9, 0.9) + 0.3 at site 1: (1.2, 0.9) -> (0, 1.5) -> (0.75, 0).
        let (c, r) = add_and_stabilize(&p, &cfg(&[0.9, 0.9]), 0, 0.3).unwrap();
        assert!(close(c.energies(), &[0.75, 0.0], 1e-15));
        assert!((r.dissipated - 1.35).abs() < 1e-12);
        let oracle = stabilize_any_order(&cfg(&[1.2, 0.9]), TopplePolicy::RightmostFirst).unwrap();
        assert!(close(oracle.config.energies(), c.energies(), 1e-15));
        assert!((oracle.dissipated - r.dissipated).abs() < 1e-15);
    }

    #[test]
    fn no_avalanche_report_is_empty() {
        let p = ModelParams::new(3, 0.0, 1.0).unwrap();
        let (c, r) = add_and_stabilize(&p, &cfg(&[0.1, 0.0, 0.2]), 1, 0.6).unwrap();
        assert_eq!(c.energies(), &[0.1, 0.6, 0.2]);
        assert!(!r.had_avalanche());
        assert!(r.range.is_empty() && r.toppled_set.is_empty() && r.anomalous_changed.is_empty());
        assert_eq!(r.dissipated, 0.0);
        assert!(r.f_matrix.is_none());
    }

    #[test]
    fn add_rejects_bad_inputs() {
        let p = ModelParams::new(2, 0.5, 1.0).unwrap();
        assert!(matches!(
            add_and_stabilize(&p, &cfg(&[0.2, 0.3]), 0, 0.4),
            Err(SandpileError::AmountOutOfRange { .. })
        ));
        assert!(matches!(
            add_and_stabilize(&p, &cfg(&[1.2, 0.3]), 0, 0.6),
            Err(SandpileError::Unstable(0))
        ));
        assert!(matches!(
            add_and_stabilize(&p, &cfg(&[0.2, 0.3]), 5, 0.6),
            Err(SandpileError::SiteOutOfRange { .. })
        ));
    }

    #[test]
    fn any_order_examples() {
        let out = stabilize_any_order(&cfg(&[1.2, 0.0]), TopplePolicy::LeftmostFirst).unwrap();
        assert!(close(out.config.energies(), &[0.0, 0.6], 1e-15));
        for policy in [TopplePolicy::LeftmostFirst, TopplePolicy::RightmostFirst] {
            let out = stabilize_any_order(&cfg(&[2.0, 0.0]), policy).unwrap();
            assert_eq!(out.config.energies(), &[0.5, 0.0]);
        }
        assert!(matches!(
            stabilize_any_order(&cfg(&[1.2, 1.6]), TopplePolicy::LeftmostFirst),
            Err(SandpileError::NotReachable(_))
        ));
        assert!(matches!(
            stabilize_any_order(&cfg(&[1.2, 0.5, 1.3]), TopplePolicy::LeftmostFirst),
            Err(SandpileError::NotReachable(_))
        ));
        assert!(stabilize_any_order(&cfg(&[1.2, 0.0, 1.3]), TopplePolicy::LeftmostFirst).is_ok());
    }

    #[test]
    fn wave_example_eleven_sites() {
        // Full/empty pattern 11011111101 with the 7th site pushed over.
        let bits = [1, 1, 0, 1, 1, 1, 1, 1, 1, 0, 1];
        let e: Vec<f64> = bits
            .iter()
            .map(|&b| if b == 1 { 0.75 } else { 0.0 })
            .collect();
        let p = ModelParams::new(11, 0.5, 1.0).unwrap();
        let (_, r) = add_and_stabilize(&p, &cfg(&e), 6, 0.75).unwrap();
        let ends: Vec<(usize, usize)> = r.waves.iter().map(|w| (w.left_end, w.right_end)).collect();
        assert_eq!(ends, vec![(3, 8), (4, 7), (5, 6)]);
        assert_eq!(r.waves[0].toppled, vec![6, 5, 7, 4, 8, 3]);
    }

    #[test]
    fn sandpile_step_is_deterministic() {
        let p = ModelParams::new(2, 0.5, 1.0).unwrap();
        let run = || {
            let mut s = Sandpile::empty(p);
            let mut rng = SimRng::seed_from_u64(17);
            for _ in 0..1000 {
                s.step(&mut rng);
            }
            s.energies().to_vec()
        };
        let (x, y) = (run(), run());
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn step_draws_are_uniform() {
        let p = ModelParams::new(4, 0.5, 1.0).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let mut c = Configuration::empty(4);
        let steps = 100_000;
        let mut sum = 0.0;
        let mut hits = [0usize; 4];
        for _ in 0..steps {
            let (next, r) = step(&c, &mut rng, &p).unwrap();
            sum += r.event.amount;
            hits[r.event.site] += 1;
            c = next;
        }
        let mean = sum / steps as f64;
        let sd = (p.variance_addition() / steps as f64).sqrt();
        assert!((mean - 0.75).abs() < 3.0 * sd, "mean {mean}");
        let q = 0.25;
        let sdq = (q * (1.0 - q) / steps as f64).sqrt();
        for h in hits {
            assert!((h as f64 / steps as f64 - q).abs() < 3.0 * sdq);
        }
    }
}
