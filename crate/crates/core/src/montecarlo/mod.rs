//! Long stationary runs of the model and the measurements made on them.
//!
//! A run starts from the all-zero configuration, discards a burn-in prefix and
//! accumulates per-site histograms (with the atom at zero counted apart),
//! moments, empty-site statistics and the energy dissipated per step. Error
//! bars use batch means.

mod export;
mod probes;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Sandpile;
use crate::error::{Result, SandpileError};
use crate::model::ModelParams;
use crate::rng::SimRng;
use crate::stats::{std_error_of_mean, BatchMeans, Estimate, Moments, BATCHES};

pub use export::{
    export_run, histogram_json, run_tag, write_histogram_csv, write_summary_csv, ExportFormat,
};
pub use probes::{
    conservation_probe, independence_probe, quasi_unit_report, ConservationReport,
    IndependenceEstimate, QuasiUnitReport, QuasiUnitRow,
};

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(SandpileError::InvalidArgument(format!(
                "need 0 <= lo < hi <= 1, got [{lo}, {hi})"
            )));
        }
        Ok(Interval { lo, hi })
    }

    #[inline]
    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e < self.hi
    }
}

/// Joint events recorded for [`independence_probe`]: `eta_x in b` given `eta_y in a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairProbe {
    pub x: usize,
    pub y: usize,
    pub a: Interval,
    pub b: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrackedSites {
    All,
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub steps: u64,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub bins: usize,
    pub tracked_sites: TrackedSites,
    pub pair_probes: Vec<PairProbe>,
    /// Keep every post-burn-in energy of this site.
    pub record_site: Option<usize>,
}

pub const DEFAULT_BURN_IN: f64 = 0.10;
pub const DEFAULT_BINS: usize = 200;

impl RunConfig {
    pub fn new(params: ModelParams, steps: u64, seed: u64) -> Self {
        RunConfig {
            params,
            steps,
            burn_in_fraction: DEFAULT_BURN_IN,
            seed,
            bins: DEFAULT_BINS,
            tracked_sites: TrackedSites::All,
            pair_probes: Vec::new(),
            record_site: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ModelParams::new(self.params.n_sites, self.params.a, self.params.b)?;
        let n = self.params.n_sites;
        if self.steps == 0 {
            return Err(SandpileError::InvalidArgument("steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(SandpileError::InvalidArgument(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if self.bins == 0 {
            return Err(SandpileError::InvalidArgument("bins must be >= 1".into()));
        }
        let check = |s: usize| {
            if s >= n {
                Err(SandpileError::SiteOutOfRange {
                    site: s,
                    n_sites: n,
                })
            } else {
                Ok(())
            }
        };
        if let TrackedSites::List(v) = &self.tracked_sites {
            v.iter().try_for_each(|&s| check(s))?;
        }
        for p in &self.pair_probes {
            check(p.x)?;
            check(p.y)?;
        }
        if let Some(s) = self.record_site {
            check(s)?;
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.steps as f64 * self.burn_in_fraction).floor() as u64
    }

    pub fn sites(&self) -> Vec<usize> {
        match &self.tracked_sites {
            TrackedSites::All => (0..self.params.n_sites).collect(),
            TrackedSites::List(v) => v.clone(),
        }
    }
}

/// Accumulated statistics of one site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteStats {
    pub site: usize,
    /// Counts of positive energies in `bins` equal bins of `(0, 1)`.
    pub histogram: Vec<u64>,
    pub zero_atom: u64,
    pub moments: Moments,
    batches: BatchMeans,
}

impl SiteStats {
    fn new(site: usize, bins: usize, samples: u64) -> Self {
        SiteStats {
            site,
            histogram: vec![0; bins],
            zero_atom: 0,
            moments: Moments::default(),
            batches: BatchMeans::new(samples, BATCHES),
        }
    }

    #[inline]
    fn push(&mut self, e: f64) {
        if e == 0.0 {
            self.zero_atom += 1;
        } else {
            let bins = self.histogram.len();
            let i = ((e * bins as f64) as usize).min(bins - 1);
            self.histogram[i] += 1;
        }
        self.moments.push(e);
        self.batches.push(e);
    }

    pub fn mean(&self) -> Estimate {
        Estimate {
            value: self.moments.mean,
            std_error: self.batches.estimate().std_error,
        }
    }

    pub fn variance(&self) -> f64 {
        self.moments.variance()
    }

    fn merge(&mut self, o: &SiteStats) {
        self.histogram
            .iter_mut()
            .zip(&o.histogram)
            .for_each(|(a, b)| *a += b);
        self.zero_atom += o.zero_atom;
        self.moments.merge(&o.moments);
        self.batches.absorb(&o.batches);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PairCounts {
    probe: PairProbe,
    in_a: BatchMeans,
    in_ab: BatchMeans,
    in_b: BatchMeans,
}

/// Everything a stationary run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryStats {
    pub config: RunConfig,
    pub replicas: usize,
    pub sample_count: u64,
    pub sites: Vec<SiteStats>,
    /// Samples with exactly one empty site, by position of that site.
    pub empty_positions: Vec<u64>,
    /// Step from which regularity is checked; set when `a >= 1/2`.
    pub regularity_checked_from: Option<u64>,
    pub regularity_violations: u64,
    /// Post-burn-in samples with two or more empty or anomalous sites.
    pub multi_deficient_samples: u64,
    /// Steps that turned a configuration without a forbidden subconfiguration
    /// into one with it.
    pub fsc_creations: u64,
    pub total_steps: u64,
    empty_fraction: BatchMeans,
    dissipated: BatchMeans,
    pairs: Vec<PairCounts>,
    #[serde(skip)]
    pub recorded: Vec<f64>,
}

impl StationaryStats {
    pub fn params(&self) -> &ModelParams {
        &self.config.params
    }

    pub fn site(&self, j: usize) -> Option<&SiteStats> {
        self.sites.iter().find(|s| s.site == j)
    }

    /// Fraction of (site, sample) pairs at which the site is empty.
    pub fn empty_site_frequency(&self) -> Estimate {
        self.empty_fraction.estimate()
    }

    /// Energy lost at the boundary per step.
    pub fn mean_dissipated(&self) -> Estimate {
        self.dissipated.estimate()
    }

    /// Merge an independent replica of the same configuration.
    pub fn merge(&mut self, o: &StationaryStats) {
        self.replicas += o.replicas;
        self.sample_count += o.sample_count;
        self.sites
            .iter_mut()
            .zip(&o.sites)
            .for_each(|(a, b)| a.merge(b));
        self.empty_positions
            .iter_mut()
            .zip(&o.empty_positions)
            .for_each(|(a, b)| *a += b);
        self.regularity_violations += o.regularity_violations;
        self.multi_deficient_samples += o.multi_deficient_samples;
        self.fsc_creations += o.fsc_creations;
        self.total_steps += o.total_steps;
        self.empty_fraction.absorb(&o.empty_fraction);
        self.dissipated.absorb(&o.dissipated);
        for (a, b) in self.pairs.iter_mut().zip(&o.pairs) {
            a.in_a.absorb(&b.in_a);
            a.in_ab.absorb(&b.in_ab);
            a.in_b.absorb(&b.in_b);
        }
        self.recorded.extend_from_slice(&o.recorded);
    }

    pub(crate) fn pair_counts(&self) -> &[PairCounts] {
        &self.pairs
    }
}

impl PairCounts {
    pub(crate) fn probe(&self) -> PairProbe {
        self.probe
    }

    /// Point estimate of `P(B | A) - P(B)` with a batch-means error, or `None`
    /// when `A` was never seen.
    pub(crate) fn estimate(&self) -> Option<Estimate> {
        let na = self.in_a.estimate().value;
        if na.is_nan() || na <= 0.0 {
            return None;
        }
        let value = self.in_ab.estimate().value / na - self.in_b.estimate().value;
        let per_batch: Vec<f64> = self
            .in_a
            .batch_means()
            .iter()
            .zip(self.in_ab.batch_means())
            .zip(self.in_b.batch_means())
            .filter(|((a, _), _)| **a > 0.0)
            .map(|((a, ab), b)| ab / a - b)
            .collect();
        Some(Estimate {
            value,
            std_error: std_error_of_mean(&per_batch),
        })
    }
}

/// Run one chain from the all-zero configuration.
pub fn simulate_stationary(cfg: &RunConfig) -> Result<StationaryStats> {
    cfg.validate()?;
    Ok(run_chain(cfg, SimRng::seed_from_u64(cfg.seed)))
}

/// Run `replicas` independent chains in parallel and merge them. Replica `r`
/// uses stream `r` of the configured seed.
pub fn simulate_replicas(cfg: &RunConfig, replicas: usize) -> Result<StationaryStats> {
    cfg.validate()?;
    if replicas == 0 {
        return Err(SandpileError::InvalidArgument(
            "need at least one replica".into(),
        ));
    }
    let runs: Vec<StationaryStats> = (0..replicas)
        .into_par_iter()
        .map(|r| run_chain(cfg, SimRng::split(cfg.seed, r as u64)))
        .collect();
    let mut it = runs.into_iter();
    let mut acc = it.next().expect("at least one replica");
    for s in it {
        acc.merge(&s);
    }
    Ok(acc)
}

fn run_chain(cfg: &RunConfig, mut rng: SimRng) -> StationaryStats {
    let params = cfg.params;
    let n = params.n_sites;
    let burn_in = cfg.burn_in_steps();
    let samples = cfg.steps - burn_in;
    let sites = cfg.sites();
    let mut stats = StationaryStats {
        config: cfg.clone(),
        replicas: 1,
        sample_count: 0,
        sites: sites
            .iter()
            .map(|&j| SiteStats::new(j, cfg.bins, samples))
            .collect(),
        empty_positions: vec![0; n],
        regularity_checked_from: params.half_or_more().then(|| (n * (n - 1)) as u64),
        regularity_violations: 0,
        multi_deficient_samples: 0,
        fsc_creations: 0,
        total_steps: cfg.steps,
        empty_fraction: BatchMeans::new(samples, BATCHES),
        dissipated: BatchMeans::new(samples, BATCHES),
        pairs: cfg
            .pair_probes
            .iter()
            .map(|&probe| PairCounts {
                probe,
                in_a: BatchMeans::new(samples, BATCHES),
                in_ab: BatchMeans::new(samples, BATCHES),
                in_b: BatchMeans::new(samples, BATCHES),
            })
            .collect(),
        recorded: Vec::with_capacity(if cfg.record_site.is_some() {
            samples as usize
        } else {
            0
        }),
    };
    let mut pile = Sandpile::empty(params);
    let mut prev_deficient = n;
    for t in 1..=cfg.steps {
        let step = pile.step(&mut rng);
        let e = pile.energies();
        let (mut empty, mut anomalous, mut last_empty) = (0usize, 0usize, 0usize);
        for (j, &v) in e.iter().enumerate() {
            if v == 0.0 {
                empty += 1;
                last_empty = j;
            } else if v < 0.5 {
                anomalous += 1;
            }
        }
        let deficient = empty + anomalous;
        if prev_deficient < 2 && deficient >= 2 {
            stats.fsc_creations += 1;
        }
        prev_deficient = deficient;
        if let Some(from) = stats.regularity_checked_from {
            if t >= from && (anomalous > 0 || empty > 1) {
                stats.regularity_violations += 1;
            }
        }
        if t <= burn_in {
            continue;
        }
        stats.sample_count += 1;
        if deficient >= 2 {
            stats.multi_deficient_samples += 1;
        }
        if empty == 1 {
            stats.empty_positions[last_empty] += 1;
        }
        stats.empty_fraction.push(empty as f64 / n as f64);
        stats.dissipated.push(step.dissipated);
        for s in stats.sites.iter_mut() {
            s.push(e[s.site]);
        }
        for p in stats.pairs.iter_mut() {
            let a = p.probe.a.contains(e[p.probe.y]);
            let b = p.probe.b.contains(e[p.probe.x]);
            p.in_a.push(a as u8 as f64);
            p.in_ab.push((a && b) as u8 as f64);
            p.in_b.push(b as u8 as f64);
        }
        if let Some(j) = cfg.record_site {
            stats.recorded.push(e[j]);
        }
    }
    stats
}
