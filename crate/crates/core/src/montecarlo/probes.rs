use serde::Serialize;

use super::{PairProbe, StationaryStats};
use crate::error::{Result, SandpileError};
use crate::model::ModelParams;
use crate::stats::Estimate;

/// Stationary energy balance: mean loss per step against the mean addition.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConservationReport {
    pub target: f64,
    pub mean_dissipated: Estimate,
    pub discrepancy: f64,
}

impl ConservationReport {
    pub fn within(&self, tol: f64) -> bool {
        self.discrepancy <= tol
    }
}

pub fn conservation_probe(
    stats: &StationaryStats,
    params: &ModelParams,
) -> Result<ConservationReport> {
    if stats.sample_count == 0 {
        return Err(SandpileError::InsufficientSamples);
    }
    let target = params.mean_addition();
    let mean_dissipated = stats.mean_dissipated();
    Ok(ConservationReport {
        target,
        mean_dissipated,
        discrepancy: (mean_dissipated.value - target).abs(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuasiUnitRow {
    pub n_sites: usize,
    /// `max_j |mean_j - (a + b) / 2|`.
    pub max_mean_deviation: f64,
    pub max_variance: f64,
    pub central_variance: f64,
    pub central_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiUnitReport {
    pub target: f64,
    pub rows: Vec<QuasiUnitRow>,
    pub deviation_decreasing: bool,
    pub variance_decreasing: bool,
}

/// Per-size concentration of site energies around the mean addition.
pub fn quasi_unit_report(runs: &[StationaryStats]) -> Result<QuasiUnitReport> {
    let mut sizes: Vec<usize> = runs.iter().map(|s| s.params().n_sites).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(SandpileError::NeedMoreSizes(sizes.len()));
    }
    let first = runs[0].params();
    if !first.half_or_more()
        || runs
            .iter()
            .any(|s| s.params().a != first.a || s.params().b != first.b)
    {
        return Err(SandpileError::InvalidParams(
            "need a common [a, b] with a >= 1/2".into(),
        ));
    }
    if runs.iter().any(|s| s.sample_count < 2) {
        return Err(SandpileError::InsufficientSamples);
    }
    let target = first.mean_addition();
    let mut rows: Vec<QuasiUnitRow> = runs
        .iter()
        .map(|s| {
            let n = s.params().n_sites;
            let central = s
                .site(n / 2)
                .or(s.sites.get(s.sites.len() / 2))
                .expect("tracked sites");
            QuasiUnitRow {
                n_sites: n,
                max_mean_deviation: s
                    .sites
                    .iter()
                    .map(|x| (x.moments.mean - target).abs())
                    .fold(0.0, f64::max),
                max_variance: s.sites.iter().map(|x| x.variance()).fold(0.0, f64::max),
                central_variance: central.variance(),
                central_mean: central.moments.mean,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.n_sites);
    let decreasing = |f: fn(&QuasiUnitRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    Ok(QuasiUnitReport {
        target,
        deviation_decreasing: decreasing(|r| r.max_mean_deviation),
        variance_decreasing: decreasing(|r| r.max_variance),
        rows,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IndependenceEstimate {
    pub probe: PairProbe,
    /// `P(eta_x in B | eta_y in A) - P(eta_x in B)`; `None` when `A` never occurred.
    pub estimate: Option<Estimate>,
    pub flagged: bool,
}

/// Evaluate the pair probes recorded during the run.
pub fn independence_probe(stats: &StationaryStats) -> Vec<IndependenceEstimate> {
    stats
        .pair_counts()
        .iter()
        .map(|p| {
            let estimate = p.estimate();
            IndependenceEstimate {
                probe: p.probe(),
                flagged: estimate.is_none(),
                estimate,
            }
        })
        .collect()
}
