//! Configurations of the one-dimensional model, site classification and the
//! structural predicates used throughout the crate.
//!
//! Sites are indexed `0..n` internally. Energies are `f64`; toppled sites are
//! set to exactly `0.0`, so emptiness is tested with `==`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};

/// The toppling threshold. Fixed to one throughout.
pub const CRITICAL_ENERGY: f64 = 1.0;

/// Parameters of the `(N, [a, b])` model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_sites: usize,
    pub a: f64,
    pub b: f64,
}

impl ModelParams {
    pub fn new(n_sites: usize, a: f64, b: f64) -> Result<Self> {
        if n_sites == 0 {
            return Err(SandpileError::InvalidParams("n_sites must be >= 1".into()));
        }
        if !(a.is_finite() && b.is_finite()) || !(0.0 <= a && a < b && b <= 1.0) {
            return Err(SandpileError::InvalidParams(format!(
                "need 0 <= a < b <= 1, got a = {a}, b = {b}"
            )));
        }
        Ok(ModelParams { n_sites, a, b })
    }

    pub fn critical_energy(&self) -> f64 {
        CRITICAL_ENERGY
    }

    /// Mean addition `(a + b) / 2`.
    pub fn mean_addition(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn variance_addition(&self) -> f64 {
        (self.b - self.a).powi(2) / 12.0
    }

    /// Additions of at least one half never create anomalous sites.
    pub fn half_or_more(&self) -> bool {
        self.a >= 0.5
    }

    pub fn check_amount(&self, u: f64) -> Result<()> {
        if u < self.a || u > self.b || !u.is_finite() {
            return Err(SandpileError::AmountOutOfRange {
                amount: u,
                a: self.a,
                b: self.b,
            });
        }
        Ok(())
    }
}

/// Reduced state of one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteLabel {
    Empty,
    Anomalous,
    Full,
    Unstable,
}

impl SiteLabel {
    /// The symbol used when printing reductions: `0`, `a`, `1` or `2`.
    pub fn code(self) -> char {
        match self {
            SiteLabel::Empty => '0',
            SiteLabel::Anomalous => 'a',
            SiteLabel::Full => '1',
            SiteLabel::Unstable => '2',
        }
    }

    /// Empty or anomalous.
    pub fn is_deficient(self) -> bool {
        matches!(self, SiteLabel::Empty | SiteLabel::Anomalous)
    }
}

/// Classify one energy. Boundaries: `0` is empty, `1/2` is full, `1` is unstable.
pub fn classify(e: f64) -> Result<SiteLabel> {
    if e.is_nan() || e < 0.0 {
        return Err(SandpileError::NegativeEnergy(e));
    }
    Ok(classify_unchecked(e))
}

#[inline]
pub(crate) fn classify_unchecked(e: f64) -> SiteLabel {
    if e == 0.0 {
        SiteLabel::Empty
    } else if e < 0.5 {
        SiteLabel::Anomalous
    } else if e < CRITICAL_ENERGY {
        SiteLabel::Full
    } else {
        SiteLabel::Unstable
    }
}

/// A vector of site energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    energies: Vec<f64>,
}

impl Configuration {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(SandpileError::InvalidParams(
                "configuration needs at least one site".into(),
            ));
        }
        if let Some(&e) = energies.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(SandpileError::NegativeEnergy(e));
        }
        Ok(Configuration { energies })
    }

    /// All sites empty.
    pub fn empty(n: usize) -> Self {
        Configuration {
            energies: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub(crate) fn energies_mut(&mut self) -> &mut [f64] {
        &mut self.energies
    }

    pub fn into_energies(self) -> Vec<f64> {
        self.energies
    }

    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }

    pub fn is_stable(&self) -> bool {
        self.energies.iter().all(|&e| e < CRITICAL_ENERGY)
    }

    pub(crate) fn check_stable(&self) -> Result<()> {
        match self.energies.iter().position(|&e| e >= CRITICAL_ENERGY) {
            Some(i) => Err(SandpileError::Unstable(i)),
            None => Ok(()),
        }
    }

    pub fn label(&self, j: usize) -> SiteLabel {
        classify_unchecked(self.energies[j])
    }

    /// Number of empty or anomalous sites.
    pub fn deficient_count(&self) -> usize {
        self.energies.iter().filter(|&&e| e < 0.5).count()
    }

    pub fn empty_count(&self) -> usize {
        self.energies.iter().filter(|&&e| e == 0.0).count()
    }

    pub fn anomalous_count(&self) -> usize {
        self.energies
            .iter()
            .filter(|&&e| e > 0.0 && e < 0.5)
            .count()
    }

    /// Index of the single empty site, if there is exactly one.
    pub fn sole_empty_site(&self) -> Option<usize> {
        let mut found = None;
        for (j, &e) in self.energies.iter().enumerate() {
            if e == 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(j);
            }
        }
        found
    }

    /// Maximum per-site absolute difference.
    pub fn sup_distance(&self, other: &Configuration) -> f64 {
        self.energies
            .iter()
            .zip(&other.energies)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Labels of every site of a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reduction {
    pub labels: Vec<SiteLabel>,
}

impl Reduction {
    /// Value of the reduction at `j` as used in the coefficient identities:
    /// 0 for empty, 1 for full. `None` for the other labels.
    pub fn unit_value(&self, j: usize) -> Option<u8> {
        match self.labels[j] {
            SiteLabel::Empty => Some(0),
            SiteLabel::Full => Some(1),
            _ => None,
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.labels {
            write!(f, "{}", l.code())?;
        }
        Ok(())
    }
}

pub fn reduce(c: &Configuration) -> Reduction {
    Reduction {
        labels: c.energies.iter().map(|&e| classify_unchecked(e)).collect(),
    }
}

/// At most one empty site and no anomalous sites.
pub fn is_regular(c: &Configuration) -> Result<bool> {
    c.check_stable()?;
    Ok(c.anomalous_count() == 0 && c.empty_count() <= 1)
}

/// Exhaustive search for an interval `W` of at least two sites with
/// `2 * energy[j] < deg_W(j)` for every `j` in `W`.
///
/// Only intervals need checking: a Zhang-FSC on a disconnected set restricts to
/// one on each component, and components of size one never qualify.
pub fn has_zhang_fsc(c: &Configuration) -> bool {
    let e = &c.energies;
    let n = e.len();
    for lo in 0..n {
        for hi in lo + 1..n {
            let ok = (lo..=hi).all(|j| {
                let deg = (j > lo) as u32 + (j < hi) as u32;
                2.0 * e[j] < deg as f64
            });
            if ok {
                return true;
            }
        }
    }
    false
}

/// Linear-time equivalent of [`has_zhang_fsc`] for stable configurations.
pub fn has_zhang_fsc_stable(c: &Configuration) -> bool {
    c.deficient_count() >= 2
}
