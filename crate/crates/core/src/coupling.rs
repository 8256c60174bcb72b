//! Coupling experiments: two copies of the chain driven so that they meet.
//!
//! * one site: shift coupling on the zero-hitting times, and exact coupling
//!   when those times are aperiodic;
//! * `a >= 1/2`: independent evolution until both reductions agree, then
//!   shared additions, after which the difference decays;
//! * `[a, b] = [0, 1]`: wait for a trigger state and cancel the differences
//!   with shifted additions `(U + delta) mod 1`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::Sandpile;
use crate::error::{Result, SandpileError};
use crate::model::{is_regular, reduce, Configuration, ModelParams};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CouplingMode {
    Shift,
    Exact,
    ReductionMatch,
    Equalize,
}

/// One attempt or phase of a coupling run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub attempt: u64,
    pub time: u64,
    pub success: bool,
    /// Per-step sup difference after a reduction match, or the shifted amounts
    /// used by an equalization attempt.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub mode: CouplingMode,
    pub met: bool,
    pub meeting_time: Option<u64>,
    pub diagnostics: Vec<AttemptRecord>,
}

/// Possible numbers of steps between successive zeros of the one-site chain:
/// `{n : (n - 1) a < 1 and n b > 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicityInfo {
    pub a: f64,
    pub b: f64,
    pub n_min: u64,
    /// `None` when `a = 0` and the set is unbounded.
    pub n_max: Option<u64>,
    pub gcd: u64,
    pub periodic: bool,
}

impl PeriodicityInfo {
    pub fn members(&self) -> Option<Vec<u64>> {
        self.n_max.map(|hi| (self.n_min..=hi).collect())
    }
}

pub fn periodicity_info(a: f64, b: f64) -> Result<PeriodicityInfo> {
    ModelParams::new(1, a, b)?;
    let mut n_min = 1u64;
    while n_min as f64 * b <= 1.0 {
        n_min += 1;
    }
    let n_max = (a > 0.0).then(|| {
        let mut m = n_min;
        while (m as f64) * a < 1.0 {
            m += 1;
        }
        m
    });
    let gcd = match n_max {
        Some(hi) if hi == n_min => n_min,
        _ => 1,
    };
    Ok(PeriodicityInfo {
        a,
        b,
        n_min,
        n_max,
        gcd,
        periodic: gcd > 1,
    })
}

/// Shift coupling, plus exact coupling when the zero times are aperiodic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneSiteCoupling {
    pub periodicity: PeriodicityInfo,
    /// First zero of each chain.
    pub zero_times: (Option<u64>, Option<u64>),
    pub shift: CouplingResult,
    pub exact: Option<CouplingResult>,
}

fn one_site_chain(a: f64, b: f64, start: f64) -> Result<Sandpile> {
    let p = ModelParams::new(1, a, b)?;
    Sandpile::new(p, Configuration::new(vec![start])?)
}

/// Two independent one-site chains from `starts`. The shift result meets once
/// both chains have visited zero; the exact result (aperiodic case only) meets
/// at the first common zero.
pub fn couple_one_site(
    a: f64,
    b: f64,
    starts: (f64, f64),
    seed: u64,
    max_steps: u64,
) -> Result<OneSiteCoupling> {
    let periodicity = periodicity_info(a, b)?;
    let (mut c1, mut c2) = (
        one_site_chain(a, b, starts.0)?,
        one_site_chain(a, b, starts.1)?,
    );
    let mut rng = SimRng::seed_from_u64(seed);
    let (mut t1, mut t2, mut common) = (None, None, None);
    for t in 1..=max_steps {
        c1.step(&mut rng);
        c2.step(&mut rng);
        let (z1, z2) = (c1.energies()[0] == 0.0, c2.energies()[0] == 0.0);
        if z1 && t1.is_none() {
            t1 = Some(t);
        }
        if z2 && t2.is_none() {
            t2 = Some(t);
        }
        if z1 && z2 && common.is_none() {
            common = Some(t);
        }
        let shift_done = t1.is_some() && t2.is_some();
        if shift_done && (periodicity.periodic || common.is_some()) {
            break;
        }
    }
    let shift_time = t1.zip(t2).map(|(x, y)| x.max(y));
    let shift = CouplingResult {
        mode: CouplingMode::Shift,
        met: shift_time.is_some(),
        meeting_time: shift_time,
        diagnostics: Vec::new(),
    };
    let exact = (!periodicity.periodic).then(|| CouplingResult {
        mode: CouplingMode::Exact,
        met: common.is_some(),
        meeting_time: common,
        diagnostics: Vec::new(),
    });
    Ok(OneSiteCoupling {
        periodicity,
        zero_times: (t1, t2),
        shift,
        exact,
    })
}

/// First time both one-site chains are empty, regardless of periodicity.
pub fn first_common_zero(
    a: f64,
    b: f64,
    starts: (f64, f64),
    seed: u64,
    max_steps: u64,
) -> Result<CouplingResult> {
    let (mut c1, mut c2) = (
        one_site_chain(a, b, starts.0)?,
        one_site_chain(a, b, starts.1)?,
    );
    let mut rng = SimRng::seed_from_u64(seed);
    let mut met = None;
    for t in 1..=max_steps {
        c1.step(&mut rng);
        c2.step(&mut rng);
        if c1.energies()[0] == 0.0 && c2.energies()[0] == 0.0 {
            met = Some(t);
            break;
        }
    }
    Ok(CouplingResult {
        mode: CouplingMode::Exact,
        met: met.is_some(),
        meeting_time: met,
        diagnostics: Vec::new(),
    })
}

/// Outcome of the reduction-matching coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionMatch {
    pub result: CouplingResult,
    /// First time both chains are regular.
    pub regular_time: Option<u64>,
    /// Reductions agreed at every step after the meeting time.
    pub stayed_matched: bool,
}

/// Sup difference below which the decay trace stops.
pub const DECAY_FLOOR: f64 = 1e-9;

/// Evolve two chains independently (chain `i` drawing from `seeds.i`) until
/// both are regular and their reductions agree, then feed both the additions
/// of the first chain and record the sup difference per step until it drops
/// below [`DECAY_FLOOR`].
pub fn couple_reduction_match(
    params: &ModelParams,
    starts: (Configuration, Configuration),
    seeds: (u64, u64),
    max_steps: u64,
) -> Result<ReductionMatch> {
    if !params.half_or_more() {
        return Err(SandpileError::InvalidParams(format!(
            "reduction matching needs a >= 1/2, got a = {}",
            params.a
        )));
    }
    let (mut c1, mut c2) = (
        Sandpile::new(*params, starts.0)?,
        Sandpile::new(*params, starts.1)?,
    );
    let mut rng = SimRng::seed_from_u64(seeds.0);
    let mut rng2 = SimRng::seed_from_u64(seeds.1);
    let both_regular = |x: &Sandpile, y: &Sandpile| -> bool {
        is_regular(x.config()).unwrap_or(false) && is_regular(y.config()).unwrap_or(false)
    };
    let mut regular_time = both_regular(&c1, &c2).then_some(0);
    let mut meeting = None;
    let mut t = 0;
    while t < max_steps {
        t += 1;
        c1.step(&mut rng);
        c2.step(&mut rng2);
        if regular_time.is_none() && both_regular(&c1, &c2) {
            regular_time = Some(t);
        }
        if regular_time.is_some_and(|r| t > r) && reduce(c1.config()) == reduce(c2.config()) {
            meeting = Some(t);
            break;
        }
    }
    let Some(meet) = meeting else {
        let result = CouplingResult {
            mode: CouplingMode::ReductionMatch,
            met: false,
            meeting_time: None,
            diagnostics: Vec::new(),
        };
        return Ok(ReductionMatch {
            result,
            regular_time,
            stayed_matched: true,
        });
    };
    let mut trace = vec![c1.config().sup_distance(c2.config())];
    let mut stayed_matched = true;
    while *trace.last().expect("nonempty") >= DECAY_FLOOR && t < max_steps {
        t += 1;
        let x = rng.site(params.n_sites);
        let u = rng.uniform(params.a, params.b);
        c1.apply(x, u);
        c2.apply(x, u);
        stayed_matched &= reduce(c1.config()) == reduce(c2.config());
        trace.push(c1.config().sup_distance(c2.config()));
    }
    let converged = *trace.last().expect("nonempty") < DECAY_FLOOR;
    let record = AttemptRecord {
        attempt: 0,
        time: meet,
        success: converged,
        trace,
    };
    let result = CouplingResult {
        mode: CouplingMode::ReductionMatch,
        met: true,
        meeting_time: Some(meet),
        diagnostics: vec![record],
    };
    Ok(ReductionMatch {
        result,
        regular_time,
        stayed_matched,
    })
}

/// A regular configuration whose empty site is `hole` (none if `hole >= n`),
/// with full energies drawn uniformly from `[1/2, 1)`.
pub fn random_regular(n: usize, hole: usize, rng: &mut SimRng) -> Configuration {
    let e = (0..n)
        .map(|j| {
            if j == hole {
                0.0
            } else {
                rng.uniform(0.5, 1.0).min(0.999_999)
            }
        })
        .collect();
    Configuration::new(e).expect("energies in [0, 1)")
}

/// Repeat [`couple_reduction_match`] from random regular starts with distinct
/// reductions. Attempt `i` uses stream `i` of `seed`; attempts run in parallel.
pub fn reduction_match_experiment(
    params: &ModelParams,
    attempts: u64,
    seed: u64,
    max_steps: u64,
) -> Result<Vec<ReductionMatch>> {
    (0..attempts)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::split(seed, i);
            let n = params.n_sites;
            let h1 = rng.site(n + 1);
            let mut h2 = rng.site(n);
            if h2 >= h1 {
                h2 += 1;
            }
            let starts = (
                random_regular(n, h1, &mut rng),
                random_regular(n, h2, &mut rng),
            );
            let seeds = (rng.next_u64(), rng.next_u64());
            couple_reduction_match(params, starts, seeds, max_steps).map(|mut r| {
                r.result.diagnostics.iter_mut().for_each(|d| d.attempt = i);
                r
            })
        })
        .collect()
}

/// True when the trace never increases by more than `slack`.
pub fn is_non_increasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Outcome of the `[0, 1]` equalization coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualizeCoupling {
    pub result: CouplingResult,
    pub attempts: u64,
    /// Every shifted amount `(U + delta) mod 1` handed to the second chain.
    pub shifted_amounts: Vec<f64>,
}

/// Slack for declaring the two chains equal after an equalizing sequence;
/// the shifted amounts are exact only up to rounding.
pub const EQUALIZE_TOL: f64 = 1e-12;

/// Single-chain part of the trigger: site 0 empty, every other site full and,
/// for more than two sites, below `1 - 2^-(n + 1)`.
pub fn is_trigger_state(c: &Configuration) -> bool {
    let e = c.energies();
    let n = e.len();
    let cap = if n > 2 {
        1.0 - 0.5f64.powi(n as i32 + 1)
    } else {
        1.0
    };
    e[0] == 0.0 && e[1..].iter().all(|&v| v >= 0.5 && v < cap)
}

/// Evolve two `[0, 1]` chains independently; whenever both are in the trigger
/// state, try to cancel the difference at sites `1..n` one addition at a time.
pub fn couple_equalize_zero_one(
    n_sites: usize,
    starts: (Configuration, Configuration),
    seed: u64,
    max_attempts: u64,
    max_steps: u64,
) -> Result<EqualizeCoupling> {
    let params = ModelParams::new(n_sites, 0.0, 1.0)?;
    if n_sites < 2 {
        return Err(SandpileError::InvalidParams(
            "equalization needs at least two sites".into(),
        ));
    }
    let (mut c1, mut c2) = (
        Sandpile::new(params, starts.0)?,
        Sandpile::new(params, starts.1)?,
    );
    let mut rng = SimRng::seed_from_u64(seed);
    let mut diagnostics = Vec::new();
    let mut shifted_amounts = Vec::new();
    let mut attempts = 0;
    let mut t = 0;
    let mut met = None;
    while t < max_steps && attempts < max_attempts {
        if !(is_trigger_state(c1.config()) && is_trigger_state(c2.config())) {
            t += 1;
            c1.step(&mut rng);
            c2.step(&mut rng);
            continue;
        }
        attempts += 1;
        let start = t;
        if c1.config().sup_distance(c2.config()) <= EQUALIZE_TOL {
            diagnostics.push(AttemptRecord {
                attempt: attempts,
                time: start,
                success: true,
                trace: Vec::new(),
            });
            c2.set_config(c1.config().clone());
            met = Some(t);
            break;
        }
        let mut amounts = Vec::with_capacity(n_sites - 1);
        let mut on_track = true;
        for j in 1..n_sites {
            t += 1;
            let x = rng.site(n_sites);
            let u = rng.unit();
            let delta = c1.energies()[j] - c2.energies()[j];
            let shifted = (u + delta).rem_euclid(1.0);
            amounts.push(shifted);
            let s1 = c1.apply(x, u);
            let s2 = c2.apply(x, shifted);
            let avalanche = s1.topplings > 0 || s2.topplings > 0;
            if x != j || u + delta >= 1.0 || u + delta < 0.0 || (n_sites > 2 && avalanche) {
                on_track = false;
                break;
            }
        }
        let success = on_track && c1.config().sup_distance(c2.config()) <= EQUALIZE_TOL;
        shifted_amounts.extend_from_slice(&amounts);
        diagnostics.push(AttemptRecord {
            attempt: attempts,
            time: start,
            success,
            trace: amounts,
        });
        if success {
            c2.set_config(c1.config().clone());
            met = Some(t);
            break;
        }
    }
    let result = CouplingResult {
        mode: CouplingMode::Equalize,
        met: met.is_some(),
        meeting_time: met,
        diagnostics,
    };
    Ok(EqualizeCoupling {
        result,
        attempts,
        shifted_amounts,
    })
}

/// Rows `experiment,attempt,T,step,value`; one row per trace entry, or one row
/// with empty step and value when the trace is empty.
pub fn write_coupling_csv<W: Write>(out: &mut W, runs: &[CouplingResult]) -> Result<()> {
    writeln!(out, "experiment,attempt,T,step,value")?;
    for (e, r) in runs.iter().enumerate() {
        for d in &r.diagnostics {
            if d.trace.is_empty() {
                writeln!(out, "{e},{},{},,", d.attempt, d.time)?;
            }
            for (k, v) in d.trace.iter().enumerate() {
                writeln!(out, "{e},{},{},{k},{v}", d.attempt, d.time)?;
            }
        }
        if r.diagnostics.is_empty() {
            let t = r.meeting_time.map_or(String::new(), |t| t.to_string());
            writeln!(out, "{e},0,{t},,")?;
        }
    }
    Ok(())
}
