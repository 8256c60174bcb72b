//! One-dimensional abelian sandpile on `n` sites, used as the reference for
//! the reduced dynamics.
//!
//! Sites hold 0 or 1 grain when stable. A site with two or more grains gives
//! one grain to each neighbour; grains leaving the chain are lost.

use std::fmt;

use crate::error::{Result, SandpileError};
use crate::model::{Reduction, SiteLabel};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AsmConfig {
    pub grains: Vec<u32>,
}

impl AsmConfig {
    pub fn new(grains: Vec<u32>) -> Self {
        AsmConfig { grains }
    }

    /// Parse a string of digits such as `"11011"`.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                c.to_digit(10)
                    .ok_or_else(|| SandpileError::InvalidArgument(format!("bad digit {c:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(AsmConfig::new)
    }

    pub fn len(&self) -> usize {
        self.grains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grains.is_empty()
    }

    pub fn is_stable(&self) -> bool {
        self.grains.iter().all(|&g| g <= 1)
    }

    /// Stable with at most one empty site.
    pub fn is_recurrent(&self) -> bool {
        self.is_stable() && self.grains.iter().filter(|&&g| g == 0).count() <= 1
    }

    /// Reduction of a regular Zhang configuration read as grains.
    pub fn from_reduction(r: &Reduction) -> Result<Self> {
        r.labels
            .iter()
            .map(|l| match l {
                SiteLabel::Empty => Ok(0),
                SiteLabel::Full => Ok(1),
                SiteLabel::Unstable => Ok(2),
                SiteLabel::Anomalous => Err(SandpileError::InvalidArgument(
                    "anomalous site has no grain count".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(AsmConfig::new)
    }
}

impl fmt::Display for AsmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.grains {
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// Add a grain at `x` to a stable configuration, using the closed-form
/// description of one-dimensional avalanches.
///
/// Let `l` be the first empty site left of `x` (or the virtual site `-1`) and
/// `r` the first empty site right of `x` (or the virtual site `n`). All sites of
/// `[l, r]` inside the chain end up full except a new empty site at `h = l + r - x`;
/// a site `s` strictly between `l` and `r` topples `min(s - l, r - s, min(x, h) - l)`
/// times.
pub fn asm_add(c: &AsmConfig, x: usize) -> Result<(AsmConfig, Vec<u32>)> {
    let n = c.len();
    if x >= n {
        return Err(SandpileError::SiteOutOfRange {
            site: x,
            n_sites: n,
        });
    }
    if let Some(i) = c.grains.iter().position(|&g| g > 1) {
        return Err(SandpileError::Unstable(i));
    }
    let mut out = c.clone();
    let mut counts = vec![0u32; n];
    if c.grains[x] == 0 {
        out.grains[x] = 1;
        return Ok((out, counts));
    }
    let l: i64 = (0..x)
        .rev()
        .find(|&s| c.grains[s] == 0)
        .map_or(-1, |s| s as i64);
    let r: i64 = (x + 1..n)
        .find(|&s| c.grains[s] == 0)
        .map_or(n as i64, |s| s as i64);
    let lo = l.max(0) as usize;
    let hi = r.min(n as i64 - 1) as usize;
    for s in lo..=hi {
        out.grains[s] = 1;
    }
    let hole = (l + r - x as i64) as usize;
    out.grains[hole] = 0;
    let plateau = (x as i64).min(hole as i64) - l;
    for (s, k) in counts
        .iter_mut()
        .enumerate()
        .take(r as usize)
        .skip((l + 1) as usize)
    {
        let si = s as i64;
        *k = (si - l).min(r - si).min(plateau) as u32;
    }
    Ok((out, counts))
}

/// Relax by toppling unstable sites one at a time (lowest index first) until
/// stable. Returns the final configuration and per-site toppling counts.
pub fn asm_relax_bruteforce(c: &AsmConfig) -> (AsmConfig, Vec<u32>) {
    let n = c.len();
    let mut g = c.grains.clone();
    let mut counts = vec![0u32; n];
    while let Some(s) = g.iter().position(|&v| v >= 2) {
        g[s] -= 2;
        counts[s] += 1;
        if s > 0 {
            g[s - 1] += 1;
        }
        if s + 1 < n {
            g[s + 1] += 1;
        }
    }
    (AsmConfig::new(g), counts)
}

/// Add a grain at `x` and relax in waves, recording the configuration before
/// each group of topplings at equal distance from `x` and the final state.
/// Sites toppled in each group are returned alongside.
pub fn asm_relax_waves(c: &AsmConfig, x: usize) -> Vec<(AsmConfig, Vec<usize>)> {
    let n = c.len();
    let mut g = c.grains.clone();
    g[x] += 1;
    let mut trace = Vec::new();
    let topple = |g: &mut Vec<u32>, s: usize| {
        g[s] -= 2;
        if s > 0 {
            g[s - 1] += 1;
        }
        if s + 1 < n {
            g[s + 1] += 1;
        }
    };
    while g[x] >= 2 {
        trace.push((AsmConfig::new(g.clone()), vec![x]));
        topple(&mut g, x);
        let (mut left, mut right) = (x > 0, x + 1 < n);
        let mut d = 1;
        loop {
            let mut group = Vec::new();
            if left {
                if g[x - d] >= 2 {
                    group.push(x - d);
                } else {
                    left = false;
                }
            }
            if right {
                if g[x + d] >= 2 {
                    group.push(x + d);
                } else {
                    right = false;
                }
            }
            if group.is_empty() {
                break;
            }
            trace.push((AsmConfig::new(g.clone()), group.clone()));
            for &s in &group {
                topple(&mut g, s);
            }
            left = left && x - d > 0;
            right = right && x + d + 1 < n;
            d += 1;
        }
    }
    trace.push((AsmConfig::new(g), Vec::new()));
    trace
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_grain(c: &AsmConfig, x: usize) -> AsmConfig {
        let mut g = c.clone();
        g.grains[x] += 1;
        g
    }

    #[test]
    fn eleven_site_example() {
        let c = AsmConfig::parse("11011111101").unwrap();
        let (out, counts) = asm_add(&c, 6).unwrap();
        assert_eq!(out.to_string(), "11111011111");
        assert_eq!(counts, vec![0, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
        let (bf, bf_counts) = asm_relax_bruteforce(&add_grain(&c, 6));
        assert_eq!(bf, out);
        assert_eq!(bf_counts, counts);
    }

    #[test]
    fn eleven_site_wave_trace() {
        let c = AsmConfig::parse("11011111101").unwrap();
        let trace: Vec<String> = asm_relax_waves(&c, 6)
            .iter()
            .map(|(g, _)| g.to_string())
            .collect();
        let printed = [
            "11011121101",
            "11011202101",
            "11012020201",
            "11020121011",
            "11101121011",
            "11101202011",
            "11102020111",
            "11110120111",
            "11110201111",
            "11111011111",
        ];
        assert_eq!(trace, printed);
    }

    #[test]
    fn small_examples() {
        let (out, counts) = asm_add(&AsmConfig::new(vec![0]), 0).unwrap();
        assert_eq!(out.grains, vec![1]);
        assert_eq!(counts, vec![0]);

        // Brute force: 121 -> 202 -> 012 -> 020 -> 101, the middle site topples twice.
        let (out, counts) = asm_add(&AsmConfig::new(vec![1, 1, 1]), 1).unwrap();
        assert_eq!(out.grains, vec![1, 0, 1]);
        assert_eq!(counts, vec![1, 2, 1]);
        assert_eq!(
            asm_relax_bruteforce(&AsmConfig::new(vec![1, 2, 1])),
            (out, counts)
        );

        assert_eq!(
            asm_relax_bruteforce(&AsmConfig::new(vec![2])),
            (AsmConfig::new(vec![0]), vec![1])
        );
        assert!(matches!(
            asm_add(&AsmConfig::new(vec![2, 1]), 0),
            Err(SandpileError::Unstable(0))
        ));
    }

    fn recurrent_configs(n: usize) -> Vec<AsmConfig> {
        let mut v = vec![AsmConfig::new(vec![1; n])];
        for e in 0..n {
            let mut g = vec![1; n];
            g[e] = 0;
            v.push(AsmConfig::new(g));
        }
        v
    }

    #[test]
    fn closed_form_matches_bruteforce_exhaustively() {
        for n in 1..=10 {
            // every stable configuration, recurrent or not
            for mask in 0u32..(1 << n) {
                let c = AsmConfig::new((0..n).map(|i| (mask >> i) & 1).collect());
                for x in 0..n {
                    let fast = asm_add(&c, x).unwrap();
                    let slow = asm_relax_bruteforce(&add_grain(&c, x));
                    assert_eq!(fast, slow, "n={n} c={c} x={x}");
                    if c.is_recurrent() {
                        assert!(fast.0.is_recurrent());
                    }
                    for s in [0, n - 1] {
                        assert!(fast.1[s] <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn additions_commute_on_recurrent() {
        for n in 1..=8 {
            for c in recurrent_configs(n) {
                for x in 0..n {
                    for y in 0..n {
                        let xy = asm_add(&asm_add(&c, y).unwrap().0, x).unwrap().0;
                        let yx = asm_add(&asm_add(&c, x).unwrap().0, y).unwrap().0;
                        assert_eq!(xy, yx);
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]
            #[test]
            fn randomized_equivalence(n in 11usize..=64, hole in any::<prop::sample::Index>(),
                                      full in any::<bool>(), x in any::<prop::sample::Index>()) {
                let mut g = vec![1; n];
                if !full { g[hole.index(n)] = 0; }
                let c = AsmConfig::new(g);
                let x = x.index(n);
                prop_assert_eq!(asm_add(&c, x).unwrap(), asm_relax_bruteforce(&add_grain(&c, x)));
            }
        }
    }
}
