use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::json;

use super::{RunConfig, StationaryStats};
use crate::error::{Result, SandpileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = SandpileError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(SandpileError::InvalidArgument(format!(
                "unknown format {other:?}"
            ))),
        }
    }
}

/// File-name stem encoding size, addition interval, length and seed.
pub fn run_tag(cfg: &RunConfig) -> String {
    let p = &cfg.params;
    format!(
        "N{}_a{}_b{}_steps{}_seed{}",
        p.n_sites, p.a, p.b, cfg.steps, cfg.seed
    )
}

fn masses(stats: &StationaryStats, site: usize) -> Result<(Vec<(f64, f64)>, f64)> {
    let s = stats.site(site).ok_or(SandpileError::SiteOutOfRange {
        site,
        n_sites: stats.params().n_sites,
    })?;
    let total = stats.sample_count.max(1) as f64;
    let bins = s.histogram.len();
    let rows = s
        .histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 / bins as f64, c as f64 / total))
        .collect();
    Ok((rows, s.zero_atom as f64 / total))
}

/// Two-column `(bin_left, mass)` table with a trailing `ZERO_ATOM` row.
pub fn write_histogram_csv<W: Write>(
    out: &mut W,
    stats: &StationaryStats,
    site: usize,
) -> Result<()> {
    let (rows, zero) = masses(stats, site)?;
    writeln!(out, "bin_left,mass")?;
    for (left, m) in rows {
        writeln!(out, "{left},{m}")?;
    }
    writeln!(out, "ZERO_ATOM,{zero}")?;
    Ok(())
}

pub fn histogram_json(stats: &StationaryStats, site: usize) -> Result<serde_json::Value> {
    let (rows, zero) = masses(stats, site)?;
    let bins: Vec<_> = rows
        .into_iter()
        .map(|(l, m)| json!({ "bin_left": l, "mass": m }))
        .collect();
    Ok(json!({ "site": site, "bins": bins, "zero_atom": zero }))
}

/// One row per tracked site.
pub fn write_summary_csv<W: Write>(out: &mut W, stats: &StationaryStats) -> Result<()> {
    writeln!(out, "site,mean,mean_se,variance,zero_atom")?;
    let total = stats.sample_count.max(1) as f64;
    for s in &stats.sites {
        let m = s.mean();
        writeln!(
            out,
            "{},{},{},{},{}",
            s.site,
            m.value,
            m.std_error,
            s.variance(),
            s.zero_atom as f64 / total
        )?;
    }
    Ok(())
}

fn summary_json(stats: &StationaryStats) -> serde_json::Value {
    let total = stats.sample_count.max(1) as f64;
    let sites: Vec<_> = stats
        .sites
        .iter()
        .map(|s| {
            let m = s.mean();
            json!({ "site": s.site, "mean": m.value, "mean_se": m.std_error,
                    "variance": s.variance(), "zero_atom": s.zero_atom as f64 / total })
        })
        .collect();
    json!({
        "params": stats.params(),
        "steps": stats.config.steps,
        "seed": stats.config.seed,
        "samples": stats.sample_count,
        "empty_site_frequency": stats.empty_site_frequency(),
        "mean_dissipated": stats.mean_dissipated(),
        "sites": sites,
    })
}

/// Write per-site histograms and a summary table into `dir`.
pub fn export_run(
    stats: &StationaryStats,
    dir: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let tag = run_tag(&stats.config);
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Json => "json",
    };
    let mut written = Vec::new();
    let mut emit =
        |name: String, f: &mut dyn FnMut(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path)?);
            f(&mut w)?;
            w.flush()?;
            written.push(path);
            Ok(())
        };
    for s in &stats.sites {
        let site = s.site;
        emit(
            format!("{tag}_site{site}_hist.{ext}"),
            &mut |w| match format {
                ExportFormat::Csv => write_histogram_csv(w, stats, site),
                ExportFormat::Json => write_json(w, &histogram_json(stats, site)?),
            },
        )?;
    }
    emit(format!("{tag}_summary.{ext}"), &mut |w| match format {
        ExportFormat::Csv => write_summary_csv(w, stats),
        ExportFormat::Json => write_json(w, &summary_json(stats)),
    })?;
    Ok(written)
}

fn write_json<W: Write>(w: &mut W, v: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, v).map_err(|e| SandpileError::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::model::ModelParams;

    #[test]
    fn histogram_csv_layout() {
        let p = ModelParams::new(2, 0.0, 1.0).unwrap();
        let mut c = RunConfig::new(p, 1000, 5);
        c.bins = 4;
        let s = simulate_stationary(&c).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &s, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "bin_left,mass");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[4].starts_with("0.75,"));
        assert!(lines[5].starts_with("ZERO_ATOM,"));
        let total: f64 = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(run_tag(&c), "N2_a0_b1_steps1000_seed5");
        let j = histogram_json(&s, 1).unwrap();
        assert_eq!(j["bins"].as_array().unwrap().len(), 4);
        assert!(histogram_json(&s, 7).is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<ExportFormat>().unwrap(), ExportFormat::Csv);
        assert!("xml".parse::<ExportFormat>().is_err());
    }
}
