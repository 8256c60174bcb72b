use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use zhang_sandpile::coupling::{
    couple_equalize_zero_one, couple_one_site, reduction_match_experiment, write_coupling_csv,
    CouplingResult,
};
use zhang_sandpile::montecarlo::{
    export_run, quasi_unit_report, simulate_replicas, ExportFormat, RunConfig, StationaryStats,
};
use zhang_sandpile::onesite::{onesite_table, OneSiteDistribution};
use zhang_sandpile::stats::{std_error_of_mean, Estimate};
use zhang_sandpile::verify::{run_suite, Suite, VerifyConfig};
use zhang_sandpile::{Configuration, ModelParams, SandpileError, SimRng};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "zhang",
    version,
    about = "Zhang's one-dimensional continuous sandpile"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary run: per-site histograms and a summary table.
    Simulate(SimulateArgs),
    /// Exact one-site law as an (h, F, f) table.
    ExactOnesite(ExactArgs),
    /// Coupling experiments.
    Couple(CoupleArgs),
    /// Run a property suite; exit 2 if it fails.
    Verify(VerifyArgs),
    /// One stationary run per size, one summary row each.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long = "sites", default_value_t = 10)]
    sites: usize,
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, SandpileError> {
        ModelParams::new(self.sites, self.a, self.b)
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    /// Fraction of the steps discarded before measuring.
    #[arg(long = "burn-in", default_value_t = 0.10)]
    burn_in: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    bins: usize,
}

#[derive(Args, Clone)]
struct OutArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Independent chains merged into one result.
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Evenly spaced grid points on [0, 1]; h = b is always added.
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Shift,
    Exact,
    ReductionMatch,
    Equalize,
}

#[derive(Args)]
struct CoupleArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent experiments.
    #[arg(long, default_value_t = 100)]
    runs: u64,
    #[arg(long = "max-steps", default_value_t = 10_000_000)]
    max_steps: u64,
    /// Equalization attempts allowed per experiment.
    #[arg(long = "max-attempts", default_value_t = 100_000)]
    max_attempts: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    /// Fix the chain length instead of letting the suite choose.
    #[arg(long = "sites")]
    sites: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated chain lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: SandpileError| e.to_string())
}

enum Failure {
    Usage(String),
    Verify(String),
    Io(String),
}

impl From<SandpileError> for Failure {
    fn from(e: SandpileError) -> Self {
        match e {
            SandpileError::Io(m) => Failure::Io(m),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ExactOnesite(a) => exact_onesite(a),
        Command::Couple(a) => couple(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(EXIT_IO)
        }
    }
}

/// The given seed, or a fresh one that is printed so the run can be repeated.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        println!("seed {s} (drawn; pass --seed {s} to repeat)");
        s
    })
}

fn run_config(params: ModelParams, run: &RunArgs, seed: u64) -> Result<RunConfig, SandpileError> {
    let mut cfg = RunConfig::new(params, run.steps, seed);
    cfg.burn_in_fraction = run.burn_in;
    cfg.bins = run.bins;
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json_file(path: &Path, value: &serde_json::Value) -> Outcome {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn pm(e: Estimate) -> String {
    format!("{:.6} ± {:.6}", e.value, e.std_error)
}

fn simulate(args: SimulateArgs) -> Outcome {
    let params = args.model.params()?;
    let seed = resolve_seed(args.run.seed);
    let cfg = run_config(params, &args.run, seed)?;
    let stats = simulate_replicas(&cfg, args.replicas)?;
    let dir = args.out.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let files = export_run(&stats, &dir, args.out.format.into())?;
    let central = params.n_sites / 2;
    let mean = stats
        .site(central)
        .map(|s| s.mean())
        .expect("all sites tracked");
    println!(
        "central site {central} mean {}; empty-site frequency {}; dissipated per step {}; {} files in {}",
        pm(mean),
        pm(stats.empty_site_frequency()),
        pm(stats.mean_dissipated()),
        files.len(),
        dir.display()
    );
    Ok(())
}

fn exact_onesite(args: ExactArgs) -> Outcome {
    if args.points == 0 {
        return Err(Failure::Usage("--points must be >= 1".into()));
    }
    let d = OneSiteDistribution::new(args.b)?;
    let rows = onesite_table(&d, args.points);
    let mut buf = Vec::new();
    match args.out.format {
        Format::Csv => {
            writeln!(buf, "h,F,f")?;
            for r in &rows {
                writeln!(buf, "{},{},{}", r.h, r.cdf, r.pdf)?;
            }
        }
        Format::Json => {
            let v = json!({ "b": args.b, "f0": d.f0(), "rows": rows });
            serde_json::to_writer_pretty(&mut buf, &v)?;
            writeln!(buf)?;
        }
    }
    match &args.out.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(&buf)?;
            w.flush()?;
            println!(
                "F(0) = {:.6}; {} rows written to {}",
                d.f0(),
                rows.len(),
                path.display()
            );
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn random_start(n: usize, rng: &mut SimRng) -> Configuration {
    Configuration::new((0..n).map(|_| rng.unit()).collect()).expect("energies in [0, 1)")
}

fn meeting_summary(label: &str, times: &[f64], runs: usize) -> String {
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    format!(
        "{label}: {} of {runs} met; mean meeting time {}",
        times.len(),
        pm(Estimate {
            value: mean,
            std_error: std_error_of_mean(times)
        })
    )
}

fn couple(args: CoupleArgs) -> Outcome {
    let seed = resolve_seed(args.seed);
    let runs = args.runs;
    if runs == 0 {
        return Err(Failure::Usage("--runs must be >= 1".into()));
    }
    let (results, summary): (Vec<CouplingResult>, String) = match args.mode {
        Mode::Shift | Mode::Exact => {
            let (a, b) = (args.model.a, args.model.b);
            let mut out = Vec::new();
            for e in 0..runs {
                let mut rng = SimRng::split(seed, e);
                let starts = (rng.unit(), rng.unit());
                let c = couple_one_site(a, b, starts, rng.next_u64(), args.max_steps)?;
                let r = match args.mode {
                    Mode::Shift => c.shift,
                    _ => c.exact.ok_or_else(|| {
                        Failure::Usage(format!(
                            "zero times are periodic with period {}; exact coupling impossible",
                            c.periodicity.gcd
                        ))
                    })?,
                };
                out.push(r);
            }
            let times: Vec<f64> = out
                .iter()
                .filter_map(|r| r.meeting_time)
                .map(|t| t as f64)
                .collect();
            let label = if matches!(args.mode, Mode::Shift) {
                "shift coupling"
            } else {
                "exact coupling"
            };
            (out, meeting_summary(label, &times, runs as usize))
        }
        Mode::ReductionMatch => {
            let params = args.model.params()?;
            let rm = reduction_match_experiment(&params, runs, seed, args.max_steps)?;
            let times: Vec<f64> = rm
                .iter()
                .filter_map(|r| Some((r.result.meeting_time? - r.regular_time?) as f64))
                .collect();
            let n = params.n_sites as f64;
            let s = format!(
                "{} (geometric mean {:.4})",
                meeting_summary("reduction match T-T'", &times, runs as usize),
                n * n / (n - 1.0)
            );
            (rm.into_iter().map(|r| r.result).collect(), s)
        }
        Mode::Equalize => {
            if args.model.a != 0.0 || args.model.b != 1.0 {
                return Err(Failure::Usage(
                    "equalization coupling needs --a 0 --b 1".into(),
                ));
            }
            let n = args.model.sites;
            let mut out = Vec::new();
            for e in 0..runs {
                let mut rng = SimRng::split(seed, e);
                let starts = (random_start(n, &mut rng), random_start(n, &mut rng));
                let r = couple_equalize_zero_one(
                    n,
                    starts,
                    rng.next_u64(),
                    args.max_attempts,
                    args.max_steps,
                )?;
                out.push(r.result);
            }
            let times: Vec<f64> = out
                .iter()
                .filter_map(|r| r.meeting_time)
                .map(|t| t as f64)
                .collect();
            (out, meeting_summary("equalization", &times, runs as usize))
        }
    };
    if let Some(path) = &args.out.out {
        match args.out.format {
            Format::Csv => {
                let mut w = create(path)?;
                write_coupling_csv(&mut w, &results)?;
                w.flush()?;
            }
            Format::Json => write_json_file(path, &serde_json::to_value(&results)?)?,
        }
    }
    println!("{summary}");
    Ok(())
}

fn verify(args: VerifyArgs) -> Outcome {
    let seed = resolve_seed(args.seed);
    let mut cfg = VerifyConfig::new(args.suite, seed);
    cfg.n_sites = args.sites;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let report = run_suite(args.suite, &cfg)?;
    if let Some(path) = &args.out {
        write_json_file(path, &serde_json::to_value(&report)?)?;
    }
    println!("{}", report.summary());
    for m in &report.messages {
        eprintln!("  {m}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("{} suite", report.suite)))
    }
}

fn sweep_row(s: &StationaryStats) -> serde_json::Value {
    let p = s.params();
    let target = p.mean_addition();
    let central = s.site(p.n_sites / 2).expect("all sites tracked");
    let dev = s
        .sites
        .iter()
        .map(|x| (x.moments.mean - target).abs())
        .fold(0.0, f64::max);
    let var = s.sites.iter().map(|x| x.variance()).fold(0.0, f64::max);
    json!({
        "n_sites": p.n_sites,
        "max_mean_deviation": dev,
        "max_variance": var,
        "central_mean": central.moments.mean,
        "central_variance": central.variance(),
        "empty_site_frequency": s.empty_site_frequency().value,
        "mean_dissipated": s.mean_dissipated().value,
        "seed": s.config.seed,
    })
}

const SWEEP_COLUMNS: [&str; 8] = [
    "n_sites",
    "max_mean_deviation",
    "max_variance",
    "central_mean",
    "central_variance",
    "empty_site_frequency",
    "mean_dissipated",
    "seed",
];

fn sweep(args: SweepArgs) -> Outcome {
    let seed = resolve_seed(args.run.seed);
    let mut runs = Vec::new();
    for (i, &n) in args.sizes.iter().enumerate() {
        let params = ModelParams::new(n, args.a, args.b)?;
        let sub = SimRng::split(seed, i as u64).next_u64();
        let cfg = run_config(params, &args.run, sub)?;
        runs.push(simulate_replicas(&cfg, 1)?);
    }
    let rows: Vec<serde_json::Value> = runs.iter().map(sweep_row).collect();
    let dir = args.out.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let stem = format!(
        "sweep_a{}_b{}_steps{}_seed{seed}",
        args.a, args.b, args.run.steps
    );
    let path = match args.out.format {
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = create(&path)?;
            writeln!(w, "{}", SWEEP_COLUMNS.join(","))?;
            for r in &rows {
                let cells: Vec<String> = SWEEP_COLUMNS.iter().map(|c| r[c].to_string()).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            w.flush()?;
            path
        }
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            write_json_file(
                &path,
                &json!({ "a": args.a, "b": args.b, "steps": args.run.steps, "rows": rows }),
            )?;
            path
        }
    };
    for r in &rows {
        println!(
            "N={} max |mean - {}| = {:.5}, max variance {:.5}",
            r["n_sites"],
            (args.a + args.b) / 2.0,
            r["max_mean_deviation"].as_f64().unwrap_or(f64::NAN),
            r["max_variance"].as_f64().unwrap_or(f64::NAN)
        );
    }
    if let Ok(q) = quasi_unit_report(&runs) {
        println!(
            "deviation decreasing in N: {}; variance decreasing in N: {}",
            q.deviation_decreasing, q.variance_decreasing
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
