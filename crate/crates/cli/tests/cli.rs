use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn zhang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zhang"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn verify_abelian_exits_zero() {
    let o = zhang(&[
        "verify", "--suite", "abelian", "--sites", "6", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("abelian PASS"));
}

#[test]
fn failing_suite_exits_two() {
    let o = zhang(&[
        "verify",
        "--suite",
        "coefficients",
        "--trials",
        "300",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("monotone decay"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(zhang(&["simulate", "--sites", "0"]).status.code(), Some(1));
    assert_eq!(
        zhang(&["simulate", "--a", "0.8", "--b", "0.2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(zhang(&["verify", "--suite", "nope"]).status.code(), Some(1));
    assert_eq!(zhang(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        zhang(&[
            "simulate",
            "--steps",
            "10",
            "--burn-in",
            "1.5",
            "--seed",
            "1"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(zhang(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = zhang(&[
        "simulate",
        "--sites",
        "3",
        "--steps",
        "100",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("one"), tmp.path().join("two"));
    for d in [&d1, &d2] {
        let o = zhang(&[
            "simulate",
            "--sites",
            "8",
            "--steps",
            "20000",
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (f1, f2) = (sorted_files(&d1), sorted_files(&d2));
    assert_eq!(f1.len(), 9);
    assert_eq!(f1, f2);
    let hist = String::from_utf8(f1[0].1.clone()).unwrap();
    assert!(hist.starts_with("bin_left,mass\n"));
    assert!(hist.lines().last().unwrap().starts_with("ZERO_ATOM,"));
}

#[test]
fn drawn_seed_is_printed_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("drawn");
    let o = zhang(&[
        "simulate",
        "--sites",
        "4",
        "--steps",
        "5000",
        "--out",
        d1.to_str().unwrap(),
    ]);
    let text = stdout(&o);
    let seed = text
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .to_string();
    seed.parse::<u64>().unwrap();
    let d2 = tmp.path().join("again");
    let o = zhang(&[
        "simulate",
        "--sites",
        "4",
        "--steps",
        "5000",
        "--seed",
        &seed,
        "--out",
        d2.to_str().unwrap(),
    ]);
    assert!(!stdout(&o).contains("drawn"));
    assert_eq!(sorted_files(&d1), sorted_files(&d2));
}

#[test]
fn json_summary_parses() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zhang(&[
        "simulate",
        "--sites",
        "5",
        "--a",
        "0.5",
        "--steps",
        "20000",
        "--seed",
        "2",
        "--format",
        "json",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary = tmp.path().join("N5_a0.5_b1_steps20000_seed2_summary.json");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(summary).unwrap()).unwrap();
    assert_eq!(v["sites"].as_array().unwrap().len(), 5);
    assert!((v["mean_dissipated"]["value"].as_f64().unwrap() - 0.75).abs() < 0.05);
}

#[test]
fn exact_onesite_shows_the_jump() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("f.csv");
    let o = zhang(&["exact-onesite", "--b", "0.5", "--out", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(f).unwrap();
    assert_eq!(text.lines().next(), Some("h,F,f"));
    let at_b: Vec<f64> = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("0.5,"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(at_b.len(), 2);
    assert!(at_b[0] > at_b[1]);
    let stdout_table = stdout(&zhang(&["exact-onesite", "--b", "0.5"]));
    assert_eq!(
        stdout_table,
        fs::read_to_string(tmp.path().join("f.csv")).unwrap()
    );
}

#[test]
fn couple_writes_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("c.csv");
    let o = zhang(&[
        "couple",
        "--mode",
        "reduction-match",
        "--sites",
        "5",
        "--a",
        "0.5",
        "--b",
        "1",
        "--runs",
        "50",
        "--seed",
        "3",
        "--out",
        f.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("50 of 50 met"));
    let text = fs::read_to_string(&f).unwrap();
    assert_eq!(text.lines().next(), Some("experiment,attempt,T,step,value"));
    assert!(text.lines().count() > 50);
    let periodic = zhang(&[
        "couple", "--mode", "exact", "--sites", "1", "--a", "0.5", "--b", "1", "--seed", "1",
    ]);
    assert_eq!(periodic.status.code(), Some(1));
    let eq = zhang(&[
        "couple", "--mode", "equalize", "--sites", "2", "--runs", "5", "--seed", "1",
    ]);
    assert!(stdout(&eq).contains("5 of 5 met"));
}

#[test]
fn sweep_emits_one_row_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zhang(&[
        "sweep",
        "--sizes",
        "4,6,8",
        "--steps",
        "20000",
        "--seed",
        "5",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let files = sorted_files(tmp.path());
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].0, "sweep_a0.5_b1_steps20000_seed5.csv");
    let text = String::from_utf8(files[0].1.clone()).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("n_sites,"));
    assert!(rows[1].starts_with("4,") && rows[3].starts_with("8,"));
}
