use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikewatch"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spikewatch-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(String::from)
        .collect()
}

fn meta(path: &Path) -> String {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    fs::read_to_string(PathBuf::from(name)).unwrap()
}

#[test]
fn simulate_writes_rows_and_sidecar() {
    let dir = scratch("simulate");
    let out = dir.join("s.csv");
    let o = run(&[
        "simulate", "--p", "100", "--s", "3", "--rho", "1", "--sigma0sq", "1", "--kappa", "500",
        "--horizon", "2000", "--seed", "7", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 2000);
    assert!(rows.iter().all(|r| r.split(',').count() == 100));
    let m = meta(&out);
    assert!(m.contains("command=simulate\n"));
    assert!(m.contains("seed=7\n"));
    assert!(m.contains("kappa=500\n"));
    assert!(m.contains("version="));
}

#[test]
fn simulate_missing_fraction() {
    let dir = scratch("missing");
    let out = dir.join("m.csv");
    let o = run(&[
        "simulate", "--p", "50", "--horizon", "400", "--missing", "0.3", "--seed", "1", "--out", s(&out),
    ]);
    assert!(o.status.success());
    let tokens: Vec<String> = data_rows(&out).iter().flat_map(|r| r.split(',').map(String::from).collect::<Vec<_>>()).collect();
    let frac = tokens.iter().filter(|t| *t == "nan").count() as f64 / tokens.len() as f64;
    assert!((frac - 0.3).abs() < 0.02, "{frac}");
}

#[test]
fn zero_rank_is_pure_noise() {
    let dir = scratch("rank0");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for (rho, out) in [("0", &a), ("50", &b)] {
        let o = run(&[
            "simulate", "--p", "5", "--s", "0", "--rho", rho, "--kappa", "0", "--horizon", "50", "--seed", "3",
            "--out", s(out),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(data_rows(&a), data_rows(&b));
}

#[test]
fn simulate_then_detect_finds_early_change() {
    let dir = scratch("detect");
    let stream = dir.join("s.csv");
    let trace = dir.join("trace.csv");
    assert!(run(&[
        "simulate", "--p", "10", "--s", "1", "--rho", "5", "--kappa", "0", "--horizon", "300", "--seed", "11",
        "--out", s(&stream),
    ])
    .status
    .success());
    let o = run(&["detect", "--input", s(&stream), "--w", "30", "--b", "30", "--out", s(&trace)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stderr.is_empty(), "unexpected warnings");
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("stopped=true"), "{stdout}");
    let k_hat: u64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("k_hat="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(k_hat <= 5, "{k_hat}");
    let rows = fs::read_to_string(&trace).unwrap();
    assert!(rows.starts_with("t,value,k_hat\n"));
    assert!(meta(&trace).contains("stopped=true"));
}

#[test]
fn detect_without_alarm_still_succeeds() {
    let dir = scratch("noalarm");
    let stream = dir.join("s.csv");
    let trace = dir.join("trace.csv");
    assert!(run(&["simulate", "--p", "3", "--horizon", "100", "--seed", "2", "--out", s(&stream)])
        .status
        .success());
    let o = run(&["detect", "--input", s(&stream), "--w", "20", "--b", "1000", "--out", s(&trace)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("stopped=false"));
    assert_eq!(data_rows(&trace).len(), 101);
}

#[test]
fn detect_rejects_masked_input() {
    let dir = scratch("masked");
    let stream = dir.join("s.csv");
    fs::write(&stream, "1.0,2.0\nnan,1.0\n").unwrap();
    let o = run(&["detect", "--input", s(&stream), "--b", "5", "--out", s(&dir.join("t.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

#[test]
fn malformed_file_is_a_data_error() {
    let dir = scratch("malformed");
    let stream = dir.join("s.csv");
    fs::write(&stream, "1.0,2.0\n3.0,abc\n").unwrap();
    let o = run(&["detect", "--input", s(&stream), "--b", "5", "--out", s(&dir.join("t.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8(o.stderr).unwrap().contains(":2:"));
}

#[test]
fn unknown_flags_and_bad_configs_are_usage_errors() {
    let dir = scratch("usage");
    let o = run(&["simulate", "--p", "3", "--horizon", "5", "--bogus", "1", "--out", s(&dir.join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--p", "3", "--s", "5", "--horizon", "5", "--out", s(&dir.join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_table_and_no_root() {
    let dir = scratch("bounds");
    let out = dir.join("b.csv");
    let o = run(&["bounds", "--b", "10,20", "--d", "8", "--eps", "0.25,0.4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("b,d,eps,p,"));
    assert!(meta(&out).contains("command=bounds"));

    let o = run(&["bounds", "--b", "10", "--d", "1", "--eps", "0.25", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8(o.stderr).unwrap().contains("no root"));
}

#[test]
fn sketch_dump_and_reload_round_trip() {
    let dir = scratch("sketch");
    let stream = dir.join("s.csv");
    let (a, b, op) = (dir.join("a.csv"), dir.join("b.csv"), dir.join("op.csv"));
    assert!(run(&["simulate", "--p", "20", "--horizon", "30", "--seed", "4", "--out", s(&stream)])
        .status
        .success());
    let o = run(&[
        "sketch", "--input", s(&stream), "--m", "5", "--seed", "9", "--operator-out", s(&op), "--out", s(&a),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&op).len(), 5);
    assert!(data_rows(&op).iter().all(|r| r.split(',').count() == 20));
    let o = run(&["sketch", "--input", s(&stream), "--operator", s(&op), "--out", s(&b)]);
    assert!(o.status.success());
    assert_eq!(data_rows(&a), data_rows(&b));
    assert!(data_rows(&a).iter().all(|r| r.split(',').count() == 5));

    // detect can consume the operator directly
    let t = dir.join("t.csv");
    let o = run(&["detect", "--input", s(&stream), "--operator", s(&op), "--w", "10", "--b", "1e9", "--out", s(&t)]);
    assert!(o.status.success());
    assert!(meta(&t).contains("dim=5"));
}

#[test]
fn track_handles_missing_entries() {
    let dir = scratch("track");
    let stream = dir.join("s.csv");
    let trace = dir.join("t.csv");
    assert!(run(&[
        "simulate", "--p", "30", "--s", "3", "--rho", "1", "--sigma0sq", "0.01", "--kappa", "200", "--horizon", "400",
        "--missing", "0.3", "--seed", "5", "--out", s(&stream),
    ])
    .status
    .success());
    let o = run(&["track", "--input", s(&stream), "--s", "3", "--threshold", "1.0", "--seed", "1", "--out", s(&trace)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&trace);
    assert_eq!(rows[0], "t,stat_max,stat_norm,observed_count,skipped");
    assert_eq!(rows.len(), 401);
    let alarm: u64 = String::from_utf8(o.stdout)
        .unwrap()
        .trim()
        .strip_prefix("alarm_time=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(alarm > 200 && alarm < 260, "{alarm}");
}

#[test]
fn calibrate_reports_threshold() {
    let dir = scratch("calibrate");
    let out = dir.join("c.csv");
    let o = run(&[
        "calibrate", "--p", "3", "--w", "20", "--target-arl", "100", "--replicates", "100", "--b-hi", "50",
        "--seed", "2", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows[0], "b,arl,arl_stderr,replicates,censored,cap,converged");
    let arl: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((arl - 100.0).abs() <= 10.0);
    assert!(meta(&out).contains("history="));

    let o = run(&[
        "calibrate", "--p", "3", "--w", "20", "--target-arl", "1", "--replicates", "100", "--seed", "2", "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn sweep_is_byte_identical_on_rerun() {
    let dir = scratch("sweep");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    let args = |out: &Path| {
        vec![
            "sweep".to_string(), "--p".into(), "12".into(), "--s".into(), "2".into(), "--rho".into(), "1,3".into(),
            "--m".into(), "2,6".into(), "--w".into(), "15".into(), "--stride".into(), "1".into(),
            "--target-arl".into(), "50".into(), "--cal-replicates".into(), "100".into(), "--replicates".into(),
            "50".into(), "--b-hi".into(), "60".into(), "--seed".into(), "8".into(), "--out".into(),
            s(out).to_string(),
        ]
    };
    assert!(bin().args(args(&a)).output().unwrap().status.success());
    assert!(bin().args(args(&b)).output().unwrap().status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(data_rows(&a).len(), 5);
    assert!(meta(&a).contains("ms=2;6"));
}
