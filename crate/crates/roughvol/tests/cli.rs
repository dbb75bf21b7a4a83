use std::path::Path;
use std::process::{Command, Output};

use roughvol::paths::read_paths;

fn roughvol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughvol")).args(args).env_remove("ROUGHVOL_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV report (comment header lines stripped).
fn csv_rows(text: &str) -> Vec<csv::StringRecord> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes()).records().map(|r| r.unwrap()).collect()
}

fn csv_headers(text: &str) -> Vec<String> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes()).headers().unwrap().iter().map(String::from).collect()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("valid json")
}

#[test]
fn brownian_third_moment() {
    let o = roughvol(&["moment", "--hurst", "0.5", "--rho", "1", "--model", "linear:1", "--N", "3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    let value = v["summary"]["value"].as_f64().unwrap();
    assert!((value - 1.0).abs() < 1e-9, "{value}");
    assert_eq!(v["command"], "moment");
    assert_eq!(v["config"]["hurst"].as_f64(), Some(0.5));
    assert_eq!(v["config"]["model"], "linear:1");
}

#[test]
fn rate_check_passes_with_exit_zero() {
    let o = roughvol(&[
        "rate", "--hurst", "0.1", "--rho", "1", "--model", "linear:1", "--N", "3", "--n-list", "8,16,32,64,128,256", "--check",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(
        csv_headers(&text),
        ["n", "error", "error_estimate", "method", "rescaled", "fitted", "hurst", "rho", "T", "model", "N"]
    );
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 6);
    let errors: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]));
    assert!(text.contains("# check PASS slope"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PASS slope"));
}

#[test]
fn rate_check_failure_exits_two() {
    // ρ = 0 on this short grid sits outside the ±0.07 window around the
    // predicted unit rate
    let o = roughvol(&["rate", "--hurst", "0.1", "--rho", "0", "--N", "4", "--n-list", "8,16,32,64", "--check"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2), "{err}");
    assert!(err.contains("FAIL slope"), "{err}");
    let o = roughvol(&["rate", "--hurst", "0.1", "--rho", "0", "--N", "4", "--n-list", "8,16,32,64"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn lower_bound_sweep_is_positive() {
    let o = roughvol(&["lower-bound", "--sweep", "0.001:0.125:50", "--check"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(csv_headers(&text), ["H", "B1", "B2", "B3", "C2", "C3", "C2_minus_C3", "max_gap"]);
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let diff: f64 = r[6].parse().unwrap();
        let gap: f64 = r[7].parse().unwrap();
        assert!(diff > 0.0 && gap <= 1e-8, "{r:?}");
    }
}

#[test]
fn lower_bound_curve() {
    let o = roughvol(&["lower-bound", "--hurst", "0.1", "--n-list", "32,64,128", "--format", "json", "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let (n, e, s) = (r["n"].as_f64().unwrap(), r["error"].as_f64().unwrap(), r["rescaled"].as_f64().unwrap());
        assert!((e * n.powf(0.8) - s).abs() < 1e-9 * s.abs());
        assert!(s > 0.0);
    }
}

#[test]
fn usage_and_numeric_errors_exit_one() {
    for args in [
        &["bogus"][..],
        &["moment", "--hurst", "0.7"],
        &["moment", "--rho", "1.5"],
        &["moment", "--model", "cubic:1"],
        &["weak-error"],
        &["rate", "--n-list", "8,16"],
        &["moment", "--N", "0"],
    ] {
        let o = roughvol(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(roughvol(&["--help"]).status.code(), Some(0));
    assert_eq!(roughvol(&["--version"]).status.code(), Some(0));
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        let o = roughvol(&[
            "simulate", "--hurst", "0.2", "--N", "3", "--n", "8", "--paths", "20000", "--seed", "7", "--threads", threads,
            "--out", path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert!(o.stdout.is_empty());
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    let c = run("c.csv", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# roughvol "));
    assert!(!text.contains("a.csv"));

    for args in [
        &["discrete-moment", "--hurst", "0.1", "--rho", "0.7", "--N", "3", "--n", "16", "--method", "quadrature"][..],
        &["lower-bound", "--sweep", "0.01:0.15:7", "--format", "json"],
    ] {
        let outputs: Vec<Vec<u8>> = ["1", "3"]
            .iter()
            .map(|t| {
                let mut full = args.to_vec();
                full.extend(["--threads", t]);
                let o = roughvol(&full);
                assert_eq!(o.status.code(), Some(0));
                o.stdout
            })
            .collect();
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn discrete_and_weak_error_commands_agree() {
    let common = ["--hurst", "0.3", "--rho", "0.7", "--N", "3", "--n", "8", "--format", "json"];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(common);
        args.extend(extra);
        let o = roughvol(&args);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        json(&o)
    };
    let wick = run("discrete-moment", &["--method", "wick"])["summary"]["value"].as_f64().unwrap();
    let quad = run("discrete-moment", &["--method", "quadrature"])["summary"]["value"].as_f64().unwrap();
    let cont = run("moment", &[])["summary"]["value"].as_f64().unwrap();
    let weak = run("weak-error", &[])["summary"]["error"].as_f64().unwrap();
    assert!((wick - quad).abs() < 1e-6, "{wick} {quad}");
    assert!((cont - wick - weak).abs() < 1e-6, "{cont} {wick} {weak}");
}

#[test]
fn dump_terms_lists_expansion() {
    let o = roughvol(&["moment", "--hurst", "0.3", "--N", "4", "--dump-terms"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(csv_headers(&text), ["word", "term", "coefficient", "weight", "rho_power", "description"]);
    let words: std::collections::BTreeSet<String> = csv_rows(&text).iter().map(|r| r[0].to_string()).collect();
    assert_eq!(words.into_iter().collect::<Vec<_>>(), ["IIJ", "JJ"]);
}

#[test]
fn path_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("paths.bin");
    let o = roughvol(&[
        "simulate", "--hurst", "0.25", "--rho", "0.5", "--n", "4", "--T", "1.5", "--paths", "100", "--dump-paths",
        file.to_str().unwrap(), "--dump-count", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, records) = read_paths(&mut std::fs::File::open(Path::new(&file)).unwrap()).unwrap();
    assert_eq!(header.paths, 5);
    assert_eq!(header.n, 4);
    assert_eq!(header.intervals, 6);
    assert_eq!(header.hurst, 0.25);
    assert_eq!(records.len(), 5);
    for r in &records {
        assert_eq!(r.path.hat_w.len(), 6);
        assert_eq!(r.path.hat_w[0], 0.0);
        assert!(r.x_terminal.is_finite());
    }
}

#[test]
fn selfcheck_passes() {
    let o = roughvol(&["selfcheck", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.len() >= 8);
    assert!(checks.iter().all(|c| c["passed"] == true));
}
