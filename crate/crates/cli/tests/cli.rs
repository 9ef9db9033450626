use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsmooth"))
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reference_config() -> PathBuf {
    root().join("configs/reference.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn qsmooth")
}

fn cheap_config(dir: &Path) -> PathBuf {
    let path = dir.join("cheap.json");
    std::fs::write(&path, r#"{"omega": 2.0, "gamma_o": 0.5, "gamma_u": 0.5, "dt": 0.002, "T": 4.0, "theta_grid_n": 256, "seed": 1}"#)
        .unwrap();
    path
}

/// Rows of a CSV after the provenance comment and the column line.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# qsmooth "));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = rows(path);
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

#[test]
fn q1_matches_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["estimate", "--config", reference_config().to_str().unwrap(), "--estimator", "q1", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = std::fs::read(dir.path().join("q1.csv")).unwrap();
    let want = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/q1_reference.csv")).unwrap();
    assert!(got == want, "q1 output differs from the fixture");
}

#[test]
fn golden_fixture_agrees_with_weighted_ensemble() {
    use qsmooth::montecarlo::{weighted_ensemble, z_score};
    use qsmooth::retrofilter::propagate_effect;
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/q1_reference.csv");
    let (t, y, z) = (column(&fixture, "t"), column(&fixture, "y"), column(&fixture, "z"));
    let p = qsmooth::Params::reference(0.5);
    let eff = propagate_effect(&p, p.block).unwrap();
    let probes = [1.25, 2.25, 3.25];
    let mc = weighted_ensemble(&p, &eff, &probes, 20_000, 11).unwrap();
    for e in &mc {
        let k = t.iter().position(|&x| (x - e.t).abs() < 1e-9).unwrap();
        let zy = z_score(e.smoothed.y, e.smoothed.se_y, y[k], 0.0);
        let zz = z_score(e.smoothed.z, e.smoothed.se_z, z[k], 0.0);
        assert!(zy < 4.0 && zz < 4.0, "t={} y {zy:.2} SE, z {zz:.2} SE", e.t);
    }
    let r = column(&fixture, "R");
    assert!(r[1..r.len() - 1].iter().all(|&x| x < 1.0));
}

#[test]
fn q8_leaves_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--estimator", "q8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(column(&out.join("q8.csv"), "R").iter().any(|&r| r > 1.0));
}

#[test]
fn record_estimators_carry_their_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let out = dir.path().join("out");
    for est in ["q5", "q7"] {
        let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--estimator", est, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let (header, _) = rows(&out.join(format!("{est}.csv")));
        assert_eq!(header.last().map(String::as_str), Some("u"));
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("q5_cdj.json")).unwrap()).unwrap();
    assert!(meta["n_roots"].as_u64().unwrap() >= 1);
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("stderr is one JSON object")
}

#[test]
fn unknown_estimator_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate", "--config", reference_config().to_str().unwrap(), "--estimator", "q9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
}

#[test]
fn empty_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, "").unwrap();
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--estimator", "q1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn invalid_rates_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"omega": 2.0, "gamma_o": -1.0, "gamma_u": 0.5, "dt": 0.001, "T": 4.0, "theta_grid_n": 256, "seed": 0}"#)
        .unwrap();
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--estimator", "q1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_and_version_exit_zero() {
    assert!(run(&["--help"]).status.success());
    let v = run(&["--version"]);
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "0")] {
        let o = run(&["--threads", threads, "costs", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["costs_q1.csv", "costs_q3.csv", "costs_q6.csv", "c5.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = run(&["--seed", seed, "estimate", "--config", cfg.to_str().unwrap(), "--estimator", "q2", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let first = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first(a.join("q2.csv")), first(b.join("q2.csv")));
}

#[test]
fn costs_only_c5_reports_each_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["costs", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--only", "c5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c5: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c5["q5"].as_f64(), Some(0.0));
    for id in ["q2", "q3", "q4", "q6", "q7"] {
        assert!(c5[id].as_f64().unwrap() > 0.0, "{id}");
    }
    assert!(!out.join("costs_q1.csv").exists());
}

#[test]
fn jump_average_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cheap_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["costs", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jump-average", "--only", "c2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = rows(&out.join("jump_average_table.csv"));
    assert_eq!(header, ["cost", "q1", "q2", "q3", "q6_q7", "q8", "min", "flags"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["c1", "c2", "c3", "c8"]);
    assert_eq!(rows[2][1], "NA");
    assert_eq!(rows[2][5], "NA");
    for (r, est) in rows.iter().zip(["q1", "q2", "q3", "q8"]) {
        assert_eq!(r[6], est);
        assert_eq!(r[7], "min-on-diagonal");
    }
    let (header, _) = self::rows(&out.join("costs_q2.csv"));
    assert_eq!(header, ["t", "c2"]);
}

#[test]
fn verify_classical_equivalence_passes() {
    let o = run(&["verify", "classical-equivalence"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_invariants_passes() {
    let o = run(&["verify", "invariants", "--config", reference_config().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}
