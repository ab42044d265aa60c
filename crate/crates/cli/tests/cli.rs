use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn movnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = movnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Data lines of a CSV written by the tool: provenance comment, header, rows.
fn csv_rows(text: &str) -> (String, String, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (comment, header, rows)
}

#[test]
fn missing_scenario_exits_2() {
    let out = movnet(&["evaluate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario not found"));
}

#[test]
fn empty_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    let o = dir.path().to_str().unwrap();
    let out = movnet(&["sweep", "--scenario", s.to_str().unwrap(), "--out", o]);
    assert_eq!(out.status.code(), Some(2));
    let out = movnet(&["sweep", "--scenario", s.to_str().unwrap(), "--out", o, "--grid", "mbs_relative_cost_mu="]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    let out = movnet(&[
        "evaluate",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "radio.not_a_key=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radio.not_a_key"));
}

#[test]
fn evaluate_table1_golden() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    run_ok(&["evaluate", "--scenario", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let (comment, header, rows) = csv_rows(&read(dir.path(), "delays.csv"));
    assert!(comment.starts_with("# manifest_hash=") && comment.ends_with("seed=1"));
    assert_eq!(header, "region,slot,tau_m,tau_s,util_m,util_s,violation,feasible,status");
    assert_eq!(rows.len(), 3);
    // regression values of the analytic model for this fixture (μs)
    let golden = [(372.46, 428.70), (135.24, 142.98), (335.16, 338.56)];
    for (row, (m, s)) in rows.iter().zip(golden) {
        let tm: f64 = row[2].parse::<f64>().unwrap() * 1e6;
        let ts: f64 = row[3].parse::<f64>().unwrap() * 1e6;
        assert!((tm - m).abs() < 1e-3 * m, "{row:?}");
        assert!((ts - s).abs() < 1e-3 * s, "{row:?}");
        assert_eq!(row[8], "ok");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["near_divergent_interference"], false);
    assert!(summary["provenance"]["manifest_hash"].is_string());
}

#[test]
fn evaluate_flags_near_divergent_interference() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    run_ok(&[
        "evaluate",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "radio.path_loss_alpha=2.1",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["near_divergent_interference"], true);
}

#[test]
fn single_replication_leaves_ci_empty() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    let out = run_ok(&[
        "simulate",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--replications",
        "1",
        "--set",
        "simulation.window_side_m=800",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("confidence intervals are left empty"));
    let (_, header, rows) = csv_rows(&read(dir.path(), "sim_report.csv"));
    assert_eq!(
        header,
        "setup_id,tier,mean,ci_lo,ci_hi,violation,n,analytic,analytic_in_ci,analytic_violation"
    );
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!(r[3].is_empty() && r[4].is_empty() && r[8].is_empty(), "{r:?}");
    }
}

#[test]
fn seed_changes_simulated_means() {
    let s = fixture("table1.json");
    let mut means = Vec::new();
    for seed in ["1", "2"] {
        let dir = tempfile::tempdir().unwrap();
        run_ok(&[
            "simulate",
            "--scenario",
            s.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--seed",
            seed,
            "--replications",
            "2",
            "--mode",
            "bernoulli",
            "--set",
            "simulation.window_side_m=800",
        ]);
        let (comment, _, rows) = csv_rows(&read(dir.path(), "sim_report.csv"));
        assert!(comment.ends_with(&format!("seed={seed}")));
        means.push(rows[0][2].clone());
    }
    assert_ne!(means[0], means[1]);
}

fn small_optimizer(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "--set",
        "optimizer.metaheuristic.max_iters=3",
        "--set",
        "optimizer.metaheuristic.population=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

#[test]
fn optimize_is_reproducible_and_sbs_only_at_unit_cost() {
    let s = fixture("single_region.json");
    let mut configs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["optimize".to_string(), "--scenario".into(), s.to_str().unwrap().into()];
        args.extend(["--out".to_string(), dir.path().to_str().unwrap().to_string()]);
        args.extend(small_optimizer(&[]));
        let refs: Vec<&str> = args.iter().map(|a| a.as_str()).collect();
        run_ok(&refs);
        configs.push(read(dir.path(), "config.json"));
        let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
        assert!(summary["mbs_share"].as_f64().unwrap() < 0.01);
        assert!(summary["reuse_fraction"].as_f64().is_some());
        let (_, header, rows) = csv_rows(&read(dir.path(), "trace.csv"));
        assert_eq!(header, "step,region,iteration,best_fitness,feasible_count");
        assert!(!rows.is_empty());
    }
    assert_eq!(configs[0], configs[1]);
}

#[test]
fn evaluate_accepts_optimizer_output() {
    let s = fixture("single_region.json");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = vec!["optimize".to_string(), "--scenario".into(), s.to_str().unwrap().into(), "--out".into(), d.into()];
    args.extend(small_optimizer(&[]));
    let refs: Vec<&str> = args.iter().map(|a| a.as_str()).collect();
    run_ok(&refs);
    let eval_dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    run_ok(&[
        "evaluate",
        "--scenario",
        s.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        eval_dir.path().to_str().unwrap(),
    ]);
    let (_, _, rows) = csv_rows(&read(eval_dir.path(), "delays.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][7], "true");
}

#[test]
fn sweep_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let s = fixture("table1.json");
    run_ok(&[
        "sweep",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--task",
        "evaluate",
        "--jobs",
        "2",
        "--grid",
        "radio.power_static_w+radio.power_mobile_w=5,10",
        "--grid",
        "radio.reuse_factor_k=1,3",
    ]);
    let (comment, header, rows) = csv_rows(&read(dir.path(), "sweep.csv"));
    assert!(comment.starts_with("# manifest_hash="));
    assert_eq!(
        header,
        "point,radio.power_static_w+radio.power_mobile_w,radio.reuse_factor_k,region,slot,metric,value"
    );
    let points: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(points.len(), 4);
    let p3: Vec<_> = rows.iter().filter(|r| r[0] == "3" && r[5] == "tau_s").collect();
    assert_eq!(p3.len(), 3);
    assert_eq!((p3[0][1].as_str(), p3[0][2].as_str()), ("10", "3"));
    // the last point reproduces the fixture itself
    let v: f64 = p3[1][6].parse().unwrap();
    assert!((v * 1e6 - 142.98).abs() < 0.2, "{v}");
}
