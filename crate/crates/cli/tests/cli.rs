use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modci_core::record::RunRecord;
use tempfile::TempDir;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The single-target config cut to one second.
fn short_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(shipped("single_target.toml")).unwrap();
    let path = dir.join("short.toml");
    std::fs::write(&path, text.replace("duration = 15.0", "duration = 1.0")).unwrap();
    path
}

fn modci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modci")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn simulate(dir: &Path, config: &Path, seeds: &str, extra: &[&str]) -> Vec<PathBuf> {
    let out_dir = dir.join("runs");
    let mut args = vec![
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        seeds,
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend(extra);
    ok(&modci(&args)).lines().map(PathBuf::from).collect()
}

#[test]
fn simulate_writes_one_record_per_seed() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let files = simulate(tmp.path(), &config, "0..3", &["--method", "modci"]);
    assert_eq!(files.len(), 3);
    for (seed, f) in files.iter().enumerate() {
        assert!(f.file_name().unwrap().to_str().unwrap().contains(&format!("seed{seed:04}")));
        let rec = RunRecord::load(f).unwrap();
        assert_eq!(rec.seed, seed as u64);
        assert_eq!(rec.nodes.len(), 2);
        assert_eq!(rec.fused.len(), 1);
    }
}

#[test]
fn records_are_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let config = short_config(a.path());
    let fa = simulate(a.path(), &config, "4", &[]);
    let fb = simulate(b.path(), &config, "4", &[]);
    assert_eq!(std::fs::read(&fa[0]).unwrap(), std::fs::read(&fb[0]).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(shipped("single_target.toml")).unwrap();
    let bad_dt = tmp.path().join("bad_dt.toml");
    std::fs::write(&bad_dt, text.replace("dt = 0.025", "dt = -0.025")).unwrap();
    let out = modci(&["simulate", "--config", bad_dt.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.dt"));

    let broken = tmp.path().join("broken.toml");
    std::fs::write(&broken, text.replace("noise_var = 0.05", "noise_var = ")).unwrap();
    let out = modci(&["simulate", "--config", broken.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let multi = shipped("multi_target.toml");
    let out = modci(&["simulate", "--config", multi.to_str().unwrap(), "--baseline-kf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_rows_and_aggregates() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let files = simulate(tmp.path(), &config, "0..4", &["--baseline-kf", "--method", "both"]);
    let rows = ok(&modci(&["metrics", files[0].to_str().unwrap()]));
    let mut lines = rows.lines();
    let header = lines.next().unwrap();
    for col in ["source_id", "algorithm", "mse", "mncm"] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }
    // Two RBPF nodes, two KF baselines, CI and modified CI at the processor.
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 6);
    assert_eq!(body.iter().filter(|l| l.contains(",baseline,kf,")).count(), 2);

    let dir = tmp.path().join("runs");
    let agg = ok(&modci(&["metrics", "--aggregate", dir.to_str().unwrap()]));
    assert!(agg.lines().next().unwrap().contains("mse_median,mse_iqr,mncm_median,mncm_iqr"));
    assert!(agg.lines().skip(1).all(|l| l.split(',').nth(3) == Some("4")));

    let report = tmp.path().join("report");
    ok(&modci(&["metrics", "--out", report.to_str().unwrap(), dir.to_str().unwrap()]));
    assert!(report.join("metrics.csv").is_file() && report.join("aggregate.csv").is_file());
}

#[test]
fn metrics_rejects_mixed_scenarios() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let a = simulate(tmp.path(), &config, "0", &[]);
    let other = tmp.path().join("other.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&other, text.replace("noise_var = 0.05", "noise_var = 0.1")).unwrap();
    let b = simulate(&tmp.path().join("b"), &other, "1", &[]);
    let out = modci(&["metrics", a[0].to_str().unwrap(), b[0].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

fn rewrite(path: &Path, edit: impl FnOnce(&mut RunRecord)) {
    let mut rec = RunRecord::load(path).unwrap();
    edit(&mut rec);
    std::fs::write(path, rec.to_json().unwrap()).unwrap();
}

#[test]
fn compare_reports_ties_and_wins() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let files = simulate(tmp.path(), &config, "0..5", &["--method", "both"]);

    for f in &files {
        rewrite(f, |r| r.fused[1].steps = r.fused[0].steps.clone());
    }
    let report = ok(&modci(&["compare", tmp.path().join("runs").to_str().unwrap()]));
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().all(|l| l.contains("0 wins, 0 losses, 5 ties")), "{report}");

    // Challenger gets the true state and half the covariance everywhere.
    for f in &files {
        rewrite(f, |r| {
            let truth = r.truth.targets[0].clone();
            for step in &mut r.fused[1].steps {
                for o in &mut step.outputs {
                    o.mean = truth.state(step.step).unwrap().to_vec();
                    o.cov.iter_mut().for_each(|v| *v *= 0.5);
                }
            }
        });
    }
    let json = tmp.path().join("cmp.json");
    let report = ok(&modci(&["compare", "--json", json.to_str().unwrap(), tmp.path().join("runs").to_str().unwrap()]));
    assert!(report.lines().all(|l| l.contains("5 wins, 0 losses, 0 ties")), "{report}");
    assert!(json.is_file());
}

#[test]
fn compare_needs_both_methods() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let files = simulate(tmp.path(), &config, "0", &["--method", "modci"]);
    let out = modci(&["compare", files[0].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let out = modci(&["compare", "--challenger", "nope", files[0].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_dumps_trajectories() {
    let tmp = TempDir::new().unwrap();
    let config = short_config(tmp.path());
    let files = simulate(tmp.path(), &config, "2", &[]);
    let out_dir = tmp.path().join("dump");
    ok(&modci(&["export", files[0].to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    let rec = RunRecord::load(&files[0]).unwrap();
    let lines = |name: &str| std::fs::read_to_string(out_dir.join(name)).unwrap().lines().count();
    assert_eq!(lines("truth.csv"), rec.truth.targets[0].states.len() + 1);
    let scans: usize = rec.scans.iter().flat_map(|s| &s.scans).map(Vec::len).sum();
    assert_eq!(lines("measurements.csv"), scans + 1);
    let streams = rec.nodes.len() + rec.baselines.len();
    assert_eq!(lines("estimates.csv"), streams * rec.times.len() + 1);
    assert!(lines("fused.csv") > 1);
}
