use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lsapc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsapc"))
        .args(args)
        .env("LSAPC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lsapc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_files(dir: &Path) -> Vec<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

/// Simulated correlated dataset at `root/sim`, returns its data directory.
fn simulate(root: &Path, seed: &str) -> PathBuf {
    let sim = root.join("sim");
    ok(&[
        "simulate", "--n", "30", "--p", "8", "--support", "3", "--noise-sd", "20", "--noise-xi", "0.3", "--slots", "5",
        "--seed", seed, "-o", s(&sim),
    ]);
    sim.join("data")
}

/// Every pipeline stage into `root`.
fn pipeline(root: &Path) {
    let data = simulate(root, "11");
    let d = s(&data);
    ok(&[
        "fit-gibbs", "--data", d, "--n-iter", "400", "--burn-in", "100", "--chib", "--seed", "3", "-o",
        s(&root.join("gibbs")),
    ]);
    ok(&["fit-gibbs", "--data", d, "--n-iter", "300", "--burn-in", "50", "--positivity", "-o", s(&root.join("gibbs_pos"))]);
    ok(&["fit-vb", "--data", d, "--fixed-l", "-1", "-o", s(&root.join("vb"))]);
    ok(&["fit-fl", "--data", d, "--folds", "3", "--seed", "5", "-o", s(&root.join("fl"))]);
    ok(&["fit-fl", "--data", d, "--lambda1", "1", "--lambda2", "2", "-o", s(&root.join("fl_fixed"))]);
    ok(&[
        "select-model", "--data", d, "--xi-grid", "-0.1,0,0.3,0.9", "--n-iter", "300", "--burn-in", "50", "--seed",
        "2", "-o", s(&root.join("select")),
    ]);
    ok(&[
        "study", "--reps", "2", "--n-values", "10,20", "--p", "10", "--support", "3", "--n-iter", "200", "--burn-in",
        "50", "--seed", "4", "-o", s(&root.join("study")),
    ]);
    ok(&["report", s(&root.join("select")), s(&root.join("study")), "-o", s(&root.join("report"))]);
}

fn csv_files(dir: &Path, prefix: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            csv_files(&path, prefix, out);
        } else if path.extension().is_some_and(|e| e == "csv") && !path.ends_with("timings.csv") {
            out.push(path.strip_prefix(prefix).unwrap().to_path_buf());
        }
    }
}

#[test]
fn full_pipeline_writes_manifested_outputs_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    for (dir, expected) in [
        ("sim", vec!["beta_true.csv", "config.json", "data/X.csv", "data/meta.csv", "data/y.csv"]),
        (
            "gibbs",
            vec!["chain.csv", "config.json", "estimate.csv", "marginal_likelihood.json", "summary.csv"],
        ),
        ("vb", vec!["config.json", "estimate.csv", "posterior.json", "summary.csv"]),
        ("fl", vec!["config.json", "cv.csv", "estimate.csv", "fl.json"]),
        ("fl_fixed", vec!["config.json", "estimate.csv", "fl.json"]),
        ("select", vec!["config.json", "selection.csv", "selection.json"]),
        ("study", vec!["config.json", "study.csv", "study_summary.json", "timings.csv"]),
        ("report", vec!["selection_report.csv", "study_report.csv"]),
    ] {
        let root = a.path().join(dir);
        assert_eq!(manifest_files(&root), expected, "{dir}");
        for f in expected {
            assert!(root.join(f).is_file(), "{dir}/{f}");
        }
    }

    let mut files = Vec::new();
    csv_files(a.path(), a.path(), &mut files);
    files.sort();
    assert!(files.len() >= 15);
    for f in &files {
        if f.starts_with("report") {
            continue;
        }
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{} differs between reruns", f.display());
        assert!(!x.contains(&b'\r'));
    }

    let chain = fs::read_to_string(a.path().join("gibbs_pos/chain.csv")).unwrap();
    for line in chain.lines().skip(1) {
        for cell in line.split(',').take(8) {
            assert!(cell.parse::<f64>().unwrap() >= 0.0);
        }
    }
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("select/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["dropped"], serde_json::json!([0.9]));
    let study = fs::read_to_string(a.path().join("study/study.csv")).unwrap();
    assert_eq!(study.lines().count(), 1 + 2 * 2 * 5);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "1");
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset_path": "{}", "gibbs": {{"n_iter": 50, "burn_in": 10}}, "seed": 9}}"#,
            s(&data)
        ),
    )
    .unwrap();
    let out = dir.path().join("g");
    ok(&["--config", s(&cfg), "fit-gibbs", "--n-iter", "70", "-o", s(&out)]);
    let chain = fs::read_to_string(out.join("chain.csv")).unwrap();
    assert_eq!(chain.lines().count(), 1 + 60);
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["gibbs"]["seed"], 9);
    assert_eq!(written["task"], "fit-gibbs");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = |name: &str| p.join(name);

    fs::write(p.join("bad.json"), r#"{"lsapc": {"alpha": 1}}"#).unwrap();
    let r = lsapc(&["--config", s(&p.join("bad.json")), "fit-vb", "--data", "x", "-o", s(&out("o1"))]);
    assert_eq!(r.status.code(), Some(2));

    let r = lsapc(&["fit-vb", "--data", s(&p.join("missing")), "-o", s(&out("o2"))]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!out("o2").exists());

    let bad = p.join("mismatch");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("y.csv"), "y\n1\n2\n3\n4\n").unwrap();
    fs::write(bad.join("X.csv"), "x1\n1\n2\n3\n4\n5\n").unwrap();
    let r = lsapc(&["fit-vb", "--data", s(&bad), "-o", s(&out("o3"))]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rows"));

    let data = simulate(p, "2");
    let r = lsapc(&["select-model", "--data", s(&data), "--xi-grid", "0.9", "-o", s(&out("o4"))]);
    assert_eq!(r.status.code(), Some(4));

    let r = lsapc(&["fit-gibbs", "--data", s(&data), "--n-iter", "10", "--burn-in", "10", "-o", s(&out("o5"))]);
    assert_eq!(r.status.code(), Some(2));

    let r = lsapc(&["no-such-command"]);
    assert_eq!(r.status.code(), Some(2));
}
