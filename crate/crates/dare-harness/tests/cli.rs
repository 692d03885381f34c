use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dare_harness::manifest::RunManifest;

fn dare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dare")).args(args).output().expect("binary runs")
}

fn files_under(root: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p: PathBuf = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn all_is_deterministic_and_inventoried() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = dare(&["all", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = files_under(a.path());
    assert_eq!(fa, files_under(b.path()));
    for f in &fa {
        if f.ends_with(".csv") || f == "manifest.json" {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f} differs between runs"
            );
        }
    }
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    let listed: BTreeSet<String> = m.files.iter().map(|f| f.path.clone()).collect();
    assert_eq!(listed, fa);
    assert!(m.experiments.iter().all(|e| e.passed));
    for f in m.files.iter().filter(|f| f.sha256.is_some()) {
        assert_eq!(
            f.sha256.as_deref().unwrap(),
            dare_harness::manifest::sha256_file(&a.path().join(&f.path)).unwrap()
        );
    }
}

#[test]
fn theorem1_with_flags_writes_pass_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = dare(&["theorem1", "--d", "8", "--envs", "3", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theorem1/summary.json")).unwrap()).unwrap();
    assert_eq!(s["passed"], serde_json::Value::Bool(true));
    assert!(s["summary"]["regression_relative_error"].as_f64().unwrap() <= 1e-2);
    assert_eq!(s["summary"]["d"], 8);
}

#[test]
fn missing_config_is_usage_error() {
    let o = dare(&["gen", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(dare(&["theorem9"]).status.code(), Some(2));
    assert_eq!(dare(&["theorem1", "--bogus", "1"]).status.code(), Some(2));
    assert_eq!(dare(&[]).status.code(), Some(2));
}

#[test]
fn invalid_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sweep_lambda]\nlambdas = [10.0, 1.0]\n").unwrap();
    assert_eq!(dare(&["sweep-lambda", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&bad, "[theorem1]\nunknown_key = 3\n").unwrap();
    assert_eq!(dare(&["theorem1", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn failing_threshold_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    // an unreachable tolerance turns the closed-form check into a failure
    fs::write(&cfg, "[theorem1]\nn = 2000\ntolerance = 1e-12\n").unwrap();
    let o = dare(&["theorem1", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert!(!m.experiments[0].passed);
}

#[test]
fn gen_fit_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(dare(&["gen", "--n", "500", "--out", out]).status.code(), Some(0));
    for method in ["dare", "erm", "reweighted-erm", "groupdro"] {
        let o = dare(&["fit", "--method", method, "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(dare(&["eval", "--out", out]).status.code(), Some(0));
        let s: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("eval/summary.json")).unwrap()).unwrap();
        let acc = s["results"][0]["value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let o = dare(&["fit", "--method", "lasso", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}
