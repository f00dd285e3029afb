mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn lqmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqmdp")).args(args).output().unwrap()
}

fn smoke_path() -> String {
    common::workspace_root().join("configs/smoke.toml").to_string_lossy().into_owned()
}

fn run_smoke(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_string_lossy().into_owned();
    let mut args = vec!["run", "--config", smoke_path().leak(), "--out", out.leak(), "--quiet"];
    args.extend_from_slice(extra);
    lqmdp(&args)
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(1).filter(|l| !l.is_empty()).count()
}

#[test]
fn missing_config_exits_with_config_code() {
    let out = lqmdp(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn malformed_config_reports_line_and_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(smoke_path()).unwrap().replace("lambda = 2.0", "lambda = \"two\"");
    fs::write(&bad, text).unwrap();
    let out = lqmdp(&["run", "--config", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("noseed.toml");
    let text = fs::read_to_string(smoke_path()).unwrap().replace("seed = 2024\n", "");
    fs::write(&bad, text).unwrap();
    let out = lqmdp(&["run", "--config", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn smoke_run_succeeds_and_manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_smoke(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&dir.path().join("regret.csv")), 3);
    assert_eq!(data_rows(&dir.path().join("param_error.csv")), 3);
    for svg in ["regret.svg", "avg_regret.svg", "param_error.svg", "trajectory.svg"] {
        assert!(dir.path().join(svg).exists(), "{svg}");
    }

    let manifest: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["partial"].as_bool(), Some(false));
    assert_eq!(manifest["seed"].as_integer(), Some(2024));
    let files = manifest["files"].as_array().unwrap();
    let mut listed: Vec<String> = Vec::new();
    for f in files {
        let name = f["name"].as_str().unwrap();
        let bytes = fs::read(dir.path().join(name)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{name}");
        assert_eq!(f["bytes"].as_integer().unwrap() as usize, bytes.len(), "{name}");
        listed.push(name.to_string());
    }
    for entry in fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        if name != "manifest.toml" {
            assert!(listed.contains(&name), "{name} missing from manifest");
        }
    }
}

#[test]
fn overrides_change_seed_and_episode_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_smoke(&a, &[]).status.code(), Some(0));
    assert_eq!(run_smoke(&b, &["--seed", "7", "--episodes", "2"]).status.code(), Some(0));
    assert_eq!(data_rows(&b.join("regret.csv")), 2);
    let manifest: toml::Table = toml::from_str(&fs::read_to_string(b.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(7));
    assert_ne!(fs::read(a.join("theta_history.csv")).unwrap(), fs::read(b.join("theta_history.csv")).unwrap());
}

#[test]
fn tracking_shorthand_matches_expanded_cost() {
    let dir = tempfile::tempdir().unwrap();
    let expanded = dir.path().join("full.toml");
    let text = fs::read_to_string(smoke_path()).unwrap().replace(
        "kind = \"tracking\"\nc = [[1.0, 0.0]]\nm = [[1.0]]\nr = [[1.0]]",
        "kind = \"full\"\nw = [[1.0, 0.0], [0.0, 0.0]]\nf = [[-1.0], [0.0]]\nd = [[0.0], [0.0]]\nm = [[1.0]]\nh = [[0.0]]\nr = [[1.0]]",
    );
    assert!(text.contains("kind = \"full\""));
    fs::write(&expanded, text).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_smoke(&a, &[]).status.code(), Some(0));
    let out = lqmdp(&["run", "--config", expanded.to_str().unwrap(), "--out", b.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["regret.csv", "param_error.csv", "theta_history.csv", "theta_true.csv", "trajectory.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plot_on_empty_regret_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_smoke(dir.path(), &[]).status.code(), Some(0));
    for e in fs::read_dir(dir.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            fs::remove_file(p).unwrap();
        }
    }
    fs::write(dir.path().join("regret.csv"), "episode,v_learned,v_learned_stderr,v_opt,regret,regret_stderr,regret_cum,regret_cum_stderr,regret_avg\n").unwrap();
    let out = lqmdp(&["plot", "--out", dir.path().to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let svgs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 0);
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_path();
    for (verb, file) in [("oracle", "theta_true.csv"), ("check-iss", "iss_report.csv"), ("bound", "bound_curve.csv")] {
        let out_dir = dir.path().join(verb);
        let out = lqmdp(&[verb, "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"]);
        assert_eq!(out.status.code(), Some(0), "{verb}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join(file).exists(), "{verb}");
        assert!(out_dir.join("manifest.toml").exists(), "{verb}");
    }
}
