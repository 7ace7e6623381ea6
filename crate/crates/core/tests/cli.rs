use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffusion-limit"))
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

const SMALL: &str = r#"{
    "velocity": {"preset": "two_speed"},
    "noise": {"modes": ["cos:1"], "chains": [{"telegraph": {"sigma": 1.0, "lambda": 1.0}}]},
    "grid": {"n": 16},
    "epsilons": [0.2, 0.1],
    "ensemble": 100,
    "spde_ensemble": 100,
    "final_time": 0.02,
    "output_times": [0.01],
    "spde_steps": 64,
    "functionals": [{"kind": "linear", "weight": "cos:1"}, {"kind": "quadratic", "weight": "const"}],
    "seed": 11
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn coeffs_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, stdout) = run(&["coeffs", "--config", shipped("standard.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("quantity,index,value\nK,00,1.0\nc,0,1.0\nc,1,1.0\n"), "{stdout}");
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| (l.rsplit(',').next().unwrap().parse::<f64>().unwrap() - 1.0).abs() < 1e-12));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL.replace("\"seed\"", "\"sede\""));
    assert_eq!(run(&["coeffs", "--config", bad.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["coeffs", "--config", "/nonexistent/config.json"]).0, 2);
    assert_eq!(run(&["coeffs"]).0, 2);
    assert_eq!(run(&["no-such-command"]).0, 2);
    let tiny = write_config(dir.path(), &SMALL.replace("\"ensemble\": 100", "\"ensemble\": 10"));
    let out = dir.path().join("o");
    assert_eq!(run(&["converge", "--config", tiny.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn failed_check_exits_with_three() {
    // epsilons too close together for the ensemble to resolve a trend
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("[0.2, 0.1]", "[0.1, 0.099]"));
    let out = dir.path().join("out");
    let (code, stdout) = run(&["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{stdout}");
    assert!(stdout.contains("verdict: inconclusive") || stdout.contains("verdict: inconsistent"), "{stdout}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "converge");
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["failures"][0]["failed"], 0);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let out = dir.path().join(format!("w{workers}"));
        let (code, _) = run(&[
            "simulate-kinetic",
            "--config",
            cfg.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        outputs.push((
            fs::read(out.join("kinetic_stats.csv")).unwrap(),
            fs::read(out.join("moments.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let header = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(header.starts_with("epsilon,time,functional_id,mean,variance,count,stderr\n"));
}

#[test]
fn seed_flag_changes_results_and_reruns_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut files = Vec::new();
    for (i, seed) in ["5", "5", "6"].iter().enumerate() {
        let out = dir.path().join(format!("s{i}"));
        let args = ["simulate-spde", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()];
        assert_eq!(run(&args).0, 0);
        files.push(fs::read(out.join("spde_stats.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn noise_stats_and_generator_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("n");
    let (code, stdout) = run(&["noise-stats", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.starts_with("j,c_analytic,c_empirical,stderr\n0,1.0,"));
    let out = dir.path().join("g");
    let (code, stdout) =
        run(&["diagnose-generator", "--states", "20", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows[0], "epsilon,functional_id,residual_mean,residual_stderr,scaling_ratio");
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[1].ends_with(",NaN"));
}
