//! End-to-end exercises of the `iwavi` binary: artifact layout, exit codes,
//! determinism, and the simulate -> train -> infer -> eval pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iwavi"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("iwavi-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Small-architecture overrides that keep CLI smoke runs fast.
fn small_model_args(cmd: &mut Command) {
    for set in [
        "model.conv_widths=7,5",
        "model.conv_filters=4,4",
        "model.disc_widths=5",
        "model.disc_filters=4",
        "model.noise_channels=1",
        "model.inject_layers=1",
    ] {
        cmd.arg("--set").arg(set);
    }
}

#[test]
fn simulate_writes_paired_files_of_requested_length() {
    let dir = tmp("simulate");
    let out = bin()
        .args(["simulate", "--frames", "6000", "--sigma", "0.2", "--seed", "3"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    ok(&out);
    let paired = iwavi::spikes::load_traces(&dir.join("paired.tsv")).unwrap();
    assert_eq!(paired.trace.len(), 6000);
    assert_eq!(paired.spikes.as_ref().map(|s| s.len()), Some(6000));
    let fluor = iwavi::spikes::load_traces(&dir.join("fluorescence.tsv")).unwrap();
    assert!(fluor.spikes.is_none());
    assert!(dir.join("config.resolved.txt").exists());
}

#[test]
fn verify_theory_passes_and_writes_table() {
    let dir = tmp("theory");
    let out = bin()
        .args(["verify-theory", "--seed", "7", "--models", "30"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("theorem-1 identity"));
    assert!(stdout.contains("all suites pass"));
    assert!(!stdout.contains("FAIL"));
    assert!(dir.join("theory_report.txt").exists());
}

#[test]
fn train_then_infer_end_to_end() {
    let sim = tmp("e2e-sim");
    ok(&bin()
        .args(["simulate", "--frames", "512", "--sigma", "0.2", "--seed", "5"])
        .arg("--out")
        .arg(&sim)
        .output()
        .unwrap());

    let train_dir = tmp("e2e-train");
    let mut cmd = bin();
    cmd.args(["train", "--objective", "iw-avb", "--k", "2", "--steps", "3"])
        .arg("--data")
        .arg(sim.join("paired.tsv"))
        .arg("--out")
        .arg(&train_dir)
        .args(["--set", "train.window_frames=64", "--set", "train.batch_size=2"]);
    small_model_args(&mut cmd);
    ok(&cmd.output().unwrap());
    assert!(train_dir.join("model.ckpt").exists());
    let log = read(&train_dir.join("train_log.txt"));
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.contains("gen=") && l.contains("ms=")));

    let infer_dir = tmp("e2e-infer");
    ok(&bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(train_dir.join("model.ckpt"))
        .arg("--trace")
        .arg(sim.join("fluorescence.tsv"))
        .args(["--set", "infer.draws=4"])
        .arg("--out")
        .arg(&infer_dir)
        .output()
        .unwrap());
    let marginals: Vec<f64> = read(&infer_dir.join("marginals.tsv"))
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(marginals.len(), 512, "one marginal probability per input frame");
    assert!(marginals.iter().all(|p| (0.0..=1.0).contains(p)));

    let eval_dir = tmp("e2e-eval");
    ok(&bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(train_dir.join("model.ckpt"))
        .arg("--data")
        .arg(sim.join("paired.tsv"))
        .args(["--set", "eval.draws=4"])
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap());
    let metrics = iwavi::eval::parse_report(&read(&eval_dir.join("metrics.txt"))).unwrap();
    assert!(metrics.iter().any(|m| m.name.starts_with("corr@")));
}

#[test]
fn same_argv_produces_byte_identical_artifacts() {
    let sim = tmp("det-sim");
    ok(&bin()
        .args(["simulate", "--frames", "256", "--sigma", "0.2", "--seed", "9"])
        .arg("--out")
        .arg(&sim)
        .output()
        .unwrap());

    let run = |label: &str| {
        let dir = tmp(label);
        let mut cmd = bin();
        cmd.args(["train", "--objective", "iw-avb", "--k", "2", "--steps", "3"])
            .arg("--data")
            .arg(sim.join("paired.tsv"))
            .arg("--out")
            .arg(&dir)
            .args(["--set", "train.window_frames=64", "--set", "train.batch_size=2"]);
        small_model_args(&mut cmd);
        ok(&cmd.output().unwrap());
        dir
    };
    let a = run("det-a");
    let b = run("det-b");

    let ckpt_a = std::fs::read(a.join("model.ckpt")).unwrap();
    let ckpt_b = std::fs::read(b.join("model.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");
    assert_eq!(read(&a.join("config.resolved.txt")), read(&b.join("config.resolved.txt")));

    // the train log matches byte-for-byte once wall-clock fields are dropped
    let strip = |text: String| -> Vec<String> {
        text.lines()
            .map(|l| l.split(" ms=").next().unwrap().to_string())
            .collect()
    };
    assert_eq!(strip(read(&a.join("train_log.txt"))), strip(read(&b.join("train_log.txt"))));
}

#[test]
fn simulate_traces_differ_across_sigma_overrides_and_hash_tracks_config() {
    let a = tmp("hash-a");
    let b = tmp("hash-b");
    ok(&bin()
        .args(["simulate", "--frames", "64", "--sigma", "0.2", "--seed", "1"])
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap());
    ok(&bin()
        .args(["simulate", "--frames", "64", "--sigma", "0.4", "--seed", "1"])
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap());
    let cfg_a = iwavi::config::KvConfig::parse(&read(&a.join("config.resolved.txt"))).unwrap();
    let cfg_b = iwavi::config::KvConfig::parse(&read(&b.join("config.resolved.txt"))).unwrap();
    assert_ne!(cfg_a.hash(), cfg_b.hash(), "config hash must track overrides");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tmp("badkey");
    let out = bin()
        .args(["simulate", "--frames", "16", "--set", "simulate.typo=1"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("simulate.typo"), "stderr names the key: {stderr}");
}

#[test]
fn missing_input_file_is_a_domain_error() {
    let dir = tmp("missing");
    let out = bin()
        .args(["train", "--objective", "vae", "--k", "1", "--steps", "1"])
        .arg("--data")
        .arg(dir.join("nope.tsv"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.tsv"), "stderr names the path: {stderr}");
}

#[test]
fn config_file_layering_with_flag_and_override() {
    let dir = tmp("layering");
    let cfg_path = dir.join("run.cfg");
    std::fs::write(&cfg_path, "[simulate]\nframes = 100\nsigma = 0.1\nseed = 2\n").unwrap();
    // flag overrides file; --set overrides flag
    let out = bin()
        .args(["simulate", "--frames", "50", "--set", "simulate.frames=25"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    ok(&out);
    let rec = iwavi::spikes::load_traces(&dir.join("paired.tsv")).unwrap();
    assert_eq!(rec.trace.len(), 25);
    let resolved = read(&dir.join("config.resolved.txt"));
    assert!(resolved.contains("frames = 25"));
}
