use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;
use tsae::data::load_csv;

const MICRO: &str = r#"{
  "data": {"generate": {"cycles": 5}},
  "model": {"n_a": 16, "n_b": 8, "n_xs": 2},
  "train": {"max_epochs": 3, "groups_per_epoch": 64, "validation_windows": 512},
  "eval": {"holdout_last_cycles": 1}
}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    /// Micro config plus a 5-cycle dataset generated from it.
    fn micro() -> (Self, PathBuf, PathBuf) {
        let ws = Self::new();
        let cfg = ws.write("micro.json", MICRO);
        let data = ws.path("data.csv");
        let out = tsae(&[
            "--quiet",
            "--config",
            s(&cfg),
            "generate",
            "--out",
            s(&data),
        ]);
        assert_success(&out);
        (ws, cfg, data)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tsae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsae"))
        .args(args)
        .output()
        .unwrap()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn train_micro(cfg: &Path, data: &Path, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--quiet",
        "--config",
        s(cfg),
        "train",
        "--data",
        s(data),
        "--out-dir",
        s(dir),
    ];
    args.extend_from_slice(extra);
    tsae(&args)
}

#[test]
fn generate_defaults_span_the_fade_schedule() {
    let ws = Workspace::new();
    let a = ws.path("a.csv");
    let b = ws.path("b.csv");
    let out = tsae(&["generate", "--out", s(&a)]);
    assert_success(&out);
    assert!(stdout(&out).contains("wrote 60 cycles"));
    assert_success(&tsae(&["--quiet", "generate", "--out", s(&b)]));
    assert!(
        std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(),
        "same config and seed must give identical files"
    );

    let ds = load_csv(&a).unwrap();
    assert_eq!(ds.cycles.len(), 60);
    let first = ds.cycles[0].truth.as_ref().unwrap();
    let last = ds.cycles[59].truth.as_ref().unwrap();
    assert!((first.theta_q - 1.0).abs() < 1e-12);
    assert!((last.theta_q - 0.85).abs() < 1e-12);
}

#[test]
fn seed_flag_changes_the_data() {
    let (ws, cfg, data) = Workspace::micro();
    let other = ws.path("other.csv");
    assert_success(&tsae(&[
        "--quiet",
        "--config",
        s(&cfg),
        "--seed",
        "99",
        "generate",
        "--out",
        s(&other),
    ]));
    assert!(std::fs::read(&data).unwrap() != std::fs::read(&other).unwrap());
}

#[test]
fn unwritable_output_exits_2() {
    let (_ws, cfg, data) = Workspace::micro();
    // a path below a regular file cannot be created, even as root
    let out = tsae(&[
        "--config",
        s(&cfg),
        "generate",
        "--out",
        &format!("{}/x.csv", s(&data)),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_named() {
    let ws = Workspace::new();
    let cfg = ws.write("bad.json", r#"{"train": {"learnin_rate": 0.01}}"#);
    let out = tsae(&[
        "--config",
        s(&cfg),
        "generate",
        "--out",
        s(&ws.path("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("learnin_rate"), "{}", stderr(&out));

    let bad_sim = ws.write("sim.json", r#"{"data": {"sim": {"c1_farad": 1e9}}}"#);
    let out = tsae(&[
        "--config",
        s(&bad_sim),
        "generate",
        "--out",
        s(&ws.path("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("data.sim"), "{}", stderr(&out));
}

#[test]
fn micro_training_run_directory() {
    let (ws, cfg, data) = Workspace::micro();
    let run = ws.path("run");
    let clock = Instant::now();
    let out = train_micro(&cfg, &data, &run, &[]);
    assert_success(&out);
    assert!(clock.elapsed().as_secs() < 60);

    assert_eq!(csv_rows(&run.join("history.csv")), 3);
    let header = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(header.starts_with("epoch,train_pred,train_corr,val_pred\n"));
    assert!(run.join("model.ckpt").is_file());

    // the echo has every default filled in
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["model"]["n_a"], 16);
    assert_eq!(echo["train"]["lambda"], 0.1);
    assert_eq!(echo["data"]["sim"]["q_nom_ah"], 4.85);

    // identical inputs give identical bytes
    let again = ws.path("again");
    assert_success(&train_micro(&cfg, &data, &again, &[]));
    for f in ["model.ckpt", "history.csv", "config.json"] {
        assert!(
            std::fs::read(run.join(f)).unwrap() == std::fs::read(again.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn resume_continues_history() {
    let (ws, cfg, data) = Workspace::micro();
    let run = ws.path("run");
    assert_success(&train_micro(&cfg, &data, &run, &[]));
    let longer = ws.write(
        "longer.json",
        &MICRO.replace(r#""max_epochs": 3"#, r#""max_epochs": 5"#),
    );
    let resumed = ws.path("resumed");
    let ckpt = run.join("model.ckpt");
    assert_success(&train_micro(
        &longer,
        &data,
        &resumed,
        &["--resume", s(&ckpt)],
    ));
    let text = std::fs::read_to_string(resumed.join("history.csv")).unwrap();
    let epochs: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, ["1", "2", "3", "4", "5"]);
    let before = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(
        text.starts_with(&before),
        "resumed history must keep the saved epochs"
    );

    // the same budget leaves nothing to do
    let out = train_micro(&cfg, &data, &ws.path("none"), &["--resume", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(4));

    let wider = ws.write("wider.json", &MICRO.replace(r#""n_xs": 2"#, r#""n_xs": 3"#));
    let out = train_micro(&wider, &data, &ws.path("wider"), &["--resume", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("n_xs"), "{}", stderr(&out));
}

#[test]
fn sweep_makes_one_run_per_value() {
    let (ws, _, data) = Workspace::micro();
    let quick = ws.write(
        "quick.json",
        &MICRO.replace(r#""max_epochs": 3"#, r#""max_epochs": 1"#),
    );
    let out = ws.path("sweep");
    assert_success(&train_micro(&quick, &data, &out, &["--sweep", "n_xs=1..5"]));
    for k in 1..=5 {
        let run = out.join(format!("n_xs_{k}"));
        assert!(
            run.join("model.ckpt").is_file(),
            "missing run for n_xs = {k}"
        );
        assert_eq!(csv_rows(&run.join("history.csv")), 1);
    }
    assert_eq!(csv_rows(&out.join("sweep.csv")), 5);
    let bad = train_micro(&quick, &data, &ws.path("bad"), &["--sweep", "n_b=1..2"]);
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn non_finite_training_exits_3_with_diagnostics() {
    let (ws, _, data) = Workspace::micro();
    let cfg = ws.write(
        "wild.json",
        &MICRO.replace(
            r#""max_epochs": 3"#,
            r#""max_epochs": 3, "learning_rate": 1e300"#,
        ),
    );
    let run = ws.path("run");
    let out = train_micro(&cfg, &data, &run, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let diag = std::fs::read_to_string(run.join("diagnostics.json")).unwrap();
    assert!(diag.contains("epoch 1"), "{diag}");
    assert!(!run.join("model.ckpt").exists());
}

#[test]
fn eval_reports_and_errors() {
    let (ws, cfg, data) = Workspace::micro();
    let run = ws.path("run");
    assert_success(&train_micro(&cfg, &data, &run, &[]));
    let ckpt = run.join("model.ckpt");

    let oracle = ws.path("oracle");
    let out = tsae(&[
        "--quiet",
        "--config",
        s(&cfg),
        "eval",
        "--predictor",
        "oracle",
        "--data",
        s(&data),
        "--out-dir",
        s(&oracle),
    ]);
    assert_success(&out);
    assert!(
        stdout(&out).starts_with("RMSE 0.000 mV"),
        "{}",
        stdout(&out)
    );

    let ev = ws.path("eval");
    let out = tsae(&[
        "--quiet",
        "--config",
        s(&cfg),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&ev),
    ]);
    assert_success(&out);
    assert!(stdout(&out).contains(" mV"));
    for f in [
        "metrics.csv",
        "predictions.csv",
        "latents.csv",
        "histogram.csv",
        "config.json",
    ] {
        assert!(ev.join(f).is_file(), "missing {f}");
    }
    assert_eq!(csv_rows(&ev.join("metrics.csv")), 1);
    assert_eq!(csv_rows(&ev.join("latents.csv")), 5);

    let missing = ws.write(
        "missing.json",
        &MICRO.replace(r#""holdout_last_cycles": 1"#, r#""holdout_cells": ["G7"]"#),
    );
    let out = tsae(&[
        "--config",
        s(&missing),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&ev),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("G7"), "{}", stderr(&out));

    let out = tsae(&[
        "--config",
        s(&cfg),
        "eval",
        "--data",
        s(&data),
        "--out-dir",
        s(&ev),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn inspect_latent_files() {
    let (ws, cfg, data) = Workspace::micro();
    let run = ws.path("run");
    assert_success(&train_micro(&cfg, &data, &run, &[]));
    let ckpt = run.join("model.ckpt");
    let ds = load_csv(&data).unwrap();

    let both = ws.path("both");
    let out = tsae(&[
        "--quiet",
        "--config",
        s(&cfg),
        "inspect-latent",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&both),
        "--soc",
        "0.8",
        "--cycle",
        "0",
    ]);
    assert_success(&out);
    assert_eq!(
        csv_rows(&both.join("latents_fixed_soc.csv")),
        ds.cycles.len()
    );
    let windows = ds.cycles[0].len() - 16 - 8 + 1;
    assert_eq!(csv_rows(&both.join("latents_cycle_0.csv")), windows);

    let only = ws.path("only");
    let out = tsae(&[
        "--quiet",
        "--config",
        s(&cfg),
        "inspect-latent",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&only),
        "--cycle",
        "2",
    ]);
    assert_success(&out);
    assert!(only.join("latents_cycle_2.csv").is_file());
    assert!(!only.join("latents_fixed_soc.csv").exists());

    let out = tsae(&[
        "--config",
        s(&cfg),
        "inspect-latent",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&only),
        "--cycle",
        "40",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_thread_count_is_rejected() {
    let ws = Workspace::new();
    let out = Command::new(env!("CARGO_BIN_EXE_tsae"))
        .env("TSAE_THREADS", "zero")
        .args(["generate", "--out", s(&ws.path("x.csv"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("TSAE_THREADS"));
}
