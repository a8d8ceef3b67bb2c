//! End-to-end tests of the `rmloss` binary: exit codes, reproducibility,
//! and the train -> eval -> overlay pipeline on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rmloss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmloss"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).expect("write test file");
}

fn gen_config(seed: u64) -> String {
    format!(
        r#"{{
  "kind": "synth2d",
  "count": 3,
  "height": 16,
  "width": 16,
  "disk_radius_range": [0.2, 0.24],
  "center_jitter": 0.02,
  "noise_std": 0.02,
  "distractor_count": 1,
  "seed": {seed}
}}"#
    )
}

/// Experiment config pointing at `data_dir`, writing to `out_dir`.
fn train_config(data_dir: &Path, out_dir: &Path) -> String {
    format!(
        r#"{{
  "data": {{"path": {data:?}}},
  "model": {{"num_classes": 3, "widths": [2, 3, 4], "dropout": 0.1}},
  "loss": {{"preset": "rm-2d-best", "reduction": "mean"}},
  "sgd": {{"learning_rate": 0.01, "iterations": 6, "batch_size": 2, "seed": 7}},
  "out_dir": {out:?}
}}"#,
        data = data_dir.display().to_string(),
        out = out_dir.display().to_string(),
    )
}

/// Stable digest of a directory's file names and contents.
fn dir_digest(dir: &Path) -> Vec<(String, u64)> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .expect("read dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).expect("read file");
            // FNV-1a.
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            (p.file_name().unwrap().to_string_lossy().into_owned(), h)
        })
        .collect()
}

#[test]
fn gen_data_is_reproducible_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    write(&cfg, &gen_config(11));
    for out in ["a", "b"] {
        let o = rmloss(
            &["gen-data", "--config", "gen.json", "--out", out],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        dir_digest(&tmp.path().join("a")),
        dir_digest(&tmp.path().join("b"))
    );
}

#[test]
fn gen_data_invalid_jitter_fails_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    let bad = gen_config(1).replace("\"center_jitter\": 0.02", "\"center_jitter\": 0.4");
    write(&cfg, &bad);
    let o = rmloss(
        &["gen-data", "--config", "gen.json", "--out", "d"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(
        stderr.contains("center_jitter"),
        "diagnostic must name the field: {stderr}"
    );
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rmloss(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_fails_with_path_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    write(&cfg, &gen_config(3));
    let o = rmloss(
        &["gen-data", "--config", "gen.json", "--out", "data"],
        tmp.path(),
    );
    assert!(o.status.success());
    let o = rmloss(
        &[
            "eval",
            "--checkpoint",
            "absent.rmck",
            "--data",
            "data",
            "--out",
            "evalout",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.rmck"));
}

#[test]
fn train_eval_pipeline_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    write(&tmp.path().join("gen.json"), &gen_config(5));
    let o = rmloss(
        &["gen-data", "--config", "gen.json", "--out", "data"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    write(
        &tmp.path().join("exp.json"),
        &train_config(&tmp.path().join("data"), &tmp.path().join("run")),
    );
    let o = rmloss(&["train", "--config", "exp.json"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let run_dir = tmp.path().join("run").join("seed_7");
    assert!(run_dir.join("checkpoint.rmck").exists());
    assert!(tmp.path().join("run").join("config_resolved.json").exists());

    // Loss trace has one row per iteration plus the header.
    let trace = fs::read_to_string(run_dir.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 6);
    assert!(trace.starts_with("iteration,loss"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("train_summary.json")).unwrap())
            .unwrap();
    let logged_dice = summary["final_train_dice"].as_f64().unwrap();

    let o = rmloss(
        &[
            "eval",
            "--checkpoint",
            run_dir.join("checkpoint.rmck").to_str().unwrap(),
            "--data",
            "data",
            "--out",
            "evalout",
            "--overlays",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // Same code path: eval on the training split reproduces the logged dice.
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("evalout").join("metrics.json")).unwrap(),
    )
    .unwrap();
    let rows = report["rows"].as_array().unwrap();
    // 3 samples x 2 foreground classes.
    assert_eq!(rows.len(), 6);
    let eval_dice: f64 = rows
        .iter()
        .map(|r| r["dice"].as_f64().unwrap())
        .sum::<f64>()
        / rows.len() as f64;
    assert!(
        eval_dice >= logged_dice - 1e-9,
        "eval dice {eval_dice} vs logged {logged_dice}"
    );

    // CSV row count: samples x classes (+ header).
    let csv = fs::read_to_string(tmp.path().join("evalout").join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);

    // Overlays: one PPM per sample, magic P6.
    for i in 0..3 {
        let p = tmp.path().join("evalout/overlays").join(format!("{i:04}.ppm"));
        let bytes = fs::read(&p).expect("overlay exists");
        assert_eq!(&bytes[..2], b"P6");
    }

    // Config echo exists in the eval output too.
    assert!(tmp.path().join("evalout").join("eval_config.json").exists());
}

#[test]
fn train_is_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    write(&tmp.path().join("gen.json"), &gen_config(9));
    assert!(rmloss(
        &["gen-data", "--config", "gen.json", "--out", "data"],
        tmp.path()
    )
    .status
    .success());
    write(
        &tmp.path().join("exp.json"),
        &train_config(&tmp.path().join("data"), &tmp.path().join("r1")),
    );
    assert!(rmloss(&["train", "--config", "exp.json"], tmp.path())
        .status
        .success());
    let o = rmloss(
        &["train", "--config", "exp.json", "--out", "r2"],
        tmp.path(),
    );
    assert!(o.status.success());
    // Identical seed, identical data: byte-identical checkpoint and trace.
    let a = fs::read(tmp.path().join("r1/seed_7/checkpoint.rmck")).unwrap();
    let b = fs::read(tmp.path().join("r2/seed_7/checkpoint.rmck")).unwrap();
    assert_eq!(a, b);
    let ta = fs::read(tmp.path().join("r1/seed_7/loss_trace.csv")).unwrap();
    let tb = fs::read(tmp.path().join("r2/seed_7/loss_trace.csv")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn verify_command_passes_with_machine_readable_output() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rmloss(&["verify"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let mut checks = 0;
    let mut saw_summary = false;
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("JSON line");
        if v.get("check").is_some() {
            checks += 1;
            assert_eq!(v["passed"], true, "failed check: {line}");
        } else {
            saw_summary = true;
            assert_eq!(v["summary"]["failed"], 0);
        }
    }
    assert!(checks >= 5 && saw_summary, "unexpected output: {stdout}");
}

#[test]
fn parallel_seed_sweep_matches_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    write(&tmp.path().join("gen.json"), &gen_config(13));
    assert!(rmloss(
        &["gen-data", "--config", "gen.json", "--out", "data"],
        tmp.path()
    )
    .status
    .success());
    let config = train_config(&tmp.path().join("data"), &tmp.path().join("seq"))
        .replace("\"out_dir\"", "\"seeds\": [3, 4],\n  \"out_dir\"");
    write(&tmp.path().join("exp.json"), &config);

    assert!(rmloss(&["train", "--config", "exp.json"], tmp.path())
        .status
        .success());
    let o = Command::new(env!("CARGO_BIN_EXE_rmloss"))
        .args(["train", "--config", "exp.json", "--out", "par"])
        .env("RMLOSS_THREADS", "2")
        .current_dir(tmp.path())
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    for seed in [3, 4] {
        let a = fs::read(tmp.path().join(format!("seq/seed_{seed}/checkpoint.rmck"))).unwrap();
        let b = fs::read(tmp.path().join(format!("par/seed_{seed}/checkpoint.rmck"))).unwrap();
        assert_eq!(a, b, "seed {seed} differs between sequential and parallel");
    }
}

#[test]
fn train_unknown_preset_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(&tmp.path().join("gen.json"), &gen_config(2));
    assert!(rmloss(
        &["gen-data", "--config", "gen.json", "--out", "data"],
        tmp.path()
    )
    .status
    .success());
    write(
        &tmp.path().join("exp.json"),
        &train_config(&tmp.path().join("data"), &tmp.path().join("run")),
    );
    let o = rmloss(
        &[
            "train",
            "--config",
            "exp.json",
            "--preset",
            "not-a-preset",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not-a-preset"));
}
