//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rmloss_core::checkpoint::{load_checkpoint, save_checkpoint};
use rmloss_core::data::{gen_2d, gen_3d, load_dataset, save_dataset, Dataset, SynthSpec};
use rmloss_core::error::Error as CoreError;
use rmloss_core::eval::{default_convention, evaluate_report, mean_dice, predict};
use rmloss_core::nn::UNetLite;
use rmloss_core::train::{train, SgdConfig};
use rmloss_core::verify::run_all;

use crate::config::{DataSource, ExperimentConfig};

/// Command failure carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub exit_code: i32,
    pub message: String,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        CmdError {
            exit_code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CmdError {
            exit_code: 2,
            message: message.into(),
        }
    }
}

/// Core errors at command startup are configuration problems; later ones are
/// runtime failures. `setup` picks the classification.
fn core_err(setup: bool) -> impl Fn(CoreError) -> CmdError {
    move |e| match (&e, setup) {
        (CoreError::Config(_), _) | (_, true) => CmdError {
            exit_code: 1,
            message: e.to_string(),
        },
        _ => CmdError {
            exit_code: 2,
            message: e.to_string(),
        },
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| CmdError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_data(source: &DataSource) -> Result<Dataset, CmdError> {
    match source {
        DataSource::Path(dir) => load_dataset(dir).map_err(core_err(true)),
        DataSource::Synth2d(cfg) => gen_2d(cfg).map_err(core_err(true)),
        DataSource::Synth3d(cfg) => gen_3d(cfg).map_err(core_err(true)),
    }
}

/// `gen-data`: generate a synthetic dataset and write it to disk.
pub fn gen_data(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CmdError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CmdError::usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| CmdError::usage(format!("config {} is not valid: {e}", config_path.display())))?;
    if let Some(seed) = seed {
        match &mut spec {
            SynthSpec::Synth2d(c) => c.seed = seed,
            SynthSpec::Synth3d(c) => c.seed = seed,
        }
    }
    let out = out.ok_or_else(|| CmdError::usage("gen-data requires --out DIR"))?;
    let dataset = match &spec {
        SynthSpec::Synth2d(c) => gen_2d(c).map_err(core_err(true))?,
        SynthSpec::Synth3d(c) => gen_3d(c).map_err(core_err(true))?,
    };
    save_dataset(&dataset, &out).map_err(core_err(false))?;
    println!(
        "wrote {} samples ({}D, extents {:?}, seed {}) to {}",
        dataset.samples.len(),
        dataset.dims(),
        spec.extents(),
        spec.seed(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    iterations: usize,
    final_loss: f64,
    final_train_dice: f64,
    checkpoint: String,
}

fn run_one_seed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<TrainSummary, CmdError> {
    let dims = dataset.dims();
    let loss_cfg = config.loss.resolve(dims).map_err(CmdError::usage)?;
    let mut model = UNetLite::new(
        dims,
        config.model.in_channels,
        config.model.num_classes,
        config.model.widths,
        config.model.dropout,
        seed,
    )
    .map_err(core_err(true))?;
    let sgd = SgdConfig {
        seed,
        ..config.sgd.clone()
    };
    let outcome = train(&mut model, dataset, &loss_cfg, &sgd).map_err(core_err(false))?;

    let run_dir = config.out_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&run_dir)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", run_dir.display())))?;
    let ckpt_path = run_dir.join("checkpoint.rmck");
    save_checkpoint(&ckpt_path, &model.named_tensors()).map_err(core_err(false))?;

    let mut trace_csv = String::from("iteration,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        trace_csv.push_str(&format!("{i},{l}\n"));
    }
    write_text(&run_dir.join("loss_trace.csv"), &trace_csv)?;

    let summary = TrainSummary {
        seed,
        iterations: sgd.iterations,
        final_loss: *outcome.loss_trace.last().unwrap_or(&f64::NAN),
        final_train_dice: outcome.final_train_dice,
        checkpoint: ckpt_path.display().to_string(),
    };
    write_text(
        &run_dir.join("train_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

/// `train`: train one model per seed, write checkpoints and traces.
pub fn train_cmd(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    preset: Option<String>,
) -> Result<(), CmdError> {
    let mut config = ExperimentConfig::load(config_path).map_err(CmdError::usage)?;
    if let Some(out) = out {
        config.out_dir = out;
    }
    if let Some(seed) = seed {
        config.sgd.seed = seed;
        config.seeds = vec![seed];
    }
    if let Some(preset) = preset {
        config.loss.preset = Some(preset);
    }
    let dataset = load_data(&config.data)?;
    // Fail fast on an unknown preset before any training runs.
    config
        .loss
        .resolve(dataset.dims())
        .map_err(CmdError::usage)?;

    fs::create_dir_all(&config.out_dir).map_err(|e| {
        CmdError::runtime(format!("cannot create {}: {e}", config.out_dir.display()))
    })?;
    write_text(
        &config.out_dir.join("config_resolved.json"),
        &serde_json::to_string_pretty(&config).expect("config serializes"),
    )?;

    let seeds = config.run_seeds();
    let workers: usize = std::env::var("RMLOSS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);

    let summaries: Vec<TrainSummary> = if workers <= 1 || seeds.len() <= 1 {
        let mut out = Vec::new();
        for &s in &seeds {
            out.push(run_one_seed(&config, &dataset, s)?);
        }
        out
    } else {
        // Per-seed outputs land in independent directories; threads share
        // only immutable inputs.
        let mut results: Vec<Option<Result<TrainSummary, CmdError>>> =
            (0..seeds.len()).map(|_| None).collect();
        let chunks: Vec<Vec<usize>> = (0..seeds.len())
            .collect::<Vec<_>>()
            .chunks(workers.max(1))
            .map(|c| c.to_vec())
            .collect();
        for chunk in chunks {
            let mut handles = Vec::new();
            for idx in chunk {
                let config = config.clone();
                let dataset = dataset.clone();
                let s = seeds[idx];
                handles.push((
                    idx,
                    std::thread::spawn(move || run_one_seed(&config, &dataset, s)),
                ));
            }
            for (idx, h) in handles {
                results[idx] = Some(h.join().expect("training thread panicked"));
            }
        }
        results
            .into_iter()
            .map(|r| r.expect("every seed ran"))
            .collect::<Result<Vec<_>, _>>()?
    };

    for s in &summaries {
        println!(
            "seed {}: final loss {:.6}, train dice {:.4}, checkpoint {}",
            s.seed, s.final_loss, s.final_train_dice, s.checkpoint
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalConfigEcho {
    checkpoint: String,
    data: String,
    overlays: bool,
    class_convention: String,
}

/// `eval`: score a checkpoint on a dataset, write CSV/JSON reports and
/// optional contour overlays.
pub fn eval_cmd(
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    overlays: bool,
) -> Result<(), CmdError> {
    let entries = load_checkpoint(checkpoint).map_err(core_err(true))?;
    let model = UNetLite::from_named(entries).map_err(core_err(true))?;
    let dataset = load_dataset(data_dir).map_err(core_err(true))?;
    let convention = default_convention(model.num_classes());

    let report = evaluate_report(&model, &dataset, convention).map_err(core_err(false))?;
    fs::create_dir_all(out)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", out.display())))?;
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    write_text(&out.join("metrics.json"), &report.to_json())?;
    write_text(
        &out.join("eval_config.json"),
        &serde_json::to_string_pretty(&EvalConfigEcho {
            checkpoint: checkpoint.display().to_string(),
            data: data_dir.display().to_string(),
            overlays,
            class_convention: format!("{convention:?}"),
        })
        .expect("echo serializes"),
    )?;

    if overlays {
        if dataset.dims() != 2 {
            return Err(CmdError::usage("overlays are only supported for 2D datasets"));
        }
        let overlay_dir = out.join("overlays");
        fs::create_dir_all(&overlay_dir).map_err(|e| {
            CmdError::runtime(format!("cannot create {}: {e}", overlay_dir.display()))
        })?;
        for (i, sample) in dataset.samples.iter().enumerate() {
            let pred = predict(&model, &sample.image).map_err(core_err(false))?;
            crate::overlay::write_overlay(
                &overlay_dir.join(format!("{i:04}.ppm")),
                &sample.image,
                &sample.mask,
                &pred,
                model.num_classes(),
            )
            .map_err(core_err(false))?;
        }
    }

    println!(
        "evaluated {} samples, mean dice {:.4}; reports in {}",
        dataset.samples.len(),
        mean_dice(&report.rows),
        out.display()
    );
    Ok(())
}

/// `verify`: run the property suite, print one JSON line per check.
pub fn verify_cmd() -> Result<(), CmdError> {
    let results = run_all();
    let mut failed = 0usize;
    for r in &results {
        println!(
            "{}",
            serde_json::json!({
                "check": r.name,
                "passed": r.passed,
                "detail": r.detail,
            })
        );
        if !r.passed {
            failed += 1;
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "summary": {"total": results.len(), "failed": failed}
        })
    );
    if failed > 0 {
        return Err(CmdError {
            exit_code: 3,
            message: format!("{failed} verification check(s) failed"),
        });
    }
    Ok(())
}
