//! `train`: fit a model on a prepared dataset, checkpointing every epoch.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use phycosf_core::datasets::{load_scenes, SceneSplit};
use phycosf_core::pipeline::{Checkpoint, StepRecord, TrainConfig, Trainer};
use phycosf_core::Error;
use serde::Serialize;

use crate::commands::simulate::SPLIT_FILE;
use crate::exit::{io_error, CliError, CliResult, TRAINING};
use crate::manifest::Recorder;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_FILE: &str = "loss.csv";
pub const AUDIT_FILE: &str = "sampled_wavelengths.json";

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub resume: bool,
    /// Stop after this many epochs of this invocation.
    pub stop_after: Option<u64>,
}

/// Which wavelengths training touched; evidence for zero-shot claims.
#[derive(Debug, Serialize)]
struct SampleAudit {
    pool: Vec<f64>,
    counts: BTreeMap<String, u64>,
    outside_pool: Vec<f64>,
    held_out_seen: Vec<f64>,
}

fn append_losses(path: &Path, records: &[StepRecord]) -> CliResult<()> {
    let new = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    let mut text = String::new();
    if new {
        text.push_str("step,epoch,scene,loss,lr,wavelengths\n");
    }
    for r in records {
        let wl: Vec<String> = r.wavelengths.iter().map(|l| l.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{:e},{:e},{}\n",
            r.step,
            r.epoch,
            r.scene,
            r.loss,
            r.lr,
            wl.join(";")
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

/// Rebuilds the audit from the full loss log so resumed runs are covered.
fn write_audit(out: &Path, config: &TrainConfig, split: &SceneSplit) -> CliResult<PathBuf> {
    let log_path = out.join(LOSS_FILE);
    let text = std::fs::read_to_string(&log_path).unwrap_or_default();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen = Vec::new();
    for line in text.lines().skip(1) {
        if let Some(field) = line.rsplit(',').next() {
            for l in field.split(';').filter(|s| !s.is_empty()) {
                *counts.entry(l.to_string()).or_default() += 1;
                if let Ok(v) = l.parse::<f64>() {
                    seen.push(v);
                }
            }
        }
    }
    seen.sort_by(f64::total_cmp);
    seen.dedup();
    let audit = SampleAudit {
        pool: config.wavelength_pool.clone(),
        counts,
        outside_pool: seen.iter().filter(|l| !config.wavelength_pool.contains(l)).copied().collect(),
        held_out_seen: seen.iter().filter(|l| split.holdout_lambdas.contains(l)).copied().collect(),
    };
    let path = out.join(AUDIT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&audit).expect("audit serializes") + "\n")
        .map_err(|e| io_error(&path, e))?;
    Ok(path)
}

pub fn run(config: TrainConfig, args: TrainArgs<'_>, rec: &mut Recorder) -> CliResult<()> {
    let split_path = args.data.join(SPLIT_FILE);
    let split = SceneSplit::load(&split_path)?;
    rec.input(&split_path);
    if let Some(l) = config.wavelength_pool.iter().find(|l| split.holdout_lambdas.contains(l)) {
        return Err(CliError::config(format!(
            "wavelength_pool contains held-out wavelength {l} nm"
        )));
    }
    for id in &split.train_scenes {
        rec.input(&phycosf_core::datasets::scene_dir(args.data, id));
    }
    let scenes = load_scenes(args.data, &split.train_scenes)?;
    std::fs::create_dir_all(args.out).map_err(|e| io_error(args.out, e))?;
    let ckpt_dir = args.out.join(CHECKPOINT_DIR);
    let loss_path = args.out.join(LOSS_FILE);

    let mut trainer = if args.resume && ckpt_dir.join(phycosf_core::pipeline::MANIFEST_FILE).exists() {
        let ckpt = Checkpoint::load(&ckpt_dir)?;
        if ckpt.config != config {
            return Err(CliError::config("checkpoint was trained with a different config"));
        }
        log::info!("resuming from step {}", ckpt.step);
        Trainer::resume(&ckpt, scenes)?
    } else {
        if loss_path.exists() {
            std::fs::remove_file(&loss_path).map_err(|e| io_error(&loss_path, e))?;
        }
        let t = Trainer::new(config.clone(), scenes)?;
        t.checkpoint().save(&ckpt_dir)?;
        t
    };
    rec.output(&ckpt_dir);
    rec.output(&loss_path);

    let mut epochs_run = 0u64;
    let result = loop {
        if trainer.finished() || args.stop_after.is_some_and(|n| epochs_run >= n) {
            break Ok(());
        }
        match trainer.train_epoch() {
            Ok(records) => {
                append_losses(&loss_path, &records)?;
                trainer.checkpoint().save(&ckpt_dir)?;
                let mean = records.iter().map(|r| r.loss).sum::<f64>() / records.len().max(1) as f64;
                log::info!("epoch {} mean loss {mean:.5e}", trainer.epoch());
                epochs_run += 1;
            }
            Err(e) => break Err(e),
        }
    };
    let audit = write_audit(args.out, &config, &split)?;
    rec.output(&audit);
    match result {
        Ok(()) => Ok(()),
        Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => Err(CliError::new(
            TRAINING,
            format!(
                "{e}; last good checkpoint (step {}) kept at {}",
                Checkpoint::load(&ckpt_dir).map(|c| c.step).unwrap_or(0),
                ckpt_dir.display()
            ),
        )),
        Err(e) => Err(e.into()),
    }
}
