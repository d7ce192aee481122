//! `sweep`: train every ablation variant for every seed and report each.

use std::path::Path;

use phycosf_core::datasets::{load_scenes, scene_dir, SceneSplit};
use phycosf_core::experiment::evaluate;
use phycosf_core::metrics::{EvalReport, Task};
use phycosf_core::pipeline::{train, TrainConfig};
use serde::Serialize;

use crate::commands::simulate::SPLIT_FILE;
use crate::exit::{io_error, CliError, CliResult};
use crate::manifest::Recorder;

pub const SUMMARY_FILE: &str = "summary.json";
pub const VARIANTS: [&str; 4] = ["full", "no-rfe", "no-se", "no-ssh"];

/// Applies a named ablation to `config`.
pub fn apply_variant(config: &mut TrainConfig, variant: &str) -> CliResult<()> {
    match variant {
        "full" => {}
        "no-rfe" => config.rfe_enabled = false,
        "no-se" => config.se_enabled = false,
        "no-ssh" => config.ssh_enabled = false,
        other => {
            return Err(CliError::config(format!(
                "unknown variant {other:?}; expected one of {VARIANTS:?}"
            )))
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunReport {
    variant: String,
    seed: u64,
    final_loss: f64,
    trained: EvalReport,
    holdout: EvalReport,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    variant: String,
    seed: u64,
    trained_psnr: f64,
    trained_sam: f64,
    holdout_psnr: f64,
    holdout_sam: f64,
}

pub struct SweepArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub variants: &'a [String],
    pub seeds: &'a [u64],
}

pub fn run(base: TrainConfig, args: SweepArgs<'_>, rec: &mut Recorder) -> CliResult<()> {
    let split_path = args.data.join(SPLIT_FILE);
    let split = SceneSplit::load(&split_path)?;
    rec.input(&split_path);
    for id in split.train_scenes.iter().chain(&split.render_scenes) {
        rec.input(&scene_dir(args.data, id));
    }
    let train_scenes = load_scenes(args.data, &split.train_scenes)?;
    let render_scenes = load_scenes(args.data, &split.render_scenes)?;
    let mut configs = Vec::new();
    for v in args.variants {
        for &seed in args.seeds {
            let mut c = base.clone();
            apply_variant(&mut c, v)?;
            c.seed = seed;
            c.validate()?;
            configs.push((v.clone(), seed, c));
        }
    }
    std::fs::create_dir_all(args.out).map_err(|e| io_error(args.out, e))?;
    let mut summary = Vec::new();
    for (variant, seed, config) in configs {
        log::info!("sweep: {variant} seed {seed}");
        let (trainer, history) = train(config, train_scenes.clone(), None)?;
        let cfg = &trainer.config;
        let names = &split.render_scenes;
        let trained = evaluate(&trainer.model, cfg, names, &render_scenes, &split.train_lambdas, Task::Continuous)?;
        let holdout = evaluate(&trainer.model, cfg, names, &render_scenes, &split.holdout_lambdas, Task::SuperResolution)?;
        let tail = history.len().saturating_sub(cfg.steps_per_epoch);
        let final_loss = history[tail..].iter().map(|r| r.loss).sum::<f64>() / (history.len() - tail).max(1) as f64;
        summary.push(SummaryRow {
            variant: variant.clone(),
            seed,
            trained_psnr: trained.average.psnr,
            trained_sam: trained.average.sam,
            holdout_psnr: holdout.average.psnr,
            holdout_sam: holdout.average.sam,
        });
        let report = RunReport {
            variant: variant.clone(),
            seed,
            final_loss,
            trained,
            holdout,
        };
        let path = args.out.join(format!("{variant}_seed{seed}.json"));
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        rec.output(&path);
    }
    let path = args.out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    rec.output(&path);
    Ok(())
}
