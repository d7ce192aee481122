//! The scaled-down two-phase experiment on synthetic scenes: train on a
//! wavelength pool, then render the trained and held-out wavelengths of
//! unseen scenes from six-band measurements.

use serde::{Deserialize, Serialize};

use crate::cassi::SpectralCube;
use crate::datasets::{generate_synthetic, SceneSplit, SyntheticSpec};
use crate::error::Result;
use crate::metrics::{score_scene, EvalReport, Task};
use crate::model::Model;
use crate::pipeline::{render_scene, train, StepRecord, TrainConfig};

pub const DESK_SIZE: usize = 32;
pub const DESK_BLOBS: usize = 6;
pub const DESK_PEAKS: usize = 2;

/// Scene `k` of the desk dataset; scenes differ only in seed.
pub fn desk_scene_spec(k: usize) -> SyntheticSpec {
    SyntheticSpec {
        seed: 1000 + k as u64,
        height: DESK_SIZE,
        width: DESK_SIZE,
        n_blobs: DESK_BLOBS,
        n_peaks: DESK_PEAKS,
        lambda_min: 450.0,
        lambda_max: 650.0,
    }
}

/// All scenes of `split` rendered on its full grid, train scenes first.
pub fn desk_scenes(split: &SceneSplit) -> Result<(Vec<SpectralCube>, Vec<SpectralCube>)> {
    let grid = split.grid();
    let make = |k: usize| generate_synthetic(&desk_scene_spec(k), &grid);
    let n_train = split.train_scenes.len();
    let train = (0..n_train).map(make).collect::<Result<Vec<_>>>()?;
    let render = (n_train..n_train + split.render_scenes.len())
        .map(make)
        .collect::<Result<Vec<_>>>()?;
    Ok((train, render))
}

/// Renders each scene at `queries` from a measurement of the configured
/// render bands and scores it against the scene's own slices.
pub fn evaluate(
    model: &Model,
    config: &TrainConfig,
    names: &[String],
    scenes: &[SpectralCube],
    queries: &[f64],
    task: Task,
) -> Result<EvalReport> {
    let sensed = config.render_wavelengths();
    let mut reports = Vec::with_capacity(scenes.len());
    for (name, scene) in names.iter().zip(scenes) {
        let pred = render_scene(model, config, scene, &sensed, queries)?;
        reports.push(score_scene(name, &pred, &scene.select(queries)?)?);
    }
    EvalReport::new(task, queries.to_vec(), reports)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub trained: EvalReport,
    pub holdout: EvalReport,
    pub final_loss: f64,
    /// Every wavelength any training step sampled.
    pub sampled: Vec<f64>,
}

/// Trains on the split's train scenes and evaluates on its render scenes.
pub fn run_experiment(config: TrainConfig, split: &SceneSplit) -> Result<(Model, ExperimentOutcome, Vec<StepRecord>)> {
    let (train_scenes, render_scenes) = desk_scenes(split)?;
    let (trainer, history) = train(config, train_scenes, None)?;
    let model = trainer.model;
    let cfg = &trainer.config;
    let trained = evaluate(&model, cfg, &split.render_scenes, &render_scenes, &split.train_lambdas, Task::Continuous)?;
    let holdout = evaluate(
        &model,
        cfg,
        &split.render_scenes,
        &render_scenes,
        &split.holdout_lambdas,
        Task::SuperResolution,
    )?;
    let mut sampled: Vec<f64> = history.iter().flat_map(|r| r.wavelengths.iter().copied()).collect();
    sampled.sort_by(f64::total_cmp);
    sampled.dedup();
    let tail = history.len().saturating_sub(50);
    let final_loss = history[tail..].iter().map(|r| r.loss).sum::<f64>() / (history.len() - tail).max(1) as f64;
    Ok((
        model,
        ExperimentOutcome {
            trained,
            holdout,
            final_loss,
            sampled,
        },
        history,
    ))
}
