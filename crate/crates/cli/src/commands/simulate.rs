//! `simulate`: mask plus one snapshot per scene, optionally synthesizing the
//! scenes first.

use std::path::{Path, PathBuf};

use phycosf_core::cassi::{CodedMask, DispersionModel, SensingOperator};
use phycosf_core::datasets::{generate_synthetic, linspace, save_cube, save_plane, scene_dir, SceneSplit, SyntheticSpec};
use phycosf_core::experiment::{DESK_BLOBS, DESK_PEAKS, DESK_SIZE};
use phycosf_core::SpectralCube;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult, MISMATCH};
use crate::manifest::Recorder;
use crate::sensing::{Sensing, MASK_DIR, MEASUREMENT_DIR};

pub const SPLIT_FILE: &str = "split.json";
pub const DATASET_DIR: &str = "dataset";

fn default_mask_seed() -> u64 {
    7
}

fn default_density() -> f64 {
    0.5
}

/// Synthetic scene set written in the portable layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSet {
    #[serde(default = "desk_scenes")]
    pub scenes: usize,
    #[serde(default = "desk_train")]
    pub train: usize,
    #[serde(default = "desk_size")]
    pub height: usize,
    #[serde(default = "desk_size")]
    pub width: usize,
    #[serde(default = "desk_blobs")]
    pub n_blobs: usize,
    #[serde(default = "desk_peaks")]
    pub n_peaks: usize,
    #[serde(default = "desk_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "desk_holdout")]
    pub holdout: Vec<usize>,
    /// Scene `k` uses seed `seed_base + k`.
    #[serde(default = "desk_seed_base")]
    pub seed_base: u64,
}

fn desk_scenes() -> usize {
    16
}
fn desk_train() -> usize {
    12
}
fn desk_size() -> usize {
    DESK_SIZE
}
fn desk_blobs() -> usize {
    DESK_BLOBS
}
fn desk_peaks() -> usize {
    DESK_PEAKS
}
fn desk_grid() -> Vec<f64> {
    linspace(450.0, 650.0, 16)
}
fn desk_holdout() -> Vec<usize> {
    phycosf_core::datasets::DESK_HOLDOUT.to_vec()
}
fn desk_seed_base() -> u64 {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Wavelengths captured in every snapshot.
    pub sensed_wavelengths: Vec<f64>,
    /// Existing dataset root with `split.json` and `scenes/`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Scenes to synthesize when no dataset is given.
    #[serde(default)]
    pub synthetic: Option<SyntheticSet>,
    /// Dispersion range; defaults to the sensed extremes.
    #[serde(default)]
    pub lambda_min: Option<f64>,
    #[serde(default)]
    pub lambda_max: Option<f64>,
    /// Total shift across the range; defaults to two pixels per band.
    #[serde(default)]
    pub d_total: Option<usize>,
    #[serde(default = "default_mask_seed")]
    pub mask_seed: u64,
    #[serde(default = "default_density")]
    pub mask_density: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimulateConfig {
    fn dispersion(&self) -> CliResult<DispersionModel> {
        let s = &self.sensed_wavelengths;
        if s.is_empty() {
            return Err(CliError::config("sensed_wavelengths must not be empty"));
        }
        let lo = self.lambda_min.unwrap_or(s[0]);
        let hi = self.lambda_max.unwrap_or(s[s.len() - 1]);
        let d_total = self.d_total.unwrap_or(2 * (s.len() - 1));
        if lo == hi {
            // A single band needs no dispersion; widen the range so the law is defined.
            return Ok(DispersionModel::new(d_total, lo, lo + 1.0)?);
        }
        Ok(DispersionModel::new(d_total, lo, hi)?)
    }
}

/// Writes (or reuses) the dataset and returns scene names with cubes.
fn scenes(cfg: &SimulateConfig, out: &Path, rec: &mut Recorder) -> CliResult<(PathBuf, Vec<(String, SpectralCube)>)> {
    let (root, split) = match (&cfg.dataset, &cfg.synthetic) {
        (Some(_), Some(_)) => return Err(CliError::config("give either dataset or synthetic, not both")),
        (Some(root), None) => {
            let split_path = root.join(SPLIT_FILE);
            rec.input(&split_path);
            (root.clone(), SceneSplit::load(&split_path)?)
        }
        (None, synth) => {
            let set = synth.clone().unwrap_or_else(|| serde_json::from_str("{}").expect("defaults"));
            let root = out.join(DATASET_DIR);
            let split = SceneSplit::new(set.scenes, set.train, &set.grid, &set.holdout)?;
            let mut grid = set.grid.clone();
            grid.sort_by(f64::total_cmp);
            for (k, id) in split.train_scenes.iter().chain(&split.render_scenes).enumerate() {
                let spec = SyntheticSpec {
                    seed: set.seed_base + k as u64,
                    height: set.height,
                    width: set.width,
                    n_blobs: set.n_blobs,
                    n_peaks: set.n_peaks,
                    lambda_min: grid[0],
                    lambda_max: grid[grid.len() - 1],
                };
                save_cube(&generate_synthetic(&spec, &grid)?, &scene_dir(&root, id))?;
            }
            split.save(&root.join(SPLIT_FILE))?;
            rec.output(&root);
            (root, split)
        }
    };
    let mut out = Vec::new();
    for id in split.train_scenes.iter().chain(&split.render_scenes) {
        let dir = scene_dir(&root, id);
        if cfg.dataset.is_some() {
            rec.input(&dir);
        }
        out.push((id.clone(), phycosf_core::datasets::load_cube(&dir)?));
    }
    Ok((root, out))
}

pub fn run(cfg: &SimulateConfig, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    let dispersion = cfg.dispersion()?;
    let (_, scenes) = scenes(cfg, out, rec)?;
    let (h, w) = match scenes.first() {
        Some((_, c)) => (c.height(), c.width()),
        None => return Err(CliError::config("the dataset has no scenes")),
    };
    let mask = CodedMask::generate(cfg.mask_seed, h, w, cfg.mask_density)?;
    let op = SensingOperator::new(mask.clone(), dispersion, cfg.sensed_wavelengths.clone())?;
    let mask_dir = out.join(MASK_DIR);
    save_plane(mask.values(), &mask_dir)?;
    rec.output(&mask_dir);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (id, cube) in &scenes {
        if (cube.height(), cube.width()) != (h, w) {
            return Err(CliError::new(
                MISMATCH,
                format!("scene {id} is {}x{}, expected {h}x{w}", cube.height(), cube.width()),
            ));
        }
        let sensed = cube.select(&cfg.sensed_wavelengths).map_err(|_| {
            let missing: Vec<f64> = cfg
                .sensed_wavelengths
                .iter()
                .filter(|l| !cube.wavelengths().contains(l))
                .copied()
                .collect();
            CliError::new(MISMATCH, format!("scene {id} has no bands at {missing:?} nm"))
        })?;
        let y = op.forward(&sensed, cfg.noise_sigma, &mut rng)?;
        let dir = out.join(MEASUREMENT_DIR).join(id);
        save_plane(y.data(), &dir)?;
        rec.output(&dir);
    }
    let sidecar = Sensing {
        sensed_wavelengths: cfg.sensed_wavelengths.clone(),
        dispersion,
        mask: PathBuf::from(MASK_DIR),
        mask_seed: cfg.mask_seed,
        mask_density: cfg.mask_density,
        noise_sigma: cfg.noise_sigma,
    };
    let p = sidecar.save(out)?;
    rec.output(&p);
    log::info!(
        "simulated {} scenes at {} wavelengths, measurement {}x{}",
        scenes.len(),
        cfg.sensed_wavelengths.len(),
        h,
        op.measurement_width()
    );
    Ok(())
}
