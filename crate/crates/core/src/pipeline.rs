//! Training on randomly sampled wavelengths, checkpointing, and rendering at
//! arbitrary query wavelengths.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::cassi::{CodedMask, DispersionModel, Measurement, SensingOperator, SpectralCube};
use crate::datasets::crop_patch;
use crate::error::{Error, Result};
use crate::head::FrequencyBank;
use crate::model::{Model, ModelConfig};
use crate::params::{cosine_lr, Adam};
use crate::prior::{check_spatial, SeqDomain};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

fn d_six() -> usize {
    6
}
fn d_patch() -> usize {
    256
}
fn d_stages() -> usize {
    9
}
fn d_channels() -> usize {
    72
}
fn d_lr() -> f64 {
    1e-3
}
fn d_lr_min() -> f64 {
    1e-6
}
fn d_epochs() -> usize {
    200
}
fn d_steps_per_epoch() -> usize {
    100
}
fn d_branches() -> usize {
    3
}
fn d_seq() -> SeqDomain {
    SeqDomain::Frequency
}
fn d_state() -> usize {
    8
}
fn d_true() -> bool {
    true
}
fn d_freq_count() -> usize {
    32
}
fn d_sigma() -> f64 {
    1.0
}
fn d_embed() -> usize {
    64
}
fn d_mask_seed() -> u64 {
    7
}
fn d_density() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Wavelengths training may sample, in nm.
    pub wavelength_pool: Vec<f64>,
    #[serde(default = "d_six")]
    pub n_sample: usize,
    #[serde(default = "d_patch")]
    pub patch: usize,
    #[serde(default = "d_stages", alias = "K")]
    pub stages: usize,
    #[serde(default = "d_channels", alias = "C")]
    pub channels: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_lr_min")]
    pub lr_min: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_steps_per_epoch")]
    pub steps_per_epoch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_branches")]
    pub branches: usize,
    #[serde(default = "d_seq")]
    pub seq_domain: SeqDomain,
    #[serde(default = "d_state")]
    pub state_dim: usize,
    #[serde(default = "d_true")]
    pub ssh_enabled: bool,
    #[serde(default = "d_true")]
    pub rfe_enabled: bool,
    #[serde(default = "d_true")]
    pub se_enabled: bool,
    #[serde(default)]
    pub head_residual: bool,
    #[serde(default = "d_freq_count")]
    pub freq_count: usize,
    #[serde(default = "d_sigma")]
    pub freq_sigma: f64,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    /// Spectral range of the model and the disperser; defaults to the pool's extent.
    #[serde(default)]
    pub lambda_min: Option<f64>,
    #[serde(default)]
    pub lambda_max: Option<f64>,
    /// Total dispersion in pixels; defaults to `2 (n_sample − 1)`.
    #[serde(default)]
    pub d_total: Option<usize>,
    #[serde(default = "d_mask_seed")]
    pub mask_seed: u64,
    #[serde(default = "d_density")]
    pub mask_density: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Bands sensed at render time; defaults to `n_sample` evenly spread pool entries.
    #[serde(default)]
    pub render_bands: Option<Vec<f64>>,
}

impl TrainConfig {
    /// Full-scale defaults over `pool`.
    pub fn new(pool: Vec<f64>) -> Self {
        serde_json::from_value(serde_json::json!({ "wavelength_pool": pool })).expect("defaults deserialize")
    }

    /// Scaled-down settings for single-core runs.
    pub fn desk(pool: Vec<f64>) -> Self {
        TrainConfig {
            patch: 32,
            stages: 3,
            channels: 24,
            freq_count: 16,
            embed_dim: 32,
            epochs: 100,
            steps_per_epoch: 20,
            ..Self::new(pool)
        }
    }

    pub fn range(&self) -> (f64, f64) {
        let lo = self.wavelength_pool.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.wavelength_pool.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (self.lambda_min.unwrap_or(lo), self.lambda_max.unwrap_or(hi))
    }

    pub fn dispersion(&self) -> Result<DispersionModel> {
        let (lo, hi) = self.range();
        DispersionModel::new(self.d_total.unwrap_or(2 * self.n_sample.saturating_sub(1)), lo, hi)
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    /// Learning rate at 0-based step `t`: cosine from `lr` to `lr_min` at the last step.
    pub fn lr_at(&self, t: u64) -> f64 {
        let total = self.total_steps().saturating_sub(1) as usize;
        cosine_lr(self.lr, self.lr_min, t as usize, total)
    }

    pub fn render_wavelengths(&self) -> Vec<f64> {
        if let Some(b) = &self.render_bands {
            return b.clone();
        }
        let p = &self.wavelength_pool;
        let n = self.n_sample.min(p.len());
        if n <= 1 {
            return p.iter().take(n).copied().collect();
        }
        (0..n)
            .map(|k| p[((k * (p.len() - 1)) as f64 / (n - 1) as f64).round() as usize])
            .collect()
    }

    pub fn model(&self) -> ModelConfig {
        let (lo, hi) = self.range();
        ModelConfig {
            stages: self.stages,
            channels: self.channels,
            branches: self.branches,
            seq_domain: self.seq_domain,
            state_dim: self.state_dim,
            freq_count: self.freq_count,
            freq_sigma: self.freq_sigma,
            embed_dim: self.embed_dim,
            rfe_enabled: self.rfe_enabled,
            se_enabled: self.se_enabled,
            ssh_enabled: self.ssh_enabled,
            head_residual: self.head_residual,
            bands: self.n_sample,
            lambda_min: lo,
            lambda_max: hi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.wavelength_pool.is_empty() || !crate::cassi::check_increasing(&self.wavelength_pool) {
            return bad("wavelength_pool must be nonempty and strictly increasing".into());
        }
        if self.n_sample == 0 || self.n_sample > self.wavelength_pool.len() {
            return bad(format!(
                "n_sample = {} must be in 1..={}",
                self.n_sample,
                self.wavelength_pool.len()
            ));
        }
        check_spatial(self.patch, self.patch)?;
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad(format!("need 0 <= lr_min <= lr and lr > 0, got {} and {}", self.lr_min, self.lr));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be at least 1".into());
        }
        if !(self.mask_density > 0.0 && self.mask_density < 1.0) {
            return bad(format!("mask_density must be in (0, 1), got {}", self.mask_density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let (lo, hi) = self.range();
        if self.wavelength_pool.iter().any(|&l| l < lo || l > hi) {
            return bad(format!("wavelength_pool leaves the range [{lo}, {hi}]"));
        }
        let render = self.render_wavelengths();
        if render.len() != self.n_sample || !crate::cassi::check_increasing(&render) {
            return bad(format!(
                "render_bands must be {} increasing wavelengths, got {render:?}",
                self.n_sample
            ));
        }
        if render.iter().any(|&l| l < lo || l > hi) {
            return bad(format!("render_bands leave the range [{lo}, {hi}]"));
        }
        self.model().field()?;
        crate::prior::MixerConfig {
            channels: self.channels,
            branches: self.branches,
            seq_domain: self.seq_domain,
            state_dim: self.state_dim,
        }
        .validate()?;
        self.dispersion()?;
        Ok(())
    }
}

/// `n` distinct pool entries, uniformly without replacement, ascending.
pub fn sample_wavelengths<R: Rng + ?Sized>(pool: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n > pool.len() {
        return Err(Error::Contract(format!("cannot sample {n} wavelengths from a pool of {}", pool.len())));
    }
    let mut idx = sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i]).collect())
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("invalid RNG word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: TrainConfig,
    frequency_bank: Vec<f64>,
    frequency_sigma: f64,
    step: u64,
    rng: RngState,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
    blob: String,
    blob_values: usize,
}

/// Everything needed to resume training or render.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub bank: FrequencyBank,
    pub step: u64,
    pub rng: RngState,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<f64>,
    pub optimizer_step: u64,
    pub optimizer_moments: Vec<f64>,
}

impl Checkpoint {
    pub fn epoch(&self) -> u64 {
        self.step / self.config.steps_per_epoch as u64
    }

    /// Writes `manifest.json` and the `f64` blob, replacing `dir` atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = sibling(dir, "partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            frequency_bank: self.bank.freqs().to_vec(),
            frequency_sigma: self.bank.sigma(),
            step: self.step,
            rng: self.rng.clone(),
            optimizer_step: self.optimizer_step,
            tensors: self
                .names
                .iter()
                .zip(&self.shapes)
                .map(|(n, s)| TensorEntry {
                    name: n.clone(),
                    shape: s.clone(),
                })
                .collect(),
            blob: BLOB_FILE.into(),
            blob_values: self.params.len() + self.optimizer_moments.len(),
        };
        let mp = tmp.join(MANIFEST_FILE);
        fs::write(&mp, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mp, e))?;
        let bytes: Vec<u8> = self
            .params
            .iter()
            .chain(&self.optimizer_moments)
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bp = tmp.join(BLOB_FILE);
        fs::write(&bp, bytes).map_err(|e| Error::io(&bp, e))?;
        if dir.exists() {
            let old = sibling(dir, "old");
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Header {
            path: mp.clone(),
            reason: e.to_string(),
        })?;
        if m.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Header {
                path: mp,
                reason: format!("unsupported checkpoint format {}", m.format_version),
            });
        }
        let bp = dir.join(&m.blob);
        let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        if bytes.len() != m.blob_values * 8 {
            return Err(Error::LengthMismatch {
                path: bp,
                expected: m.blob_values * 8,
                actual: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let n_params: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if values.len() < n_params {
            return Err(Error::LengthMismatch {
                path: bp,
                expected: n_params * 8,
                actual: bytes.len(),
            });
        }
        let (params, moments) = values.split_at(n_params);
        Ok(Checkpoint {
            config: m.config,
            bank: FrequencyBank::from_parts(m.frequency_bank, m.frequency_sigma)?,
            step: m.step,
            rng: m.rng,
            names: m.tensors.iter().map(|t| t.name.clone()).collect(),
            shapes: m.tensors.iter().map(|t| t.shape.clone()).collect(),
            params: params.to_vec(),
            optimizer_step: m.optimizer_step,
            optimizer_moments: moments.to_vec(),
        })
    }

    /// Rebuilds the model with the stored weights and frequency bank.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model(), self.config.seed)?;
        if model.store.names() != self.names.as_slice() {
            return Err(Error::Config("checkpoint parameters do not match the configured architecture".into()));
        }
        model.store.load_flat(&self.params)?;
        model.prior.bank = self.bank.clone();
        Ok(model)
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    dir.with_file_name(format!("{name}.{suffix}"))
}

/// One optimizer step's record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub scene: usize,
    pub loss: f64,
    pub lr: f64,
    pub wavelengths: Vec<f64>,
}

/// Operator sensing `wavelengths` of an `height × width` scene through the
/// configured mask seed and disperser.
pub fn build_operator(config: &TrainConfig, wavelengths: &[f64], height: usize, width: usize) -> Result<SensingOperator> {
    let mask = CodedMask::generate(config.mask_seed, height, width, config.mask_density)?;
    SensingOperator::new(mask, config.dispersion()?, wavelengths.to_vec())
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    mask: CodedMask,
    dispersion: DispersionModel,
    scenes: Vec<SpectralCube>,
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig, scenes: Vec<SpectralCube>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model(), config.seed)?;
        let adam = Adam::new(&model.store);
        let rng = training_rng(config.seed);
        Self::assemble(config, model, adam, rng, 0, scenes)
    }

    pub fn resume(ckpt: &Checkpoint, scenes: Vec<SpectralCube>) -> Result<Self> {
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        let adam = Adam::restore(&model.store, ckpt.optimizer_step, &ckpt.optimizer_moments)?;
        let rng = ckpt.rng.restore()?;
        Self::assemble(ckpt.config.clone(), model, adam, rng, ckpt.step, scenes)
    }

    fn assemble(
        config: TrainConfig,
        model: Model,
        adam: Adam,
        rng: ChaCha8Rng,
        step: u64,
        scenes: Vec<SpectralCube>,
    ) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Config("training needs at least one scene".into()));
        }
        for (k, s) in scenes.iter().enumerate() {
            if let Some(l) = config.wavelength_pool.iter().find(|l| !s.wavelengths().contains(l)) {
                return Err(Error::Config(format!("scene {k} has no band at pool wavelength {l} nm")));
            }
            if s.height() < config.patch || s.width() < config.patch {
                return Err(Error::Config(format!(
                    "scene {k} is {}x{}, smaller than the {} patch",
                    s.height(),
                    s.width(),
                    config.patch
                )));
            }
        }
        let mask = CodedMask::generate(config.mask_seed, config.patch, config.patch, config.mask_density)?;
        let dispersion = config.dispersion()?;
        Ok(Trainer {
            config,
            model,
            adam,
            rng,
            step,
            mask,
            dispersion,
            scenes,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.config.steps_per_epoch as u64
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    pub fn mask(&self) -> &CodedMask {
        &self.mask
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (optimizer_step, optimizer_moments) = self.adam.state();
        Checkpoint {
            config: self.config.clone(),
            bank: self.model.prior.bank.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            names: self.model.store.names().to_vec(),
            shapes: self.model.store.iter().map(|(_, t)| t.shape().to_vec()).collect(),
            params: self.model.store.flatten(),
            optimizer_step,
            optimizer_moments,
        }
    }

    /// Sample, simulate, reconstruct, take one optimizer step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let cfg = &self.config;
        let scene = self.rng.random_range(0..self.scenes.len());
        let patch = crop_patch(&self.scenes[scene], cfg.patch, &mut self.rng)?;
        let lambdas = sample_wavelengths(&cfg.wavelength_pool, cfg.n_sample, &mut self.rng)?;
        let gt = patch.select(&lambdas)?;
        let op = SensingOperator::new(self.mask.clone(), self.dispersion, lambdas.clone())?;
        let y = op.forward(&gt, cfg.noise_sigma, &mut self.rng)?;
        let lr = cfg.lr_at(self.step);
        let mut tape = Tape::new();
        let p = self.model.store.bind(&mut tape);
        let out = self.model.forward(&mut tape, &p, &op, &y, &[])?;
        let loss_var = tape.l1_mean(out.recon, gt.data());
        let loss = tape.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("loss is {loss}; stage residuals {:?}", out.stages.iter().map(|s| s.residual).collect::<Vec<_>>()),
            });
        }
        let mut grads = tape.backward(loss_var);
        let grads = self.model.store.collect_grads(&p, &mut grads);
        if let Some((name, _)) = self
            .model
            .store
            .iter()
            .zip(&grads)
            .find(|(_, g)| !g.is_finite())
            .map(|((n, _), g)| (n, g))
        {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite gradient for {name}"),
            });
        }
        self.adam.update(&mut self.model.store, &grads, lr);
        let record = StepRecord {
            step: self.step,
            epoch: self.epoch(),
            scene,
            loss,
            lr,
            wavelengths: lambdas,
        };
        log::debug!(
            target: "phycosf::train",
            "step={} epoch={} scene={} loss={:.6e} lr={:.3e}",
            record.step,
            record.epoch,
            record.scene,
            record.loss,
            record.lr
        );
        self.step += 1;
        Ok(record)
    }

    /// Runs the remainder of the current epoch.
    pub fn train_epoch(&mut self) -> Result<Vec<StepRecord>> {
        let end = (self.epoch() + 1) * self.config.steps_per_epoch as u64;
        let mut records = Vec::new();
        while self.step < end.min(self.config.total_steps()) {
            records.push(self.train_step()?);
        }
        Ok(records)
    }

    /// Trains to completion, handing every finished epoch to `on_epoch`.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Trainer, &[StepRecord]) -> Result<()>) -> Result<()> {
        while !self.finished() {
            let records = self.train_epoch()?;
            on_epoch(self, &records)?;
        }
        Ok(())
    }
}

/// Trains from scratch, writing a checkpoint to `ckpt_dir` after every epoch.
pub fn train(config: TrainConfig, scenes: Vec<SpectralCube>, ckpt_dir: Option<&Path>) -> Result<(Trainer, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(config, scenes)?;
    let mut history = Vec::new();
    if let Some(dir) = ckpt_dir {
        trainer.checkpoint().save(dir)?;
    }
    trainer.run(|t, records| {
        history.extend_from_slice(records);
        let mean = records.iter().map(|r| r.loss).sum::<f64>() / records.len().max(1) as f64;
        log::info!(target: "phycosf::train", "epoch={} mean_loss={:.6e}", t.epoch(), mean);
        match ckpt_dir {
            Some(dir) => t.checkpoint().save(dir),
            None => Ok(()),
        }
    })?;
    Ok((trainer, history))
}

/// Planes `[Q][H][W]` at `queries` in the given order (duplicates allowed).
pub fn render_planes(model: &Model, op: &SensingOperator, y: &Measurement, queries: &[f64]) -> Result<Tensor> {
    if queries.is_empty() {
        return Err(Error::Contract("at least one query wavelength is required".into()));
    }
    let range = model.range();
    queries.iter().try_for_each(|&q| range.check(q))?;
    let out = model.reconstruct(op, y, queries)?;
    Ok(out.render.expect("queries were given"))
}

/// Cube at strictly increasing `queries`.
pub fn render(model: &Model, op: &SensingOperator, y: &Measurement, queries: &[f64]) -> Result<SpectralCube> {
    if !crate::cassi::check_increasing(queries) {
        return Err(Error::Contract("rendered cube wavelengths must be strictly increasing".into()));
    }
    let planes = render_planes(model, op, y, queries)?;
    SpectralCube::new(planes, queries.to_vec())
}

/// Simulates a noiseless measurement of `scene` at `sensed` through the
/// configured system and renders `queries`.
pub fn render_scene(model: &Model, config: &TrainConfig, scene: &SpectralCube, sensed: &[f64], queries: &[f64]) -> Result<SpectralCube> {
    let op = build_operator(config, sensed, scene.height(), scene.width())?;
    let y = op.forward_clean(&scene.select(sensed)?)?;
    render(model, &op, &y, queries)
}
