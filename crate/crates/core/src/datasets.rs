//! Portable cube container, synthetic continuous-spectrum scenes, patch
//! cropping and scene/wavelength splits.
//!
//! A container is a directory with `header.json` and `data.bin`; the
//! payload is little-endian `f32` in `[N][H][W]` order (band slowest).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cassi::{check_increasing, SpectralCube};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTYPE: &str = "float32-le";
pub const LAYOUT: &str = "row-major, band-slowest";
pub const HEADER_FILE: &str = "header.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    /// `[H, W, N]`.
    pub shape: [usize; 3],
    pub dtype: String,
    pub layout: String,
    pub wavelengths_nm: Vec<f64>,
}

/// Writes `data: [N][H][W]`. Wavelengths may be empty only for `N = 1`.
pub fn save_array(data: &Tensor, wavelengths: &[f64], dir: &Path) -> Result<()> {
    let (n, h, w) = match data.shape() {
        &[n, h, w] => (n, h, w),
        &[h, w] => (1, h, w),
        other => {
            return Err(Error::InvalidDimensions(format!(
                "containers hold [N][H][W] or [H][W] arrays, got {other:?}"
            )))
        }
    };
    if !(wavelengths.len() == n || (n == 1 && wavelengths.is_empty())) {
        return Err(Error::InvalidDimensions(format!(
            "{} wavelengths for {n} bands",
            wavelengths.len()
        )));
    }
    if let Some(index) = data.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinitePayload {
            path: dir.to_path_buf(),
            index,
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = Header {
        shape: [h, w, n],
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        wavelengths_nm: wavelengths.to_vec(),
    };
    let hp = dir.join(HEADER_FILE);
    fs::write(&hp, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&hp, e))?;
    let bytes: Vec<u8> = data.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let dp = dir.join(DATA_FILE);
    fs::write(&dp, bytes).map_err(|e| Error::io(&dp, e))
}

/// Reads a container as `([N][H][W], wavelengths)`.
pub fn load_array(dir: &Path) -> Result<(Tensor, Vec<f64>)> {
    let hp = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: hp.clone(),
        reason: e.to_string(),
    })?;
    let bad = |reason: String| Error::Header {
        path: hp.clone(),
        reason,
    };
    if header.dtype != DTYPE {
        return Err(bad(format!("dtype must be {DTYPE:?}, got {:?}", header.dtype)));
    }
    if header.layout != LAYOUT {
        return Err(bad(format!("layout must be {LAYOUT:?}, got {:?}", header.layout)));
    }
    let [h, w, n] = header.shape;
    if h == 0 || w == 0 || n == 0 {
        return Err(bad(format!("zero-sized shape {:?}", header.shape)));
    }
    let wl = &header.wavelengths_nm;
    if !(wl.len() == n || (n == 1 && wl.is_empty())) {
        return Err(bad(format!("{} wavelengths for {n} bands", wl.len())));
    }
    if !check_increasing(wl) {
        return Err(Error::NonMonotoneWavelengths { path: hp });
    }
    let dp = dir.join(DATA_FILE);
    let bytes = fs::read(&dp).map_err(|e| Error::io(&dp, e))?;
    let expected = n * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            path: dp,
            expected,
            actual: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n * h * w);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(Error::NonFinitePayload { path: dp, index });
        }
        data.push(f64::from(v));
    }
    Ok((Tensor::from_parts(vec![n, h, w], data), header.wavelengths_nm))
}

pub fn save_cube(cube: &SpectralCube, dir: &Path) -> Result<()> {
    save_array(cube.data(), cube.wavelengths(), dir)
}

pub fn load_cube(dir: &Path) -> Result<SpectralCube> {
    let (data, wavelengths) = load_array(dir)?;
    if wavelengths.len() != data.shape()[0] {
        return Err(Error::Header {
            path: dir.join(HEADER_FILE),
            reason: "a spectral cube needs one wavelength per band".into(),
        });
    }
    SpectralCube::new(data, wavelengths)
}

/// Writes a single plane `[H][W]` (mask or measurement).
pub fn save_plane(plane: &Tensor, dir: &Path) -> Result<()> {
    save_array(plane, &[], dir)
}

/// Reads a single-band container as `[H][W]`.
pub fn load_plane(dir: &Path) -> Result<Tensor> {
    let (data, _) = load_array(dir)?;
    let (n, h, w) = data.dims3();
    if n != 1 {
        return Err(Error::Header {
            path: dir.join(HEADER_FILE),
            reason: format!("expected a single-band container, found {n} bands"),
        });
    }
    data.reshape(&[h, w])
}

/// Uniform top-left corner; wavelengths are kept.
pub fn crop_patch<R: Rng + ?Sized>(cube: &SpectralCube, size: usize, rng: &mut R) -> Result<SpectralCube> {
    let (h, w) = (cube.height(), cube.width());
    if size == 0 || size > h.min(w) {
        return Err(Error::Contract(format!("patch size {size} does not fit a {h}x{w} scene")));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    crop_at(cube, top, left, size)
}

pub fn crop_at(cube: &SpectralCube, top: usize, left: usize, size: usize) -> Result<SpectralCube> {
    let (h, w) = (cube.height(), cube.width());
    if top + size > h || left + size > w {
        return Err(Error::Contract(format!(
            "patch {size} at ({top}, {left}) exceeds a {h}x{w} scene"
        )));
    }
    let n = cube.bands();
    let mut data = Vec::with_capacity(n * size * size);
    for b in 0..n {
        let band = cube.band(b);
        for i in top..top + size {
            data.extend_from_slice(&band[i * w + left..i * w + left + size]);
        }
    }
    SpectralCube::new(Tensor::from_parts(vec![n, size, size], data), cube.wavelengths().to_vec())
}

/// Parameters of a random scene whose spectrum is analytic in λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_blobs: usize,
    pub n_peaks: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Peak {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// One spatial Gaussian with its own spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub sigma_row: f64,
    pub sigma_col: f64,
    pub peaks: Vec<Peak>,
}

impl Blob {
    pub fn spatial(&self, i: usize, j: usize) -> f64 {
        let dr = (i as f64 - self.row) / self.sigma_row;
        let dc = (j as f64 - self.col) / self.sigma_col;
        (-0.5 * (dr * dr + dc * dc)).exp()
    }

    pub fn spectrum(&self, lambda: f64) -> f64 {
        self.peaks
            .iter()
            .map(|p| p.amplitude * (-(lambda - p.center).powi(2) / (2.0 * p.width * p.width)).exp())
            .sum()
    }

    /// Upper bound on `|d²/dλ² spectrum|` over all λ.
    pub fn curvature_bound(&self) -> f64 {
        // |d²/dλ² a·exp(−u²/2w²)| = a/w²·|u²/w² − 1|·exp(−u²/2w²) ≤ a/w²
        self.peaks.iter().map(|p| p.amplitude / (p.width * p.width)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub blobs: Vec<Blob>,
}

pub const PEAK_WIDTH_NM: (f64, f64) = (25.0, 60.0);
pub const PEAK_AMPLITUDE: (f64, f64) = (0.2, 0.6);

impl SyntheticScene {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        if spec.height == 0 || spec.width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "synthetic scene must be nonempty, got {}x{}",
                spec.height, spec.width
            )));
        }
        if !(spec.lambda_min < spec.lambda_max) {
            return Err(Error::Config("synthetic spectral range must be increasing".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (h, w) = (spec.height as f64, spec.width as f64);
        let extent = h.min(w);
        let blobs = (0..spec.n_blobs)
            .map(|_| Blob {
                row: rng.random_range(0.0..h),
                col: rng.random_range(0.0..w),
                sigma_row: rng.random_range(0.08 * extent..0.3 * extent),
                sigma_col: rng.random_range(0.08 * extent..0.3 * extent),
                peaks: (0..spec.n_peaks)
                    .map(|_| Peak {
                        center: rng.random_range(spec.lambda_min..spec.lambda_max),
                        width: rng.random_range(PEAK_WIDTH_NM.0..PEAK_WIDTH_NM.1),
                        amplitude: rng.random_range(PEAK_AMPLITUDE.0..PEAK_AMPLITUDE.1),
                    })
                    .collect(),
            })
            .collect();
        Ok(SyntheticScene {
            spec: spec.clone(),
            blobs,
        })
    }

    /// Unclipped intensity at pixel `(i, j)`.
    pub fn raw(&self, i: usize, j: usize, lambda: f64) -> f64 {
        self.blobs.iter().map(|b| b.spatial(i, j) * b.spectrum(lambda)).sum()
    }

    pub fn value(&self, i: usize, j: usize, lambda: f64) -> f64 {
        self.raw(i, j, lambda).clamp(0.0, 1.0)
    }

    /// Upper bound on `|∂²/∂λ² raw(i, j, ·)|`.
    pub fn curvature_bound(&self, i: usize, j: usize) -> f64 {
        self.blobs.iter().map(|b| b.spatial(i, j) * b.curvature_bound()).sum()
    }

    pub fn render(&self, grid: &[f64]) -> Result<SpectralCube> {
        if !check_increasing(grid) {
            return Err(Error::Contract("synthetic grid must be strictly increasing".into()));
        }
        for &l in grid {
            if !(l >= self.spec.lambda_min && l <= self.spec.lambda_max) {
                return Err(Error::OutOfRange {
                    value: l,
                    min: self.spec.lambda_min,
                    max: self.spec.lambda_max,
                });
            }
        }
        let (h, w) = (self.spec.height, self.spec.width);
        let mut data = Vec::with_capacity(grid.len() * h * w);
        for &l in grid {
            let spectra: Vec<f64> = self.blobs.iter().map(|b| b.spectrum(l)).collect();
            for i in 0..h {
                for j in 0..w {
                    let v: f64 = self.blobs.iter().zip(&spectra).map(|(b, s)| b.spatial(i, j) * s).sum();
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        SpectralCube::new(Tensor::from_parts(vec![grid.len(), h, w], data), grid.to_vec())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, grid: &[f64]) -> Result<SpectralCube> {
    SyntheticScene::new(spec)?.render(grid)
}

/// `count` evenly spaced wavelengths including both ends.
pub fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..count)
            .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSplit {
    pub train_scenes: Vec<String>,
    pub render_scenes: Vec<String>,
    pub train_lambdas: Vec<f64>,
    pub holdout_lambdas: Vec<f64>,
}

/// Positions of the held-out wavelengths in the 16-point desk grid.
pub const DESK_HOLDOUT: [usize; 4] = [2, 6, 9, 13];

impl SceneSplit {
    /// Scenes `scene_00..` with the first `train` for training; grid split
    /// by `holdout` indices.
    pub fn new(scenes: usize, train: usize, grid: &[f64], holdout: &[usize]) -> Result<Self> {
        if train > scenes {
            return Err(Error::Config(format!("{train} training scenes out of {scenes}")));
        }
        if let Some(&bad) = holdout.iter().find(|&&k| k >= grid.len()) {
            return Err(Error::Config(format!("held-out index {bad} outside a {}-point grid", grid.len())));
        }
        let ids: Vec<String> = (0..scenes).map(scene_id).collect();
        let split = SceneSplit {
            train_scenes: ids[..train].to_vec(),
            render_scenes: ids[train..].to_vec(),
            train_lambdas: grid
                .iter()
                .enumerate()
                .filter(|(k, _)| !holdout.contains(k))
                .map(|(_, &l)| l)
                .collect(),
            holdout_lambdas: holdout.iter().map(|&k| grid[k]).collect(),
        };
        split.validate()?;
        Ok(split)
    }

    /// 16 scenes (12 train, 4 render) over `linspace(450, 650, 16)` with four
    /// interior wavelengths held out.
    pub fn desk() -> Self {
        Self::new(16, 12, &linspace(450.0, 650.0, 16), &DESK_HOLDOUT).expect("desk split is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.train_scenes.iter().find(|s| self.render_scenes.contains(s)) {
            return Err(Error::Config(format!("scene {s} is in both train and render lists")));
        }
        if let Some(l) = self.train_lambdas.iter().find(|l| self.holdout_lambdas.contains(l)) {
            return Err(Error::Config(format!("wavelength {l} is both trained and held out")));
        }
        if !check_increasing(&self.train_lambdas) {
            return Err(Error::Config("training wavelengths must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Train and held-out wavelengths merged in increasing order.
    pub fn grid(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.train_lambdas.iter().chain(&self.holdout_lambdas).copied().collect();
        all.sort_by(f64::total_cmp);
        all
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: SceneSplit = serde_json::from_str(&text)?;
        split.validate()?;
        Ok(split)
    }
}

pub fn scene_id(k: usize) -> String {
    format!("scene_{k:02}")
}

/// Scenes stored as `<root>/scenes/<id>/` cube containers.
pub fn scene_dir(root: &Path, id: &str) -> PathBuf {
    root.join("scenes").join(id)
}

pub fn load_scenes(root: &Path, ids: &[String]) -> Result<Vec<SpectralCube>> {
    ids.iter().map(|id| load_cube(&scene_dir(root, id))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            seed: 5,
            height: 12,
            width: 10,
            n_blobs: 4,
            n_peaks: 2,
            lambda_min: 450.0,
            lambda_max: 650.0,
        }
    }

    #[test]
    fn analytic_consistency_across_grids() {
        let a = generate_synthetic(&spec(), &[450.0, 500.0, 560.0]).unwrap();
        let b = generate_synthetic(&spec(), &[470.0, 560.0, 640.0]).unwrap();
        assert_eq!(a.band(2), b.band(1));
        assert!(a.data().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn out_of_range_grid_rejected() {
        assert!(generate_synthetic(&spec(), &[440.0]).is_err());
    }

    #[test]
    fn desk_split_shape() {
        let s = SceneSplit::desk();
        assert_eq!(s.train_scenes.len(), 12);
        assert_eq!(s.render_scenes.len(), 4);
        assert_eq!(s.train_lambdas.len(), 12);
        assert_eq!(s.holdout_lambdas.len(), 4);
        assert_eq!(s.train_lambdas[0], 450.0);
        assert_eq!(*s.train_lambdas.last().unwrap(), 650.0);
        assert_eq!(s.grid(), linspace(450.0, 650.0, 16));
    }

    #[test]
    fn crop_whole_scene_is_identity() {
        let cube = generate_synthetic(&spec(), &[500.0, 600.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(crop_patch(&cube, 11, &mut rng).is_err());
        let square = crop_at(&cube, 0, 0, 10).unwrap();
        let whole = crop_patch(&square, 10, &mut rng).unwrap();
        assert_eq!(whole, square);
    }
}
