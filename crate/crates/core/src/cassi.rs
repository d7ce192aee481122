//! Single-disperser CASSI forward model.
//!
//! A 2D coded mask modulates every band of the scene; a disperser shifts band
//! `n` right by `shift(λ_n)` pixels and the sensor sums the shifted bands into
//! an `H × (W + max shift)` snapshot. The resulting operator `Φ` is applied
//! matrix-free; [`SensingOperator::dense_matrix`] materialises it for small
//! problems.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A hyperspectral cube stored band-major, `[N][H][W]`, with one wavelength
/// (nm) per band.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube {
    data: Tensor,
    wavelengths: Vec<f64>,
}

pub(crate) fn check_increasing(wl: &[f64]) -> bool {
    wl.iter().all(|v| v.is_finite()) && wl.windows(2).all(|p| p[0] < p[1])
}

impl SpectralCube {
    pub fn new(data: Tensor, wavelengths: Vec<f64>) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::InvalidDimensions(format!(
                "cube data must be [N][H][W], got {:?}",
                data.shape()
            )));
        }
        let (n, h, w) = data.dims3();
        if h == 0 || w == 0 || n == 0 {
            return Err(Error::InvalidDimensions(format!("empty cube {n}x{h}x{w}")));
        }
        if n != wavelengths.len() {
            return Err(Error::InvalidDimensions(format!(
                "{n} bands but {} wavelengths",
                wavelengths.len()
            )));
        }
        if !check_increasing(&wavelengths) {
            return Err(Error::Contract("wavelengths must be strictly increasing".into()));
        }
        if !data.is_finite() {
            return Err(Error::Contract("cube contains non-finite values".into()));
        }
        Ok(SpectralCube { data, wavelengths })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Value at row `i`, column `j` of band `n`.
    pub fn get(&self, i: usize, j: usize, n: usize) -> f64 {
        self.data.data()[(n * self.height() + i) * self.width() + j]
    }

    pub fn band(&self, n: usize) -> &[f64] {
        self.data.channel(n)
    }

    /// Sub-cube holding the listed wavelengths, which must be present exactly.
    pub fn select(&self, wavelengths: &[f64]) -> Result<SpectralCube> {
        let (_, h, w) = self.data.dims3();
        let mut data = Vec::with_capacity(wavelengths.len() * h * w);
        for &wl in wavelengths {
            let n = self
                .wavelengths
                .iter()
                .position(|&v| v == wl)
                .ok_or_else(|| Error::Contract(format!("cube has no band at {wl} nm")))?;
            data.extend_from_slice(self.band(n));
        }
        SpectralCube::new(
            Tensor::from_parts(vec![wavelengths.len(), h, w], data),
            wavelengths.to_vec(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodedMask {
    values: Tensor,
    seed: u64,
    density: f64,
}

impl CodedMask {
    /// Binary mask with each entry independently 1 with probability `density`.
    pub fn generate(seed: u64, h: usize, w: usize, density: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDimensions(format!("mask must be at least 1x1, got {h}x{w}")));
        }
        if !(density > 0.0 && density < 1.0) {
            return Err(Error::Contract(format!("mask density must lie in (0, 1), got {density}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w)
            .map(|_| if rng.random::<f64>() < density { 1.0 } else { 0.0 })
            .collect();
        Ok(CodedMask {
            values: Tensor::from_parts(vec![h, w], data),
            seed,
            density,
        })
    }

    /// Wrap explicit transmittances in `[0, 1]`.
    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.is_empty() {
            return Err(Error::InvalidDimensions(format!("mask must be [H][W], got {:?}", values.shape())));
        }
        if values.data().iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("mask values must be finite and within [0, 1]".into()));
        }
        let density = values.data().iter().sum::<f64>() / values.len() as f64;
        Ok(CodedMask {
            values,
            seed: 0,
            density,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }
}

/// Linear dispersion law: `shift(λ) = round(d_total · (λ − λ_min) / (λ_max − λ_min))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionModel {
    pub d_total: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl DispersionModel {
    pub fn new(d_total: usize, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min < lambda_max) {
            return Err(Error::Config(format!(
                "dispersion range must satisfy λ_min < λ_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(DispersionModel {
            d_total,
            lambda_min,
            lambda_max,
        })
    }

    /// Two pixels per band between the first and last of `n_bands`.
    pub fn default_for(n_bands: usize, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        Self::new(2 * n_bands.saturating_sub(1), lambda_min, lambda_max)
    }

    pub fn shift(&self, lambda: f64) -> Result<usize> {
        if !(lambda >= self.lambda_min && lambda <= self.lambda_max) {
            return Err(Error::OutOfRange {
                value: lambda,
                min: self.lambda_min,
                max: self.lambda_max,
            });
        }
        let t = (lambda - self.lambda_min) / (self.lambda_max - self.lambda_min);
        Ok((self.d_total as f64 * t).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    data: Tensor,
    noise_sigma: f64,
}

impl Measurement {
    pub fn new(data: Tensor, noise_sigma: f64) -> Result<Self> {
        if data.shape().len() != 2 {
            return Err(Error::InvalidDimensions(format!(
                "measurement must be [H][W~], got {:?}",
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Contract("measurement contains non-finite values".into()));
        }
        Ok(Measurement { data, noise_sigma })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Largest dense operator [`SensingOperator::dense_matrix`] will build, in
/// matrix entries (`H·W~ × H·W·N`).
pub const DENSE_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SensingOperator {
    mask: CodedMask,
    dispersion: DispersionModel,
    sensed: Vec<f64>,
    shifts: Vec<usize>,
}

impl SensingOperator {
    pub fn new(mask: CodedMask, dispersion: DispersionModel, sensed: Vec<f64>) -> Result<Self> {
        if sensed.is_empty() {
            return Err(Error::Contract("at least one sensed wavelength is required".into()));
        }
        if !check_increasing(&sensed) {
            return Err(Error::Contract("sensed wavelengths must be strictly increasing".into()));
        }
        let shifts = sensed
            .iter()
            .map(|&l| dispersion.shift(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(SensingOperator {
            mask,
            dispersion,
            sensed,
            shifts,
        })
    }

    pub fn mask(&self) -> &CodedMask {
        &self.mask
    }

    pub fn dispersion(&self) -> &DispersionModel {
        &self.dispersion
    }

    pub fn sensed_wavelengths(&self) -> &[f64] {
        &self.sensed
    }

    pub fn shifts(&self) -> &[usize] {
        &self.shifts
    }

    pub fn bands(&self) -> usize {
        self.sensed.len()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Measurement width `W + shift(max sensed λ)`.
    pub fn measurement_width(&self) -> usize {
        self.width() + self.shifts.iter().copied().max().unwrap_or(0)
    }

    /// Pixel shift of an arbitrary wavelength under this operator's disperser.
    pub fn band_shift(&self, lambda: f64) -> Result<usize> {
        self.dispersion.shift(lambda)
    }

    fn check_array(&self, x: &Tensor) -> Result<()> {
        let want = [self.bands(), self.height(), self.width()];
        if x.shape() != want {
            return Err(Error::Contract(format!(
                "array shape {:?} does not match operator shape {:?}",
                x.shape(),
                want
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Tensor) -> Result<()> {
        let want = [self.height(), self.measurement_width()];
        if y.shape() != want {
            return Err(Error::Contract(format!(
                "measurement shape {:?} does not match operator shape {:?}",
                y.shape(),
                want
            )));
        }
        Ok(())
    }

    /// `Φx` for a band-major array `[N][H][W]`, noiseless.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_array(x)?;
        let (h, w, wt) = (self.height(), self.width(), self.measurement_width());
        let m = self.mask.values().data();
        let mut y = vec![0.0; h * wt];
        for (n, &s) in self.shifts.iter().enumerate() {
            let band = x.channel(n);
            for i in 0..h {
                let row = &mut y[i * wt + s..i * wt + s + w];
                for j in 0..w {
                    row[j] += band[i * w + j] * m[i * w + j];
                }
            }
        }
        Ok(Tensor::from_parts(vec![h, wt], y))
    }

    /// `Φᵀy`: each band reads the measurement at its shift and re-applies the mask.
    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.check_measurement(y)?;
        let (h, w, wt) = (self.height(), self.width(), self.measurement_width());
        let m = self.mask.values().data();
        let mut x = vec![0.0; self.bands() * h * w];
        for (n, &s) in self.shifts.iter().enumerate() {
            let band = &mut x[n * h * w..(n + 1) * h * w];
            for i in 0..h {
                let row = &y.data()[i * wt + s..i * wt + s + w];
                for j in 0..w {
                    band[i * w + j] = row[j] * m[i * w + j];
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.bands(), h, w], x))
    }

    /// Diagonal of `ΦΦᵀ`: `Σ_n M~(i, j, n)²`, shape `[H][W~]`.
    pub fn phi_phit_diag(&self) -> Tensor {
        let (h, w, wt) = (self.height(), self.width(), self.measurement_width());
        let m = self.mask.values().data();
        let mut d = vec![0.0; h * wt];
        for &s in &self.shifts {
            for i in 0..h {
                for j in 0..w {
                    d[i * wt + s + j] += m[i * w + j] * m[i * w + j];
                }
            }
        }
        Tensor::from_parts(vec![h, wt], d)
    }

    /// Simulate a snapshot of `cube`; `noise_sigma = 0` disables noise.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        cube: &SpectralCube,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Measurement> {
        if cube.wavelengths() != self.sensed_wavelengths() {
            return Err(Error::Contract(format!(
                "cube wavelengths {:?} differ from sensed wavelengths {:?}",
                cube.wavelengths(),
                self.sensed
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Contract(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        let mut y = self.apply(cube.data())?;
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
            for v in y.data_mut() {
                *v += normal.sample(rng);
            }
        }
        Measurement::new(y, noise_sigma)
    }

    /// Noiseless [`SensingOperator::forward`].
    pub fn forward_clean(&self, cube: &SpectralCube) -> Result<Measurement> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.forward(cube, 0.0, &mut unused)
    }

    /// Explicit `Φ` with rows indexed `i·W~ + j` and columns `n·H·W + i·W + j`.
    pub fn dense_matrix(&self) -> Result<DenseMatrix> {
        let (h, w, wt, nb) = (self.height(), self.width(), self.measurement_width(), self.bands());
        let entries = (h * wt) * (nb * h * w);
        if entries > DENSE_LIMIT {
            return Err(Error::TooLarge {
                entries,
                limit: DENSE_LIMIT,
            });
        }
        let (rows, cols) = (h * wt, nb * h * w);
        let mut data = vec![0.0; rows * cols];
        let m = self.mask.values().data();
        for (n, &s) in self.shifts.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    data[(i * wt + j + s) * cols + n * h * w + i * w + j] = m[i * w + j];
                }
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matvec_transposed(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yv) in self.data.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yv;
            }
        }
        out
    }
}
