//! Wavelength encoding and the per-wavelength synthesis head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::prior::blocks::Conv;
use crate::tensor::Tensor;

/// Closed wavelength interval the model is defined on, in nm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRange {
    pub min: f64,
    pub max: f64,
}

impl SpectralRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Config(format!("invalid spectral range [{min}, {max}]")));
        }
        Ok(SpectralRange { min, max })
    }

    pub fn check(&self, lambda: f64) -> Result<()> {
        if lambda.is_finite() && lambda >= self.min && lambda <= self.max {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                value: lambda,
                min: self.min,
                max: self.max,
            })
        }
    }

    pub fn normalize(&self, lambda: f64) -> Result<f64> {
        normalize_lambda(lambda, self.min, self.max)
    }
}

/// Maps `[min, max]` affinely onto `[-1, 1]`.
pub fn normalize_lambda(lambda: f64, min: f64, max: f64) -> Result<f64> {
    SpectralRange::new(min, max)?.check(lambda)?;
    Ok(2.0 * (lambda - min) / (max - min) - 1.0)
}

/// Fixed Gaussian frequencies of the sinusoidal wavelength encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    freqs: Vec<f64>,
    sigma: f64,
}

impl FrequencyBank {
    pub fn sample<R: Rng + ?Sized>(m: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if m == 0 || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "frequency bank needs m >= 1 and sigma > 0, got m={m}, sigma={sigma}"
            )));
        }
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        Ok(FrequencyBank {
            freqs: (0..m).map(|_| normal.sample(rng)).collect(),
            sigma,
        })
    }

    pub fn from_parts(freqs: Vec<f64>, sigma: f64) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("frequency bank must be nonempty and finite".into()));
        }
        Ok(FrequencyBank { freqs, sigma })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// `[sin(2π λ̂ b_1) … sin(2π λ̂ b_m), cos(2π λ̂ b_1) … cos(2π λ̂ b_m)]`.
    pub fn encode(&self, lambda_hat: f64) -> Vec<f64> {
        let phase = |b: f64| 2.0 * std::f64::consts::PI * lambda_hat * b;
        let sin = self.freqs.iter().map(|&b| phase(b).sin());
        let cos = self.freqs.iter().map(|&b| phase(b).cos());
        sin.chain(cos).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub freq_count: usize,
    pub freq_sigma: f64,
    pub embed_dim: usize,
    pub rfe_enabled: bool,
    pub se_enabled: bool,
    pub ssh_enabled: bool,
    /// Adds the linearly interpolated data-step estimate to the head output.
    pub head_residual: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            freq_count: 32,
            freq_sigma: 1.0,
            embed_dim: 64,
            rfe_enabled: true,
            se_enabled: true,
            ssh_enabled: true,
            head_residual: false,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freq_count == 0 || self.embed_dim == 0 {
            return Err(Error::Config("freq_count and embed_dim must be at least 1".into()));
        }
        if !(self.freq_sigma > 0.0 && self.freq_sigma.is_finite()) {
            return Err(Error::Config(format!("freq_sigma must be positive, got {}", self.freq_sigma)));
        }
        Ok(())
    }

    /// Width of the wavelength code fed to the embedding.
    pub fn code_dim(&self) -> usize {
        if self.rfe_enabled {
            2 * self.freq_count
        } else {
            1
        }
    }

    /// Width of the code the synthesis head sees.
    pub fn condition_dim(&self) -> usize {
        if self.se_enabled {
            self.embed_dim
        } else {
            self.code_dim()
        }
    }
}

/// Encodes normalized wavelengths into `[Q][code_dim]`.
pub fn wavelength_codes(bank: &FrequencyBank, cfg: &HeadConfig, lambda_hats: &[f64]) -> Tensor {
    let rows: Vec<f64> = if cfg.rfe_enabled {
        lambda_hats.iter().flat_map(|&l| bank.encode(l)).collect()
    } else {
        lambda_hats.to_vec()
    };
    Tensor::from_parts(vec![lambda_hats.len(), cfg.code_dim()], rows)
}

/// Two-layer MLP with GELU: `code_dim → D → D`.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl SpectralEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, dim: usize, rng: &mut R) -> Self {
        SpectralEmbedding {
            w1: store.add_uniform("se.fc1.weight", &[dim, input], input, rng),
            b1: store.add_uniform("se.fc1.bias", &[dim], input, rng),
            w2: store.add_uniform("se.fc2.weight", &[dim, dim], dim, rng),
            b2: store.add_uniform("se.fc2.bias", &[dim], dim, rng),
        }
    }

    /// `codes: [Q][in] -> [Q][D]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, codes: Var) -> Var {
        let h = tape.linear(codes, p.var(self.w1), Some(p.var(self.b1)));
        let h = tape.gelu(h);
        tape.linear(h, p.var(self.w2), Some(p.var(self.b2)))
    }
}

/// `(f, e) ↦ 1×1(GELU(3×3(GELU(3×3([f; e])))))` with one output channel.
///
/// The first convolution's weight is kept as separate feature and code
/// slices so the feature half runs once per latent map and the code half is
/// evaluated on constant planes.
#[derive(Clone, Debug)]
pub struct SynthesisHead {
    pub w_feat: ParamId,
    pub w_code: ParamId,
    pub b1: ParamId,
    pub conv2: Conv,
    pub conv3: Conv,
    pub hidden: usize,
}

impl SynthesisHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, feat: usize, cond: usize, rng: &mut R) -> Self {
        let hidden = feat + cond;
        let fan_in = hidden * 9;
        SynthesisHead {
            w_feat: store.add_uniform("head.conv1.weight_feat", &[hidden, feat, 3, 3], fan_in, rng),
            w_code: store.add_uniform("head.conv1.weight_code", &[hidden, cond, 3, 3], fan_in, rng),
            b1: store.add_uniform("head.conv1.bias", &[hidden], fan_in, rng),
            conv2: Conv::new(store, "head.conv2", hidden, hidden, 3, ConvSpec::SAME3, true, rng),
            conv3: Conv::new(store, "head.conv3", hidden, 1, 1, ConvSpec::POINTWISE, true, rng),
            hidden,
        }
    }

    /// Feature half of the first convolution, shared across queries.
    pub fn prepare(&self, tape: &mut Tape, p: &Bound, f: Var) -> Var {
        tape.conv2d(f, p.var(self.w_feat), Some(p.var(self.b1)), ConvSpec::SAME3)
    }

    /// One intensity plane `[1][H][W]` for the code `e: [cond]`.
    pub fn plane(&self, tape: &mut Tape, p: &Bound, prepared: Var, e: Var) -> Var {
        let (_, h, w) = tape.value(prepared).dims3();
        let code = tape.conv_constant_planes(e, p.var(self.w_code), h, w);
        let a = tape.add(prepared, code);
        let a = tape.gelu(a);
        let a = self.conv2.forward(tape, p, a);
        let a = tape.gelu(a);
        self.conv3.forward(tape, p, a)
    }

    pub fn synthesize(&self, tape: &mut Tape, p: &Bound, f: Var, e: Var) -> Var {
        let prepared = self.prepare(tape, p, f);
        self.plane(tape, p, prepared, e)
    }
}

/// Wavelength-free decoder emitting a fixed number of bands at once; the
/// stand-in for the synthesis head when it is ablated.
#[derive(Clone, Debug)]
pub struct DiscreteHead {
    pub conv1: Conv,
    pub conv2: Conv,
    pub conv3: Conv,
    pub bands: usize,
}

impl DiscreteHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, feat: usize, bands: usize, rng: &mut R) -> Self {
        DiscreteHead {
            conv1: Conv::new(store, "dhead.conv1", feat, feat, 3, ConvSpec::SAME3, true, rng),
            conv2: Conv::new(store, "dhead.conv2", feat, feat, 3, ConvSpec::SAME3, true, rng),
            conv3: Conv::new(store, "dhead.conv3", feat, bands, 1, ConvSpec::POINTWISE, true, rng),
            bands,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, f: Var) -> Var {
        let a = self.conv1.forward(tape, p, f);
        let a = tape.gelu(a);
        let a = self.conv2.forward(tape, p, a);
        let a = tape.gelu(a);
        self.conv3.forward(tape, p, a)
    }
}

/// Piecewise-linear interpolation weights `[Q][N]` from increasing `knots`
/// to `queries`, constant beyond the end knots.
pub fn interpolation_weights(knots: &[f64], queries: &[f64]) -> Tensor {
    let n = knots.len();
    let mut w = vec![0.0; queries.len() * n];
    for (q, &lam) in queries.iter().enumerate() {
        let row = &mut w[q * n..(q + 1) * n];
        if n == 1 || lam <= knots[0] {
            row[0] = 1.0;
        } else if lam >= knots[n - 1] {
            row[n - 1] = 1.0;
        } else {
            let hi = knots.partition_point(|&k| k <= lam).min(n - 1);
            let lo = hi - 1;
            let t = (lam - knots[lo]) / (knots[hi] - knots[lo]);
            row[lo] = 1.0 - t;
            row[hi] = t;
        }
    }
    Tensor::from_parts(vec![queries.len(), n], w)
}

/// Interpolates the bands of `x: [N][H][W]` sampled at `knots` to `queries`.
pub fn interpolate_bands(tape: &mut Tape, x: Var, knots: &[f64], queries: &[f64]) -> Var {
    let weights = interpolation_weights(knots, queries);
    let kernel = tape.constant(weights.reshape(&[queries.len(), knots.len(), 1, 1]).expect("sized"));
    tape.conv2d(x, kernel, None, ConvSpec::POINTWISE)
}
